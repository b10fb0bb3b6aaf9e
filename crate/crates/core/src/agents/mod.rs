//! Agent roles over a pluggable text-completion backend.
//!
//! Every role builds a prompt from a [`PromptContext`], sends it with a call
//! tag of the form `iterNN/schema`, `iterNN/generate/K` or `iterNN/filter`,
//! and parses the reply. Nothing a backend returns reaches the executor
//! without going through spec extraction and validation.

mod heuristic;
mod prompts;
mod recording;
mod remote;
mod scripted;

pub use heuristic::HeuristicBackend;
pub use prompts::{
    filter_prompt, generation_prompt, render_accepted, schema_prompt, CANDIDATES_CLOSE,
    CANDIDATES_OPEN, FEEDBACK_HEADER, GRAMMAR,
};
pub use recording::{transcript_file_name, RecordingBackend, Transcript};
pub use remote::{RemoteBackend, RemoteConfig};
pub use scripted::ScriptedBackend;

use std::collections::{HashMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use crate::dsl::{extract_specs, find_json, validate_spec, CanonicalKey, FeatureSpec, ValidationLimits};
use crate::rdb::{RelationalDatabase, SchemaSubset, SchemaView, SubsetCorrection, TaskSpec};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("no scripted response for call {0}")]
    NoResponse(String),
    #[error("http error: {0}")]
    Http(String),
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    Malformed(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("fixture {path}: {message}")]
    Fixture { path: String, message: String },
}

/// Text completion. Implementations must tolerate concurrent calls.
pub trait AgentBackend: Send + Sync {
    fn complete(&self, prompt: &str, temperature: f64, call_tag: &str)
        -> Result<String, BackendError>;
}

impl<B: AgentBackend + ?Sized> AgentBackend for &B {
    fn complete(&self, prompt: &str, temperature: f64, call_tag: &str) -> Result<String, BackendError> {
        (**self).complete(prompt, temperature, call_tag)
    }
}

impl<B: AgentBackend + ?Sized> AgentBackend for Box<B> {
    fn complete(&self, prompt: &str, temperature: f64, call_tag: &str) -> Result<String, BackendError> {
        (**self).complete(prompt, temperature, call_tag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Schema,
    Generate,
    Filter,
}

impl Role {
    /// Role encoded in a call tag, if any.
    pub fn of_tag(tag: &str) -> Option<Role> {
        match tag.split('/').nth(1)? {
            "schema" => Some(Role::Schema),
            "generate" => Some(Role::Generate),
            "filter" => Some(Role::Filter),
            _ => None,
        }
    }
}

pub fn schema_tag(iteration: usize) -> String {
    format!("iter{iteration:02}/schema")
}

pub fn generate_tag(iteration: usize, instance: usize) -> String {
    format!("iter{iteration:02}/generate/{instance}")
}

pub fn filter_tag(iteration: usize) -> String {
    format!("iter{iteration:02}/filter")
}

/// Everything a prompt is built from. Prompts are pure functions of this.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptContext {
    pub schema: String,
    pub task: String,
    pub iteration: usize,
    pub accepted: Vec<FeatureSpec>,
    /// Rendered feedback ledger; `None` omits the feedback section.
    pub feedback: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemaSelection {
    pub subset: SchemaSubset,
    pub corrections: Vec<SubsetCorrection>,
    /// Why the full schema was used instead of the agent's answer.
    pub degraded: Option<String>,
}

fn parse_subset(text: &str) -> Option<SchemaSubset> {
    let v = find_json(text, |v| v.get("tables").is_some_and(Json::is_object))?;
    let mut subset = SchemaSubset::default();
    for (table, cols) in v["tables"].as_object()? {
        let cols = cols
            .as_array()?
            .iter()
            .map(|c| c.as_str().map(str::to_string))
            .collect::<Option<_>>()?;
        subset.tables.insert(table.clone(), cols);
    }
    Some(subset)
}

/// Schema selection. With `skip` the full schema is returned without a backend call.
/// An unparseable answer also falls back to the full schema.
pub fn select_schema(
    backend: &dyn AgentBackend,
    ctx: &PromptContext,
    db: &RelationalDatabase,
    task: &TaskSpec,
    temperature: f64,
    skip: bool,
) -> Result<SchemaSelection, BackendError> {
    let full = SchemaSubset::full(db);
    if skip {
        return Ok(SchemaSelection {
            subset: full,
            corrections: Vec::new(),
            degraded: None,
        });
    }
    let reply = backend.complete(&schema_prompt(ctx), temperature, &schema_tag(ctx.iteration))?;
    match parse_subset(&reply) {
        Some(proposed) => {
            let (subset, corrections) = proposed.corrected(db, task);
            for c in &corrections {
                log::warn!("schema selection corrected: {c:?}");
            }
            Ok(SchemaSelection {
                subset,
                corrections,
                degraded: None,
            })
        }
        None => {
            log::warn!("schema selection reply unparseable; using the full schema");
            Ok(SchemaSelection {
                subset: full,
                corrections: Vec::new(),
                degraded: Some("unparseable schema selection reply".into()),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub spec: FeatureSpec,
    pub key: CanonicalKey,
    pub instance: usize,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoolError {
    pub instance: usize,
    /// Position in the instance's array; `None` when no array was found.
    pub index: Option<usize>,
    pub name: Option<String>,
    pub message: String,
}

/// Validated candidates of one iteration, unique by canonical key.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GenerationPool {
    pub candidates: Vec<Candidate>,
    pub errors: Vec<PoolError>,
    /// Valid proposals dropped as duplicates of earlier pool entries.
    pub duplicates: usize,
    /// Valid proposals dropped because they equal an accepted feature.
    pub already_accepted: usize,
}

impl GenerationPool {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn specs(&self) -> Vec<FeatureSpec> {
        self.candidates.iter().map(|c| c.spec.clone()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Candidate> {
        self.candidates.iter().find(|c| c.spec.name == name)
    }

    /// Adds proposals from one instance, in order. Names are made unique
    /// against `taken` and the pool by appending `_2`, `_3`, ...
    pub fn absorb(
        &mut self,
        instance: usize,
        iteration: usize,
        specs: Vec<FeatureSpec>,
        accepted: &HashSet<CanonicalKey>,
        taken: &mut HashSet<String>,
    ) {
        let mut seen: HashSet<CanonicalKey> = self.candidates.iter().map(|c| c.key.clone()).collect();
        for mut spec in specs {
            let key = spec.canonical_key();
            if accepted.contains(&key) {
                self.already_accepted += 1;
                continue;
            }
            if !seen.insert(key.clone()) {
                self.duplicates += 1;
                continue;
            }
            if taken.contains(&spec.name) {
                let base = spec.name.clone();
                let mut n = 2;
                while taken.contains(&format!("{base}_{n}")) {
                    n += 1;
                }
                spec.name = format!("{base}_{n}");
            }
            taken.insert(spec.name.clone());
            self.candidates.push(Candidate {
                spec,
                key,
                instance,
                iteration,
            });
        }
    }
}

/// Extracts and validates one instance's reply.
fn parse_generation(
    reply: &str,
    instance: usize,
    view: &SchemaView<'_>,
    task: &TaskSpec,
    errors: &mut Vec<PoolError>,
) -> Vec<FeatureSpec> {
    let (specs, extract_errors) = extract_specs(reply);
    errors.extend(extract_errors.into_iter().map(|e| PoolError {
        instance,
        index: e.index,
        name: None,
        message: e.message,
    }));
    let mut valid = Vec::new();
    for (i, spec) in specs.into_iter().enumerate() {
        match validate_spec(&spec, view, task, ValidationLimits::default()) {
            Ok(()) => valid.push(spec),
            Err(errs) => errors.push(PoolError {
                instance,
                index: Some(i),
                name: Some(spec.name.clone()),
                message: errs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "),
            }),
        }
    }
    valid
}

/// Generation: `k` concurrent completions with the same prompt, pooled in
/// instance order. Replies that yield no valid specs contribute nothing.
pub fn generate_candidates(
    backend: &dyn AgentBackend,
    ctx: &PromptContext,
    view: &SchemaView<'_>,
    task: &TaskSpec,
    k: usize,
    temperature: f64,
) -> Result<GenerationPool, BackendError> {
    assert!(k >= 1, "at least one generation instance");
    let prompt = generation_prompt(ctx);
    let replies: Vec<Result<String, BackendError>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..k)
            .map(|i| {
                let prompt = &prompt;
                let tag = generate_tag(ctx.iteration, i);
                s.spawn(move || backend.complete(prompt, temperature, &tag))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("generation thread panicked"))
            .collect()
    });

    let accepted: HashSet<CanonicalKey> = ctx.accepted.iter().map(FeatureSpec::canonical_key).collect();
    let mut taken: HashSet<String> = ctx.accepted.iter().map(|s| s.name.clone()).collect();
    let mut pool = GenerationPool::default();
    for (i, reply) in replies.into_iter().enumerate() {
        let specs = parse_generation(&reply?, i, view, task, &mut pool.errors);
        pool.absorb(i, ctx.iteration, specs, &accepted, &mut taken);
    }
    Ok(pool)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterSelection {
    pub selected: Vec<FeatureSpec>,
    /// Names in the reply that match no candidate.
    pub unknown: Vec<String>,
    pub degraded: Option<String>,
}

fn parse_selection(text: &str) -> Option<Vec<String>> {
    let v = find_json(text, |v| match v {
        Json::Object(o) => o.get("selected").is_some_and(Json::is_array),
        Json::Array(a) => a.iter().all(Json::is_string),
        _ => false,
    })?;
    let items = match &v {
        Json::Object(o) => o["selected"].as_array()?,
        Json::Array(a) => a,
        _ => return None,
    };
    Some(items.iter().filter_map(|x| x.as_str().map(str::to_string)).collect())
}

/// Reasoning filter: the agent picks an ordered subset of the pool by name.
/// Unknown and repeated names are dropped; the result is capped at
/// `max_selected`. An empty pool selects nothing without a backend call.
pub fn reason_filter(
    backend: &dyn AgentBackend,
    ctx: &PromptContext,
    pool: &GenerationPool,
    max_selected: usize,
    temperature: f64,
) -> Result<FilterSelection, BackendError> {
    let mut out = FilterSelection {
        selected: Vec::new(),
        unknown: Vec::new(),
        degraded: None,
    };
    if pool.is_empty() {
        return Ok(out);
    }
    let reply = backend.complete(
        &filter_prompt(ctx, &pool.specs(), max_selected),
        temperature,
        &filter_tag(ctx.iteration),
    )?;
    let Some(names) = parse_selection(&reply) else {
        log::warn!("filter reply unparseable; selecting nothing");
        out.degraded = Some("unparseable filter reply".into());
        return Ok(out);
    };
    let by_name: HashMap<&str, &Candidate> =
        pool.candidates.iter().map(|c| (c.spec.name.as_str(), c)).collect();
    let mut picked = HashSet::new();
    for name in names {
        match by_name.get(name.as_str()) {
            Some(c) if picked.insert(name.clone()) => {
                if out.selected.len() < max_selected {
                    out.selected.push(c.spec.clone());
                }
            }
            Some(_) => {}
            None => out.unknown.push(name),
        }
    }
    if !out.unknown.is_empty() {
        log::warn!("filter named unknown candidates: {:?}", out.unknown);
    }
    Ok(out)
}

/// Seed for the random filter of one iteration.
fn iteration_seed(seed: u64, iteration: usize) -> u64 {
    seed ^ (iteration as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Ablation of the reasoning filter: a uniform random `max_selected` of the pool, in
/// sampled order, reproducible from `(seed, iteration)`.
pub fn random_filter(
    pool: &GenerationPool,
    max_selected: usize,
    seed: u64,
    iteration: usize,
) -> Vec<FeatureSpec> {
    let n = pool.len();
    let k = max_selected.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(iteration_seed(seed, iteration));
    rand::seq::index::sample(&mut rng, n, k)
        .into_iter()
        .map(|i| pool.candidates[i].spec.clone())
        .collect()
}
