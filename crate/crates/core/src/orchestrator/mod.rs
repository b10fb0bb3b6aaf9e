//! The feature generation loop: schema selection, K generation instances,
//! reasoning filter and greedy validation filter, repeated with accumulated
//! feedback until an iteration accepts nothing.

mod artifacts;
mod config;
mod feedback;

pub use artifacts::{enriched_table, RunDir};
pub use config::{Ablations, BackendConfig, RunConfig};
pub use feedback::{format_feedback, FeedbackEntry, FeedbackLedger};

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    generate_candidates, random_filter, reason_filter, select_schema, AgentBackend, BackendError,
    GenerationPool, HeuristicBackend, PromptContext, RecordingBackend, RemoteBackend,
    ScriptedBackend, Transcript,
};
use crate::dsl::FeatureSpec;
use crate::eval::{EvalError, Evaluator, FinalEvaluation, TrainConfig};
use crate::rdb::{apply_subset, write_table_csv, RdbError, RelationalDatabase, SchemaSubset, SchemaView, TaskSpec};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Rdb(#[from] RdbError),
    #[error("run directory: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxIters,
    Aborted,
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunStatus::Converged => "converged",
            RunStatus::MaxIters => "max_iters",
            RunStatus::Aborted => "aborted",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub subset: SchemaSubset,
    pub subset_summary: String,
    pub schema_degraded: Option<String>,
    pub subset_corrections: usize,
    pub pool_size: usize,
    pub pool_errors: usize,
    pub selected: Vec<String>,
    pub filter_degraded: Option<String>,
    pub entries: Vec<FeedbackEntry>,
    pub accepted: Vec<String>,
    /// Validation AUROC of the accepted set at the end of the iteration.
    pub val_auroc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FinalScores {
    pub val_auroc: f64,
    pub test_auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub status: RunStatus,
    pub error: Option<String>,
    pub baseline_val_auroc: f64,
    /// Baseline, then the validation AUROC after each accepted feature.
    pub trajectory: Vec<f64>,
    pub accepted: Vec<FeatureSpec>,
    pub iterations: Vec<IterationRecord>,
    pub ledger: FeedbackLedger,
    pub final_scores: Option<FinalScores>,
    pub transcripts: Vec<Transcript>,
}

impl RunReport {
    /// One-line human summary.
    pub fn summary(&self) -> String {
        let traj = self
            .trajectory
            .iter()
            .map(|x| format!("{x:.4}"))
            .collect::<Vec<_>>()
            .join(" -> ");
        let test = self
            .final_scores
            .map_or("n/a".to_string(), |s| format!("{:.4}", s.test_auroc));
        format!(
            "status={} iterations={} accepted={} val_trajectory=[{traj}] test_auroc={test}",
            self.status,
            self.iterations.len(),
            self.accepted.len(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct IterationMetrics {
    iteration: usize,
    pool_size: usize,
    selected: Vec<String>,
    accepted: Vec<String>,
    val_auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct Metrics<'a> {
    status: Option<RunStatus>,
    baseline_val_auroc: f64,
    trajectory: &'a [f64],
    iterations: Vec<IterationMetrics>,
    accepted_count: usize,
    final_val_auroc: Option<f64>,
    test_auroc: Option<f64>,
}

/// Greedy validation filter. Candidates are tried in order; each is kept iff it raises the
/// current score by more than `epsilon`, and the current score moves up with
/// every accept. `score` returns the validation AUROC of the accepted set
/// plus one candidate.
pub fn validation_filter<F>(
    selected: &[FeatureSpec],
    accepted: &mut Vec<FeatureSpec>,
    current: &mut f64,
    iteration: usize,
    epsilon: f64,
    mut score: F,
) -> (Vec<FeatureSpec>, Vec<FeedbackEntry>)
where
    F: FnMut(&[FeatureSpec], &FeatureSpec) -> Result<f64, String>,
{
    let mut newly = Vec::new();
    let mut entries = Vec::with_capacity(selected.len());
    for cand in selected {
        let before = *current;
        let entry = match score(accepted, cand) {
            Ok(after) => {
                let keep = after > before + epsilon;
                if keep {
                    *current = after;
                    accepted.push(cand.clone());
                    newly.push(cand.clone());
                }
                FeedbackEntry {
                    iteration,
                    feature_name: cand.name.clone(),
                    before_auroc: before,
                    after_auroc: Some(after),
                    accepted: keep,
                    error: None,
                }
            }
            Err(e) => {
                log::warn!("candidate {} failed: {e}", cand.name);
                FeedbackEntry {
                    iteration,
                    feature_name: cand.name.clone(),
                    before_auroc: before,
                    after_auroc: None,
                    accepted: false,
                    error: Some(e),
                }
            }
        };
        log::info!("{}", format_feedback(&entry));
        entries.push(entry);
    }
    (newly, entries)
}

/// Trains on the full train split with `accepted` and scores val and test.
/// With no features this is the baseline model.
pub fn finalize(
    db: &RelationalDatabase,
    task: &TaskSpec,
    accepted: &[FeatureSpec],
    train: &TrainConfig,
) -> Result<FinalEvaluation, EvalError> {
    Evaluator::new(db, task, train.clone(), 1.0, 0)?.finalize(accepted)
}

/// Writes the enriched target table as CSV.
pub fn export_enriched(
    db: &RelationalDatabase,
    eval: &FinalEvaluation,
    path: &Path,
) -> Result<(), RdbError> {
    write_table_csv(&enriched_table(db.target(), &eval.columns), path)
}

/// Runs the loop with the backend named in `config`, persisting artifacts to
/// `out_dir` when given.
pub fn run_pipeline(
    db: &RelationalDatabase,
    task: &TaskSpec,
    config: &RunConfig,
    out_dir: Option<&Path>,
) -> Result<RunReport, OrchestratorError> {
    config.validate()?;
    match &config.backend {
        BackendConfig::Heuristic => {
            let b = HeuristicBackend::new(
                db,
                task,
                config.seed,
                config.sample_fraction,
                config.max_selected_per_iter,
            );
            run_pipeline_with(db, task, config, &b, out_dir)
        }
        BackendConfig::Scripted { fixture } => {
            let b = ScriptedBackend::from_file(fixture)?;
            run_pipeline_with(db, task, config, &b, out_dir)
        }
        BackendConfig::Replay { transcripts } => {
            let b = ScriptedBackend::from_transcript_dir(transcripts)?;
            run_pipeline_with(db, task, config, &b, out_dir)
        }
        BackendConfig::Remote(rc) => {
            let b = RemoteBackend::new(rc.clone())?;
            run_pipeline_with(db, task, config, &b, out_dir)
        }
    }
}

struct Loop<'r, 'a> {
    db: &'a RelationalDatabase,
    task: &'a TaskSpec,
    config: &'r RunConfig,
    backend: &'r dyn AgentBackend,
    evaluator: Evaluator<'a>,
    dir: RunDir,
    accepted: Vec<FeatureSpec>,
    current: f64,
    trajectory: Vec<f64>,
    ledger: FeedbackLedger,
    iterations: Vec<IterationRecord>,
    subset: Option<SchemaSubset>,
}

impl Loop<'_, '_> {
    fn metrics(&self, status: Option<RunStatus>, final_scores: Option<FinalScores>) -> std::io::Result<()> {
        let m = Metrics {
            status,
            baseline_val_auroc: self.trajectory[0],
            trajectory: &self.trajectory,
            iterations: self
                .iterations
                .iter()
                .map(|r| IterationMetrics {
                    iteration: r.iteration,
                    pool_size: r.pool_size,
                    selected: r.selected.clone(),
                    accepted: r.accepted.clone(),
                    val_auroc: r.val_auroc,
                })
                .collect(),
            accepted_count: self.accepted.len(),
            final_val_auroc: final_scores.map(|s| s.val_auroc),
            test_auroc: final_scores.map(|s| s.test_auroc),
        };
        self.dir.write_json("metrics.json", &m)?;
        self.dir.write_json("accepted_features.json", &self.accepted)
    }

    fn context(&self, schema: String, iteration: usize) -> PromptContext {
        let feedback = if self.config.ablations.disable_feedback || self.ledger.is_empty() {
            None
        } else {
            Some(self.ledger.render())
        };
        PromptContext {
            schema,
            task: self.task.description.clone(),
            iteration,
            accepted: self.accepted.clone(),
            feedback,
        }
    }

    /// Schema selection, generation, filtering. Returns the number of accepted features.
    fn iteration(&mut self, it: usize) -> Result<usize, OrchestratorError> {
        let cfg = self.config;
        let full = SchemaView::full(self.db).describe(self.task);
        let reuse = !cfg.rerun_schema_selection && self.subset.is_some();
        let (subset, schema_degraded, corrections) = if reuse {
            (self.subset.clone().expect("subset from first iteration"), None, 0)
        } else {
            let sel = select_schema(
                self.backend,
                &self.context(full, it),
                self.db,
                self.task,
                cfg.selection_temperature,
                cfg.ablations.skip_schema_selection,
            )?;
            (sel.subset, sel.degraded, sel.corrections.len())
        };
        self.subset = Some(subset.clone());
        let (view, _) = apply_subset(self.db, self.task, &subset);
        let ctx = self.context(view.describe(self.task), it);
        let iter_dir = RunDir::iteration_dir(it);
        self.dir.write_json(&format!("{iter_dir}/subset.json"), &subset)?;

        let pool: GenerationPool = generate_candidates(
            self.backend,
            &ctx,
            &view,
            self.task,
            cfg.instances,
            cfg.generation_temperature,
        )?;
        self.dir.write_json(&format!("{iter_dir}/pool.json"), &pool)?;

        let (selected, filter_degraded) = if cfg.ablations.random_reasoning_filter {
            (random_filter(&pool, cfg.max_selected_per_iter, cfg.seed, it), None)
        } else {
            let sel = reason_filter(
                self.backend,
                &ctx,
                &pool,
                cfg.max_selected_per_iter,
                cfg.selection_temperature,
            )?;
            (sel.selected, sel.degraded)
        };
        self.dir.write_json(&format!("{iter_dir}/selected.json"), &selected)?;

        let evaluator = &self.evaluator;
        let before_len = self.trajectory.len();
        let (newly, entries) = validation_filter(
            &selected,
            &mut self.accepted,
            &mut self.current,
            it,
            cfg.improvement_epsilon,
            |acc, cand| evaluator.score(acc, Some(cand)).map(|r| r.auroc).map_err(|e| e.to_string()),
        );
        for e in entries.iter().filter(|e| e.accepted) {
            self.trajectory.push(e.after_auroc.expect("accepted entries have a score"));
        }
        debug_assert_eq!(self.trajectory.len() - before_len, newly.len());
        let log_text: String = entries.iter().map(|e| format_feedback(e) + "\n").collect();
        self.dir.write_text(&format!("{iter_dir}/feedback.log"), &log_text)?;
        self.ledger.extend(entries.iter().cloned());

        log::info!(
            "iteration {it}: pool {}, selected {}, accepted {}, val AUROC {:.4}",
            pool.len(),
            selected.len(),
            newly.len(),
            self.current
        );
        self.iterations.push(IterationRecord {
            iteration: it,
            subset_summary: subset.summary(),
            subset,
            schema_degraded,
            subset_corrections: corrections,
            pool_size: pool.len(),
            pool_errors: pool.errors.len(),
            selected: selected.iter().map(|s| s.name.clone()).collect(),
            filter_degraded,
            entries,
            accepted: newly.iter().map(|s| s.name.clone()).collect(),
            val_auroc: self.current,
        });
        self.metrics(None, None)?;
        Ok(newly.len())
    }
}

/// Runs the loop against an explicit backend. Backend failures end the run
/// with status `aborted` and whatever artifacts were written so far; data
/// and evaluation errors before the loop starts are returned as errors.
pub fn run_pipeline_with(
    db: &RelationalDatabase,
    task: &TaskSpec,
    config: &RunConfig,
    backend: &dyn AgentBackend,
    out_dir: Option<&Path>,
) -> Result<RunReport, OrchestratorError> {
    config.validate()?;
    let dir = RunDir::new(out_dir)?;
    dir.write_json("config.json", config)?;
    let recorder = RecordingBackend::new(backend, dir.path("transcripts").as_deref())?;

    let evaluator = Evaluator::new(
        db,
        task,
        config.train.clone(),
        config.sample_fraction,
        config.seed,
    )?;
    let baseline = evaluator.score(&[], None)?.auroc;
    log::info!("baseline validation AUROC {baseline:.4}");
    let mut lp = Loop {
        db,
        task,
        config,
        backend: &recorder,
        evaluator,
        dir,
        accepted: Vec::new(),
        current: baseline,
        trajectory: vec![baseline],
        ledger: FeedbackLedger::default(),
        iterations: Vec::new(),
        subset: None,
    };

    let mut status = RunStatus::MaxIters;
    let mut error = None;
    for it in 1..=config.max_iterations {
        match lp.iteration(it) {
            Ok(0) => {
                status = RunStatus::Converged;
                break;
            }
            Ok(_) => {}
            Err(OrchestratorError::Backend(e)) => {
                log::error!("iteration {it}: backend failure: {e}");
                status = RunStatus::Aborted;
                error = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        }
    }

    let final_scores = if status == RunStatus::Aborted {
        None
    } else {
        let fin = lp.evaluator.finalize(&lp.accepted)?;
        if let Some(path) = lp.dir.path("enriched_target.csv") {
            export_enriched(db, &fin, &path)?;
        }
        Some(FinalScores {
            val_auroc: fin.val.auroc,
            test_auroc: fin.test.auroc,
        })
    };
    lp.metrics(Some(status), final_scores)?;
    lp.dir.write_text("status", &format!("{status}\n"))?;

    Ok(RunReport {
        config: config.clone(),
        status,
        error,
        baseline_val_auroc: baseline,
        trajectory: lp.trajectory,
        accepted: lp.accepted,
        iterations: lp.iterations,
        ledger: lp.ledger,
        final_scores,
        transcripts: recorder.transcripts(),
    })
}
