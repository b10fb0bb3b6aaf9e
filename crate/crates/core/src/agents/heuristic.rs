//! Deterministic stand-in for a language model, for offline runs and tests.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde_json::json;

use super::{AgentBackend, BackendError, Role, CANDIDATES_CLOSE, CANDIDATES_OPEN};
use crate::dsl::{extract_specs, AggTerm, Aggregation, FeatureExpr, FeatureSpec, HopDirection, JoinHop};
use crate::eval::subsample_rows;
use crate::exec::{Executor, RowFilter};
use crate::rdb::{ColumnKind, RelationalDatabase, SchemaView, Split, TaskSpec};

/// Join paths the generator enumerates are at most this long.
pub const MAX_HOPS: usize = 2;
/// Specs emitted per generation call.
pub const MAX_GENERATED: usize = 32;

/// Role-dispatching backend. Schema: every table within two FK hops of the
/// target. Generation: count, count_distinct and mean over all paths of one
/// or two hops, in canonical-key order, capped at 32. Filter: candidates
/// ranked by |point-biserial correlation| with the label on the train
/// subsample; ties go to the simpler aggregation, then the shorter path.
pub struct HeuristicBackend<'a> {
    db: &'a RelationalDatabase,
    task: &'a TaskSpec,
    executor: Executor<'a>,
    fit_rows: Vec<usize>,
    max_selected: usize,
}

impl<'a> HeuristicBackend<'a> {
    /// `sample_fraction` and `seed` should match the run so the filter sees
    /// the same train rows as the evaluator.
    pub fn new(
        db: &'a RelationalDatabase,
        task: &'a TaskSpec,
        seed: u64,
        sample_fraction: f64,
        max_selected: usize,
    ) -> Self {
        let train = task.rows_in(Split::Train);
        let fit_rows = subsample_rows(&train, sample_fraction, seed).unwrap_or(train);
        HeuristicBackend {
            db,
            task,
            executor: Executor::new(&SchemaView::full(db), task),
            fit_rows,
            max_selected,
        }
    }

    /// Tables reachable from the target within [`MAX_HOPS`] FK edges, in
    /// either direction.
    pub fn reachable_tables(&self) -> BTreeSet<String> {
        let mut dist: BTreeMap<&str, usize> = BTreeMap::new();
        let mut queue = VecDeque::from([(self.db.target_table.as_str(), 0)]);
        dist.insert(&self.db.target_table, 0);
        while let Some((t, d)) = queue.pop_front() {
            if d == MAX_HOPS {
                continue;
            }
            for fk in &self.db.foreign_keys {
                let next = if fk.child_table == t {
                    &fk.parent_table
                } else if fk.parent_table == t {
                    &fk.child_table
                } else {
                    continue;
                };
                if !dist.contains_key(next.as_str()) {
                    dist.insert(next, d + 1);
                    queue.push_back((next, d + 1));
                }
            }
        }
        dist.into_keys().map(str::to_string).collect()
    }

    fn paths(&self) -> Vec<Vec<JoinHop>> {
        let mut out = Vec::new();
        let mut frontier: Vec<Vec<JoinHop>> = vec![Vec::new()];
        for _ in 0..MAX_HOPS {
            let mut next = Vec::new();
            for path in &frontier {
                let at = path.last().map_or(self.db.target_table.as_str(), |h| h.to_table());
                for fk in &self.db.foreign_keys {
                    let mut hops = Vec::new();
                    if fk.parent_table == at {
                        hops.push(JoinHop::to_children(fk.clone()));
                    }
                    if fk.child_table == at {
                        hops.push(JoinHop::to_parent(fk.clone()));
                    }
                    for hop in hops {
                        if path.last().is_some_and(|l| l.fk == hop.fk) {
                            continue;
                        }
                        let mut p = path.clone();
                        p.push(hop);
                        next.push(p);
                    }
                }
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
        out
    }

    /// All enumerated specs, sorted by canonical key.
    pub fn enumerate(&self) -> Vec<FeatureSpec> {
        let mut specs = Vec::new();
        for path in self.paths() {
            let last = path.last().expect("non-empty path");
            let table = &self.db.tables[last.to_table()];
            let hop_col = match last.direction {
                HopDirection::ToChildren => last.fk.child_column.as_str(),
                HopDirection::ToParent => last.fk.parent_column.as_str(),
            };
            let is_key = |c: &str| {
                table.primary_key.as_deref() == Some(c)
                    || self
                        .db
                        .foreign_keys
                        .iter()
                        .any(|fk| fk.child_table == table.name && fk.child_column == c)
            };
            let prefix = path
                .iter()
                .map(|h| h.to_table())
                .collect::<Vec<_>>()
                .join("_");
            let term = |agg, column: Option<&str>| AggTerm {
                path: path.clone(),
                filter: None,
                window: None,
                agg,
                column: column.map(str::to_string),
            };
            specs.push(FeatureSpec::agg(format!("{prefix}_count"), term(Aggregation::Count, None)));
            for col in &table.columns {
                let c = col.name.as_str();
                if self.task.is_reserved(&table.name, c) || table.primary_key.as_deref() == Some(c) || c == hop_col {
                    continue;
                }
                if matches!(col.kind, ColumnKind::Categorical | ColumnKind::Integer | ColumnKind::Boolean) {
                    specs.push(FeatureSpec::agg(
                        format!("{prefix}_count_distinct_{c}"),
                        term(Aggregation::CountDistinct, Some(c)),
                    ));
                }
                if matches!(col.kind, ColumnKind::Integer | ColumnKind::Float) && !is_key(c) {
                    specs.push(FeatureSpec::agg(
                        format!("{prefix}_mean_{c}"),
                        term(Aggregation::Mean, Some(c)),
                    ));
                }
            }
        }
        specs.sort_by_cached_key(FeatureSpec::canonical_key);
        specs
    }

    /// Point-biserial correlation of a feature with the label on the train
    /// subsample; nulls take the mean. Constant or failing features score 0.
    pub fn correlation(&self, spec: &FeatureSpec) -> f64 {
        let Ok(col) = self.executor.execute(spec, &RowFilter::Rows(self.fit_rows.clone())) else {
            return 0.0;
        };
        let present: Vec<f64> = col.values.iter().flatten().copied().filter(|x| x.is_finite()).collect();
        if present.is_empty() {
            return 0.0;
        }
        let fill = present.iter().sum::<f64>() / present.len() as f64;
        let xs: Vec<f64> = col
            .values
            .iter()
            .map(|v| v.filter(|x| x.is_finite()).unwrap_or(fill))
            .collect();
        let ys: Vec<f64> = col.rows.iter().map(|&r| self.task.labels[r] as f64).collect();
        pearson(&xs, &ys)
    }

    /// Candidates best first.
    pub fn rank(&self, candidates: &[FeatureSpec]) -> Vec<FeatureSpec> {
        let mut scored: Vec<(f64, usize, usize, _, &FeatureSpec)> = candidates
            .iter()
            .map(|s| {
                let (agg_rank, hops) = match &s.expr {
                    FeatureExpr::Agg(t) => (agg_rank(t.agg), t.path.len()),
                    FeatureExpr::Arith { left, right, .. } => (
                        agg_rank(left.agg).max(agg_rank(right.agg)) + 1,
                        left.path.len() + right.path.len(),
                    ),
                };
                (self.correlation(s).abs(), agg_rank, hops, s.canonical_key(), s)
            })
            .collect();
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
                .then_with(|| a.3.cmp(&b.3))
        });
        scored.into_iter().map(|x| x.4.clone()).collect()
    }

    fn schema_reply(&self) -> String {
        let tables: BTreeMap<String, Vec<String>> = self
            .reachable_tables()
            .into_iter()
            .map(|t| {
                let cols = self.db.tables[&t].columns.iter().map(|c| c.name.clone()).collect();
                (t, cols)
            })
            .collect();
        json!({ "tables": tables }).to_string()
    }

    fn generation_reply(&self) -> String {
        let mut specs = self.enumerate();
        specs.truncate(MAX_GENERATED);
        serde_json::to_string_pretty(&specs).expect("specs serialize")
    }

    fn filter_reply(&self, prompt: &str) -> String {
        let candidates = match (prompt.find(CANDIDATES_OPEN), prompt.rfind(CANDIDATES_CLOSE)) {
            (Some(a), Some(b)) if a < b => extract_specs(&prompt[a + CANDIDATES_OPEN.len()..b]).0,
            _ => Vec::new(),
        };
        let names: Vec<String> = self
            .rank(&candidates)
            .into_iter()
            .take(self.max_selected)
            .map(|s| s.name)
            .collect();
        json!({ "selected": names }).to_string()
    }
}

fn agg_rank(a: Aggregation) -> usize {
    match a {
        Aggregation::Count => 0,
        Aggregation::CountDistinct => 1,
        Aggregation::Mean => 2,
        _ => 3,
    }
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

impl AgentBackend for HeuristicBackend<'_> {
    fn complete(&self, prompt: &str, _temperature: f64, call_tag: &str) -> Result<String, BackendError> {
        Ok(match Role::of_tag(call_tag) {
            Some(Role::Schema) => self.schema_reply(),
            Some(Role::Generate) => self.generation_reply(),
            Some(Role::Filter) => self.filter_reply(prompt),
            None => String::new(),
        })
    }
}
