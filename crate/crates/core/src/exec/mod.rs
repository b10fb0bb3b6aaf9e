//! Materializes feature specs into per-target-row values.
//!
//! Every table along a path that declares a time column contributes only
//! rows with `event_time < seed_time` of the target row being computed.
//! Rows with a null event time are treated as not-yet-happened.

mod aggregate;
mod index;

pub use aggregate::aggregate;
pub use index::{build_join_index, JoinIndex};

use rayon::prelude::*;
use thiserror::Error;

use crate::dsl::{
    validate_spec, AggTerm, Aggregation, FeatureExpr, FeatureSpec, HopDirection, Predicate,
    ValidationError, ValidationLimits,
};
use crate::rdb::{ForeignKey, SchemaView, Table, TaskSpec, Value};

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("feature {name} is invalid: {}", errors.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid {
        name: String,
        errors: Vec<ValidationError>,
    },
    #[error("target row {row} out of range ({rows} rows)")]
    RowOutOfRange { row: usize, rows: usize },
}

/// Which target rows to compute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RowFilter {
    All,
    /// Target row ids; output follows ascending row order.
    Rows(Vec<usize>),
}

impl RowFilter {
    fn resolve(&self, n: usize) -> Result<Vec<usize>, ExecError> {
        match self {
            RowFilter::All => Ok((0..n).collect()),
            RowFilter::Rows(rows) => {
                let mut rows = rows.clone();
                rows.sort_unstable();
                rows.dedup();
                if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
                    return Err(ExecError::RowOutOfRange { row: bad, rows: n });
                }
                Ok(rows)
            }
        }
    }
}

/// Values of one feature, aligned with `rows` (ascending target row ids).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureColumn {
    pub name: String,
    pub origin: FeatureSpec,
    pub rows: Vec<usize>,
    pub values: Vec<Option<f64>>,
    /// Cells whose result was infinite or NaN. NaN cells are stored as null.
    pub overflowed: usize,
}

impl FeatureColumn {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value for target row `row`, if it was computed.
    pub fn value_for(&self, row: usize) -> Option<Option<f64>> {
        self.rows.binary_search(&row).ok().map(|i| self.values[i])
    }

    pub fn summary(&self) -> ColumnSummary {
        let xs: Vec<f64> = self.values.iter().flatten().copied().collect();
        let n = xs.len();
        ColumnSummary {
            rows: self.values.len(),
            non_null: n,
            mean: (n > 0).then(|| xs.iter().sum::<f64>() / n as f64),
            min: xs.iter().copied().reduce(f64::min),
            max: xs.iter().copied().reduce(f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSummary {
    pub rows: usize,
    pub non_null: usize,
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

struct CompiledHop<'a> {
    direction: HopDirection,
    fk: &'a ForeignKey,
    from: &'a Table,
    /// Column on `from` that carries the join key.
    from_col: usize,
    to: &'a Table,
    to_time: Option<usize>,
}

struct CompiledTerm<'a> {
    hops: Vec<CompiledHop<'a>>,
    terminal: &'a Table,
    terminal_time: Option<usize>,
    filter: Option<(usize, &'a Predicate)>,
    window_secs: Option<f64>,
    agg: Aggregation,
    column: Option<usize>,
}

/// Executes specs against one schema view, sharing a join index.
pub struct Executor<'a> {
    view: SchemaView<'a>,
    task: &'a TaskSpec,
    index: JoinIndex,
    limits: ValidationLimits,
}

impl<'a> Executor<'a> {
    pub fn new(view: &SchemaView<'a>, task: &'a TaskSpec) -> Self {
        Executor {
            index: JoinIndex::build(view),
            view: view.clone(),
            task,
            limits: ValidationLimits::default(),
        }
    }

    pub fn with_limits(mut self, limits: ValidationLimits) -> Self {
        self.limits = limits;
        self
    }

    pub fn view(&self) -> &SchemaView<'a> {
        &self.view
    }

    pub fn index(&self) -> &JoinIndex {
        &self.index
    }

    fn compile<'b>(&'b self, term: &'b AggTerm) -> CompiledTerm<'b> {
        let db = self.view.db();
        let mut hops = Vec::with_capacity(term.path.len());
        for hop in &term.path {
            let from = &db.tables[hop.from_table()];
            let to = &db.tables[hop.to_table()];
            let from_col = match hop.direction {
                HopDirection::ToChildren => &hop.fk.parent_column,
                HopDirection::ToParent => &hop.fk.child_column,
            };
            hops.push(CompiledHop {
                direction: hop.direction,
                fk: &hop.fk,
                from,
                from_col: from.column_index(from_col).expect("validated"),
                to,
                to_time: to.time_column_index(),
            });
        }
        let terminal = &db.tables[term.terminal_table(&db.target_table)];
        CompiledTerm {
            hops,
            terminal,
            terminal_time: terminal.time_column_index(),
            filter: term
                .filter
                .as_ref()
                .map(|p| (terminal.column_index(&p.column).expect("validated"), p)),
            window_secs: term.window.map(|w| w.seconds()),
            agg: term.agg,
            column: term
                .column
                .as_ref()
                .map(|c| terminal.column_index(c).expect("validated")),
        }
    }

    fn eval_term(&self, term: &CompiledTerm<'_>, row: usize) -> Option<f64> {
        let seed = self.task.seed_time(row);
        let before_seed = |table: &Table, time_col: Option<usize>, r: usize| match (seed, time_col) {
            (Some(t), Some(tc)) => table.rows[r][tc]
                .as_ref()
                .and_then(Value::as_time)
                .is_some_and(|e| e < t),
            _ => true,
        };

        let mut frontier = vec![row];
        for hop in &term.hops {
            let mut next = Vec::new();
            for &r in &frontier {
                let Some(key) = hop.from.rows[r][hop.from_col].as_ref().and_then(Value::as_key)
                else {
                    continue;
                };
                match hop.direction {
                    HopDirection::ToChildren => next.extend(
                        self.index
                            .children(hop.fk, &key)
                            .iter()
                            .copied()
                            .filter(|&c| before_seed(hop.to, hop.to_time, c)),
                    ),
                    HopDirection::ToParent => {
                        if let Some(p) = self.index.parent(hop.fk, &key) {
                            if before_seed(hop.to, hop.to_time, p) {
                                next.push(p);
                            }
                        }
                    }
                }
            }
            frontier = next;
        }

        let table = term.terminal;
        if let Some((col, pred)) = term.filter {
            frontier.retain(|&r| pred.matches(&table.rows[r][col]));
        }
        if let (Some(secs), Some(t), Some(tc)) = (term.window_secs, seed, term.terminal_time) {
            let lo = t as f64 - secs;
            frontier.retain(|&r| {
                table.rows[r][tc]
                    .as_ref()
                    .and_then(Value::as_time)
                    .is_some_and(|e| e < t && e as f64 >= lo)
            });
        }
        aggregate(term.agg, table, term.column, &frontier)
    }

    /// Computes one feature. Output order is ascending target row order,
    /// independent of parallel scheduling.
    pub fn execute(
        &self,
        spec: &FeatureSpec,
        rows: &RowFilter,
    ) -> Result<FeatureColumn, ExecError> {
        validate_spec(spec, &self.view, self.task, self.limits).map_err(|errors| {
            ExecError::Invalid {
                name: spec.name.clone(),
                errors,
            }
        })?;
        let rows = rows.resolve(self.view.db().target().len())?;
        let raw: Vec<Option<f64>> = match &spec.expr {
            FeatureExpr::Agg(t) => {
                let c = self.compile(t);
                rows.par_iter().map(|&r| self.eval_term(&c, r)).collect()
            }
            FeatureExpr::Arith { op, left, right } => {
                let (l, r) = (self.compile(left), self.compile(right));
                rows.par_iter()
                    .map(|&row| op.apply(self.eval_term(&l, row), self.eval_term(&r, row)))
                    .collect()
            }
        };
        let mut overflowed = 0;
        let values = raw
            .into_iter()
            .map(|v| match v {
                Some(x) if !x.is_finite() => {
                    overflowed += 1;
                    if x.is_nan() {
                        None
                    } else {
                        Some(x)
                    }
                }
                other => other,
            })
            .collect();
        if overflowed > 0 {
            log::warn!("feature {}: {overflowed} non-finite value(s)", spec.name);
        }
        Ok(FeatureColumn {
            name: spec.name.clone(),
            origin: spec.clone(),
            rows,
            values,
            overflowed,
        })
    }

    /// Same as calling [`Executor::execute`] per spec; errors stay per spec.
    pub fn execute_batch(
        &self,
        specs: &[FeatureSpec],
        rows: &RowFilter,
    ) -> Vec<Result<FeatureColumn, ExecError>> {
        specs.iter().map(|s| self.execute(s, rows)).collect()
    }
}

/// One-shot execution of a single spec.
pub fn execute(
    view: &SchemaView<'_>,
    task: &TaskSpec,
    spec: &FeatureSpec,
    rows: &RowFilter,
) -> Result<FeatureColumn, ExecError> {
    Executor::new(view, task).execute(spec, rows)
}

pub fn execute_batch(
    view: &SchemaView<'_>,
    task: &TaskSpec,
    specs: &[FeatureSpec],
    rows: &RowFilter,
) -> Vec<Result<FeatureColumn, ExecError>> {
    Executor::new(view, task).execute_batch(specs, rows)
}
