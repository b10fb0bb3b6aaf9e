use std::fmt;

use super::{AggTerm, Aggregation, CompareOp, FeatureSpec, HopDirection, Literal, PredicateValue};
use crate::rdb::{parse_timestamp, ColumnKind, SchemaView, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidationLimits {
    pub max_hops: usize,
}

impl Default for ValidationLimits {
    fn default() -> Self {
        ValidationLimits { max_hops: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationError {
    /// Term location (`left`, `right`, or empty for a single term).
    pub at: String,
    pub message: String,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.at.is_empty() {
            f.write_str(&self.message)
        } else {
            write!(f, "{}: {}", self.at, self.message)
        }
    }
}

/// Checks a spec against the visible schema and returns every violation.
pub fn validate_spec(
    spec: &FeatureSpec,
    view: &SchemaView<'_>,
    task: &TaskSpec,
    limits: ValidationLimits,
) -> Result<(), Vec<ValidationError>> {
    let mut errors = Vec::new();
    if spec.name.trim().is_empty() {
        errors.push(ValidationError {
            at: String::new(),
            message: "name must not be empty".into(),
        });
    }
    match &spec.expr {
        super::FeatureExpr::Agg(t) => check_term(t, "", view, task, limits, &mut errors),
        super::FeatureExpr::Arith { left, right, .. } => {
            check_term(left, "left", view, task, limits, &mut errors);
            check_term(right, "right", view, task, limits, &mut errors);
        }
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

fn literal_fits(kind: ColumnKind, lit: &Literal) -> bool {
    match (kind, lit) {
        (ColumnKind::Integer | ColumnKind::Float, Literal::Int(_) | Literal::Float(_)) => true,
        (ColumnKind::Boolean, Literal::Bool(_)) => true,
        (ColumnKind::Boolean, Literal::Int(i)) => *i == 0 || *i == 1,
        (ColumnKind::Categorical | ColumnKind::Text, Literal::Str(_)) => true,
        (ColumnKind::Timestamp, Literal::Int(_)) => true,
        (ColumnKind::Timestamp, Literal::Str(s)) => parse_timestamp(s).is_some(),
        _ => false,
    }
}

fn check_term(
    term: &AggTerm,
    at: &str,
    view: &SchemaView<'_>,
    task: &TaskSpec,
    limits: ValidationLimits,
    errors: &mut Vec<ValidationError>,
) {
    let mut err = |message: String| {
        errors.push(ValidationError {
            at: at.to_string(),
            message,
        })
    };

    if term.path.len() > limits.max_hops {
        err(format!(
            "path has {} hops, at most {} allowed",
            term.path.len(),
            limits.max_hops
        ));
    }

    let mut current = view.target_table().to_string();
    for (i, hop) in term.path.iter().enumerate() {
        if !view.has_fk(&hop.fk) {
            err(format!("unknown relation {} at path[{i}]", hop.fk));
            return;
        }
        if hop.from_table() != current {
            let want = match hop.direction {
                HopDirection::ToChildren => "parent",
                HopDirection::ToParent => "child",
            };
            err(format!(
                "path[{i}] {} starts at {} but its {want} table is {}",
                hop.direction.as_str(),
                current,
                hop.from_table()
            ));
            return;
        }
        current = hop.to_table().to_string();
    }
    let Some(table) = view.table(&current) else {
        err(format!("unknown table {current}"));
        return;
    };

    let visible_kind = |col: &str| -> Option<ColumnKind> {
        if view.has_column(&current, col) {
            table.column(col).map(|c| c.kind)
        } else {
            None
        }
    };

    match (&term.column, term.agg) {
        (Some(_), Aggregation::Count) => err("count takes no column".into()),
        (None, Aggregation::Count) => {}
        (None, a) => err(format!("{} requires column", a.as_str())),
        (Some(col), a) => match visible_kind(col) {
            None => err(format!("unknown column {current}.{col}")),
            Some(_) if task.is_reserved(&current, col) => {
                err(format!("column {current}.{col} is reserved by the task"))
            }
            Some(kind) if a.needs_numeric() && !kind.is_numeric() => err(format!(
                "{} requires a numeric column, {current}.{col} is {kind}",
                a.as_str()
            )),
            Some(_) => {}
        },
    }

    if let Some(f) = &term.filter {
        match visible_kind(&f.column) {
            None => err(format!("filter: unknown column {current}.{}", f.column)),
            Some(_) if task.is_reserved(&current, &f.column) => err(format!(
                "filter: column {current}.{} is reserved by the task",
                f.column
            )),
            Some(kind) => {
                let lits: Vec<&Literal> = match &f.literal {
                    PredicateValue::One(l) => vec![l],
                    PredicateValue::Set(s) => s.iter().collect(),
                };
                match (&f.literal, f.op) {
                    (PredicateValue::Set(_), op) if op != CompareOp::InSet => {
                        err(format!("filter: {} expects a single value", op.as_str()))
                    }
                    (PredicateValue::One(_), CompareOp::InSet) => {
                        err("filter: in_set expects a set".into())
                    }
                    (PredicateValue::Set(s), _) if s.is_empty() => {
                        err("filter: in_set needs at least one value".into())
                    }
                    _ => {}
                }
                for l in lits {
                    if !literal_fits(kind, l) {
                        err(format!(
                            "filter: literal {l} is not compatible with {kind} column {current}.{}",
                            f.column
                        ));
                    }
                }
            }
        }
    }

    if let Some(w) = &term.window {
        if !(w.days.is_finite() && w.days > 0.0) {
            err("window: days must be positive".into());
        }
        if table.time_column.is_none() {
            err(format!("window: table {current} has no time column"));
        }
        if task.seed_time_column.is_none() {
            err("window: the task has no seed time".into());
        }
    }
}
