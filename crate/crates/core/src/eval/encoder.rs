use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{EvalError, Matrix};
use crate::exec::FeatureColumn;
use crate::rdb::{ColumnKind, Table, TaskSpec, Value};

/// Most frequent train categories kept per categorical column.
pub const TOP_K_CATEGORIES: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "plan", rename_all = "snake_case")]
pub enum ColumnPlan {
    /// Value (null imputed with the train mean) plus a null indicator.
    Numeric { column: usize, name: String, mean: f64 },
    /// One-hot over train categories plus an "other" bucket (unseen or null).
    OneHot {
        column: usize,
        name: String,
        categories: Vec<String>,
    },
    /// 0/1 with nulls imputed by the train rate.
    Boolean { column: usize, name: String, fill: f64 },
    /// Generated feature `index` of the feature list; numeric passthrough.
    Feature { index: usize, name: String, mean: f64 },
}

/// Column plan fitted on train rows only; transform never reads labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderState {
    pub plans: Vec<ColumnPlan>,
    pub output_names: Vec<String>,
}

fn finite(v: Option<f64>) -> Option<f64> {
    v.filter(|x| x.is_finite())
}

fn feature_value(f: &FeatureColumn, row: usize) -> Result<Option<f64>, EvalError> {
    f.value_for(row)
        .map(finite)
        .ok_or_else(|| EvalError::MissingFeatureRow {
            feature: f.name.clone(),
            row,
        })
}

fn mean_or_zero(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

impl EncoderState {
    /// Fits the plan. Label, split, seed-time, primary-key, text and
    /// timestamp columns of the target table are excluded.
    pub fn fit(
        target: &Table,
        task: &TaskSpec,
        features: &[FeatureColumn],
        train_rows: &[usize],
    ) -> Result<Self, EvalError> {
        if train_rows.is_empty() {
            return Err(EvalError::EmptyTrain);
        }
        let mut plans = Vec::new();
        for (ci, col) in target.columns.iter().enumerate() {
            if task.reserved_columns().contains(&col.name.as_str())
                || target.primary_key.as_deref() == Some(col.name.as_str())
            {
                continue;
            }
            let cells = train_rows.iter().map(|&r| target.rows[r][ci].as_ref());
            let name = col.name.clone();
            match col.kind {
                ColumnKind::Integer | ColumnKind::Float => {
                    let mean = mean_or_zero(cells.flatten().filter_map(Value::as_f64).filter(|x| x.is_finite()));
                    plans.push(ColumnPlan::Numeric {
                        column: ci,
                        name,
                        mean,
                    });
                }
                ColumnKind::Boolean => {
                    let fill = mean_or_zero(cells.flatten().filter_map(Value::as_f64));
                    plans.push(ColumnPlan::Boolean {
                        column: ci,
                        name,
                        fill,
                    });
                }
                ColumnKind::Categorical => {
                    let mut freq: HashMap<&str, usize> = HashMap::new();
                    for v in cells.flatten() {
                        if let Value::Str(s) = v {
                            *freq.entry(s.as_str()).or_default() += 1;
                        }
                    }
                    let mut cats: Vec<(&str, usize)> = freq.into_iter().collect();
                    cats.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
                    cats.truncate(TOP_K_CATEGORIES);
                    let mut categories: Vec<String> = cats.into_iter().map(|(c, _)| c.to_string()).collect();
                    categories.sort();
                    plans.push(ColumnPlan::OneHot {
                        column: ci,
                        name,
                        categories,
                    });
                }
                ColumnKind::Text | ColumnKind::Timestamp => {}
            }
        }
        for (index, f) in features.iter().enumerate() {
            let mut vals = Vec::with_capacity(train_rows.len());
            for &r in train_rows {
                if let Some(v) = feature_value(f, r)? {
                    vals.push(v);
                }
            }
            plans.push(ColumnPlan::Feature {
                index,
                name: f.name.clone(),
                mean: mean_or_zero(vals.into_iter()),
            });
        }

        let mut output_names = Vec::new();
        for p in &plans {
            match p {
                ColumnPlan::Numeric { name, .. } => {
                    output_names.push(name.clone());
                    output_names.push(format!("{name}__is_null"));
                }
                ColumnPlan::Boolean { name, .. } => output_names.push(name.clone()),
                ColumnPlan::OneHot {
                    name, categories, ..
                } => {
                    output_names.extend(categories.iter().map(|c| format!("{name}={c}")));
                    output_names.push(format!("{name}=__other__"));
                }
                ColumnPlan::Feature { name, .. } => {
                    output_names.push(format!("feature:{name}"));
                    output_names.push(format!("feature:{name}__is_null"));
                }
            }
        }
        Ok(EncoderState {
            plans,
            output_names,
        })
    }

    pub fn width(&self) -> usize {
        self.output_names.len()
    }

    pub fn transform(
        &self,
        target: &Table,
        features: &[FeatureColumn],
        rows: &[usize],
    ) -> Result<Matrix, EvalError> {
        let mut m = Matrix::zeros(rows.len(), self.width());
        for (i, &r) in rows.iter().enumerate() {
            let mut c = 0;
            for p in &self.plans {
                match p {
                    ColumnPlan::Numeric { column, mean, .. } => {
                        match finite(target.rows[r][*column].as_ref().and_then(Value::as_f64)) {
                            Some(x) => m.set(i, c, x),
                            None => {
                                m.set(i, c, *mean);
                                m.set(i, c + 1, 1.0);
                            }
                        }
                        c += 2;
                    }
                    ColumnPlan::Boolean { column, fill, .. } => {
                        let x = target.rows[r][*column].as_ref().and_then(Value::as_f64);
                        m.set(i, c, x.unwrap_or(*fill));
                        c += 1;
                    }
                    ColumnPlan::OneHot {
                        column, categories, ..
                    } => {
                        let hit = match &target.rows[r][*column] {
                            Some(Value::Str(s)) => categories.binary_search(s).ok(),
                            _ => None,
                        };
                        m.set(i, c + hit.unwrap_or(categories.len()), 1.0);
                        c += categories.len() + 1;
                    }
                    ColumnPlan::Feature { index, mean, .. } => {
                        match feature_value(&features[*index], r)? {
                            Some(x) => m.set(i, c, x),
                            None => {
                                m.set(i, c, *mean);
                                m.set(i, c + 1, 1.0);
                            }
                        }
                        c += 2;
                    }
                }
            }
        }
        Ok(m)
    }
}

pub fn fit_encoder(
    target: &Table,
    task: &TaskSpec,
    features: &[FeatureColumn],
    train_rows: &[usize],
) -> Result<EncoderState, EvalError> {
    EncoderState::fit(target, task, features, train_rows)
}
