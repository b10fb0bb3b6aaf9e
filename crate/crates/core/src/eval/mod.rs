//! The fitness function: encode the enriched target table, train a boosted
//! tree model, and score AUROC on a split.

mod auroc;
mod encoder;
mod gbdt;

pub use auroc::auroc;
pub use encoder::{fit_encoder, ColumnPlan, EncoderState, TOP_K_CATEGORIES};
pub use gbdt::{
    logistic_gradient, logistic_loss, mean_logistic_loss, sigmoid, train_gbdt, GbdtModel, Node,
    TrainConfig, Tree,
};

use std::collections::HashMap;
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{CanonicalKey, FeatureSpec};
use crate::exec::{ExecError, Executor, FeatureColumn, RowFilter};
use crate::rdb::{RelationalDatabase, SchemaView, Split, TaskSpec};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("scores contain NaN")]
    NanScore,
    #[error("AUROC undefined: {n_pos} positive and {n_neg} negative rows")]
    SingleClass { n_pos: usize, n_neg: usize },
    #[error("need at least 2 training rows, got {0}")]
    TooFewRows(usize),
    #[error("train split is empty")]
    EmptyTrain,
    #[error("feature {feature} has no value computed for target row {row}")]
    MissingFeatureRow { feature: String, row: usize },
    #[error("sample fraction must be in (0, 1], got {0}")]
    BadFraction(f64),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Rows `idx` in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &r in idx {
            data.extend_from_slice(self.row(r));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub auroc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub split: Split,
}

/// Validation and test scores of a model trained on the full train split.
#[derive(Debug, Clone)]
pub struct FinalEvaluation {
    pub val: EvalResult,
    pub test: EvalResult,
    /// Accepted features over all target rows, in accept order.
    pub columns: Vec<FeatureColumn>,
    pub encoder: EncoderState,
}

fn labels_of(task: &TaskSpec, rows: &[usize]) -> Vec<u8> {
    rows.iter().map(|&r| task.labels[r]).collect()
}

fn score_split(
    model: &GbdtModel,
    x: &Matrix,
    labels: &[u8],
    split: Split,
) -> Result<EvalResult, EvalError> {
    let scores = model.predict(x)?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    Ok(EvalResult {
        auroc: auroc(labels, &scores)?,
        n_pos,
        n_neg: labels.len() - n_pos,
        split,
    })
}

/// Seeded uniform sample without replacement of `fraction` of `rows`,
/// returned in ascending order. At least two rows are kept when possible.
pub fn subsample_rows(rows: &[usize], fraction: f64, seed: u64) -> Result<Vec<usize>, EvalError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(EvalError::BadFraction(fraction));
    }
    if fraction == 1.0 {
        return Ok(rows.to_vec());
    }
    let n = rows.len();
    let k = ((fraction * n as f64).round() as usize).clamp(n.min(2), n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, n, k)
        .into_iter()
        .map(|i| rows[i])
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Scores feature sets on the validation split. The train subsample is drawn
/// once, so every candidate in a run sees the same training rows; feature
/// columns are cached by canonical key.
pub struct Evaluator<'a> {
    task: &'a TaskSpec,
    executor: Executor<'a>,
    config: TrainConfig,
    fit_rows: Vec<usize>,
    val_rows: Vec<usize>,
    cache: Mutex<HashMap<CanonicalKey, FeatureColumn>>,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        db: &'a RelationalDatabase,
        task: &'a TaskSpec,
        config: TrainConfig,
        sample_fraction: f64,
        seed: u64,
    ) -> Result<Self, EvalError> {
        let train = task.rows_in(Split::Train);
        if train.is_empty() {
            return Err(EvalError::EmptyTrain);
        }
        let fit_rows = subsample_rows(&train, sample_fraction, seed)?;
        if fit_rows.len() < 2 * config.min_samples_leaf {
            log::warn!(
                "{} fit rows cannot be split with min_samples_leaf {}; validation scores will be flat",
                fit_rows.len(),
                config.min_samples_leaf
            );
        }
        Ok(Evaluator {
            task,
            executor: Executor::new(&SchemaView::full(db), task),
            config,
            fit_rows,
            val_rows: task.rows_in(Split::Val),
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// Train rows the validation-time models are fit on.
    pub fn fit_rows(&self) -> &[usize] {
        &self.fit_rows
    }

    fn column(&self, spec: &FeatureSpec) -> Result<FeatureColumn, EvalError> {
        let key = spec.canonical_key();
        if let Some(c) = self.cache.lock().expect("cache lock").get(&key) {
            let mut c = c.clone();
            c.name = spec.name.clone();
            c.origin = spec.clone();
            return Ok(c);
        }
        let mut rows = self.fit_rows.clone();
        rows.extend_from_slice(&self.val_rows);
        let col = self.executor.execute(spec, &RowFilter::Rows(rows))?;
        self.cache
            .lock()
            .expect("cache lock")
            .insert(key, col.clone());
        Ok(col)
    }

    /// Validation AUROC of a model fit on the train subsample with
    /// `accepted` plus the optional `candidate`.
    pub fn score(
        &self,
        accepted: &[FeatureSpec],
        candidate: Option<&FeatureSpec>,
    ) -> Result<EvalResult, EvalError> {
        let columns = accepted
            .iter()
            .chain(candidate)
            .map(|s| self.column(s))
            .collect::<Result<Vec<_>, _>>()?;
        let target = self.executor.view().db().target();
        let enc = EncoderState::fit(target, self.task, &columns, &self.fit_rows)?;
        let x_fit = enc.transform(target, &columns, &self.fit_rows)?;
        let model = train_gbdt(&x_fit, &labels_of(self.task, &self.fit_rows), &self.config)?;
        let x_val = enc.transform(target, &columns, &self.val_rows)?;
        score_split(&model, &x_val, &labels_of(self.task, &self.val_rows), Split::Val)
    }

    /// Trains on the full train split and scores validation and test.
    pub fn finalize(&self, accepted: &[FeatureSpec]) -> Result<FinalEvaluation, EvalError> {
        final_evaluation(&self.executor, self.task, accepted, &self.config)
    }
}

fn final_evaluation(
    executor: &Executor<'_>,
    task: &TaskSpec,
    accepted: &[FeatureSpec],
    config: &TrainConfig,
) -> Result<FinalEvaluation, EvalError> {
    let columns = accepted
        .iter()
        .map(|s| executor.execute(s, &RowFilter::All))
        .collect::<Result<Vec<_>, _>>()?;
    let target = executor.view().db().target();
    let train = task.rows_in(Split::Train);
    let enc = EncoderState::fit(target, task, &columns, &train)?;
    let model = train_gbdt(
        &enc.transform(target, &columns, &train)?,
        &labels_of(task, &train),
        config,
    )?;
    let result = |split| -> Result<EvalResult, EvalError> {
        let rows = task.rows_in(split);
        score_split(
            &model,
            &enc.transform(target, &columns, &rows)?,
            &labels_of(task, &rows),
            split,
        )
    };
    let val = result(Split::Val)?;
    let test = result(Split::Test)?;
    Ok(FinalEvaluation {
        val,
        test,
        columns,
        encoder: enc,
    })
}

/// Validation AUROC for `accepted` plus an optional candidate, with the
/// model fit on a seeded subsample of the train split.
pub fn evaluate(
    db: &RelationalDatabase,
    task: &TaskSpec,
    accepted: &[FeatureSpec],
    candidate: Option<&FeatureSpec>,
    sample_fraction: f64,
    seed: u64,
    config: &TrainConfig,
) -> Result<EvalResult, EvalError> {
    Evaluator::new(db, task, config.clone(), sample_fraction, seed)?.score(accepted, candidate)
}
