//! Gradient-boosted regression trees on logistic loss.
//!
//! Second-order boosting: each tree is fit to per-row gradients
//! `g = p − y` and hessians `h = p(1 − p)`. Splits are chosen greedily over
//! at most `max_split_candidates` quantile thresholds per feature; missing
//! values (NaN) go to whichever side maximizes gain.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EvalError, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub num_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub l2_leaf_regularization: f64,
    pub max_split_candidates: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            num_trees: 100,
            learning_rate: 0.1,
            max_depth: 4,
            min_samples_leaf: 20,
            l2_leaf_regularization: 1.0,
            max_split_candidates: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        /// Rows with `x <= threshold` go left.
        threshold: f64,
        /// Direction for missing values.
        default_left: bool,
        left: usize,
        right: usize,
    },
    /// Additive score, already scaled by the learning rate.
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Root is node 0.
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    default_left,
                    left,
                    right,
                } => {
                    let x = row[feature];
                    let go_left = if x.is_nan() {
                        default_left
                    } else {
                        x <= threshold
                    };
                    at = if go_left { left } else { right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub trees: Vec<Tree>,
    pub learning_rate: f64,
    /// Log-odds of the training prevalence.
    pub base_score: f64,
    pub n_features: usize,
}

impl GbdtModel {
    pub fn constant(base_score: f64, n_features: usize, learning_rate: f64) -> Self {
        GbdtModel {
            trees: Vec::new(),
            learning_rate,
            base_score,
            n_features,
        }
    }

    /// Raw log-odds scores.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>, EvalError> {
        self.predict_staged(x, self.trees.len())
    }

    /// Scores using only the first `n_trees` trees.
    pub fn predict_staged(&self, x: &Matrix, n_trees: usize) -> Result<Vec<f64>, EvalError> {
        if x.cols() != self.n_features {
            return Err(EvalError::Dimension {
                expected: self.n_features,
                got: x.cols(),
            });
        }
        let trees = &self.trees[..n_trees.min(self.trees.len())];
        Ok((0..x.rows())
            .map(|r| {
                let row = x.row(r);
                self.base_score + trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
            })
            .collect())
    }
}

pub fn sigmoid(s: f64) -> f64 {
    1.0 / (1.0 + (-s).exp())
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic loss of raw score `s` for label `y`.
pub fn logistic_loss(y: u8, s: f64) -> f64 {
    if y == 1 {
        softplus(-s)
    } else {
        softplus(s)
    }
}

/// d loss / d s.
pub fn logistic_gradient(y: u8, s: f64) -> f64 {
    sigmoid(s) - y as f64
}

pub fn mean_logistic_loss(labels: &[u8], scores: &[f64]) -> f64 {
    labels
        .iter()
        .zip(scores)
        .map(|(&y, &s)| logistic_loss(y, s))
        .sum::<f64>()
        / labels.len() as f64
}

const MISSING: u16 = u16::MAX;

/// Per-feature thresholds and the bin of every row.
struct Binned {
    thresholds: Vec<Vec<f64>>,
    /// `bins[f][r]`: index of the first threshold `>= x`, or `MISSING`.
    bins: Vec<Vec<u16>>,
}

fn candidate_thresholds(values: &mut [f64], max_candidates: usize) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    let mut distinct = values.to_vec();
    distinct.dedup();
    if distinct.len() <= 1 {
        return Vec::new();
    }
    let max = *distinct.last().unwrap();
    let mut out = if distinct.len() - 1 <= max_candidates {
        distinct[..distinct.len() - 1].to_vec()
    } else {
        let n = values.len();
        (1..=max_candidates)
            .map(|j| values[(j * n / (max_candidates + 1)).min(n - 1)])
            .collect::<Vec<_>>()
    };
    out.dedup();
    out.retain(|&t| t < max);
    out
}

fn bin_matrix(x: &Matrix, max_candidates: usize) -> Binned {
    let per_feature: Vec<(Vec<f64>, Vec<u16>)> = (0..x.cols())
        .into_par_iter()
        .map(|f| {
            let mut vals: Vec<f64> = (0..x.rows())
                .map(|r| x.get(r, f))
                .filter(|v| !v.is_nan())
                .collect();
            let thr = candidate_thresholds(&mut vals, max_candidates);
            let bins = (0..x.rows())
                .map(|r| {
                    let v = x.get(r, f);
                    if v.is_nan() {
                        MISSING
                    } else {
                        thr.partition_point(|&t| t < v) as u16
                    }
                })
                .collect();
            (thr, bins)
        })
        .collect();
    let (thresholds, bins) = per_feature.into_iter().unzip();
    Binned { thresholds, bins }
}

struct SplitChoice {
    gain: f64,
    feature: usize,
    bin: usize,
    default_left: bool,
}

struct Grower<'a> {
    binned: &'a Binned,
    grad: &'a [f64],
    hess: &'a [f64],
    cfg: &'a TrainConfig,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.cfg.l2_leaf_regularization)
    }

    fn best_for_feature(&self, f: usize, rows: &[usize], g_all: f64, h_all: f64) -> Option<SplitChoice> {
        let thr = &self.binned.thresholds[f];
        if thr.is_empty() {
            return None;
        }
        let nb = thr.len() + 1;
        let mut hg = vec![0.0; nb];
        let mut hh = vec![0.0; nb];
        let mut hc = vec![0usize; nb];
        let (mut mg, mut mh, mut mc) = (0.0, 0.0, 0usize);
        let bins = &self.binned.bins[f];
        for &r in rows {
            let b = bins[r];
            if b == MISSING {
                mg += self.grad[r];
                mh += self.hess[r];
                mc += 1;
            } else {
                hg[b as usize] += self.grad[r];
                hh[b as usize] += self.hess[r];
                hc[b as usize] += 1;
            }
        }
        let parent = self.score(g_all, h_all);
        let min_leaf = self.cfg.min_samples_leaf;
        let n = rows.len();
        let (mut gl, mut hl, mut cl) = (0.0, 0.0, 0usize);
        let mut best: Option<SplitChoice> = None;
        for j in 0..thr.len() {
            gl += hg[j];
            hl += hh[j];
            cl += hc[j];
            let options: &[bool] = if mc == 0 { &[false] } else { &[false, true] };
            for &miss_left in options {
                let (g_l, h_l, c_l) = if miss_left {
                    (gl + mg, hl + mh, cl + mc)
                } else {
                    (gl, hl, cl)
                };
                let c_r = n - c_l;
                if c_l < min_leaf || c_r < min_leaf {
                    continue;
                }
                let (g_r, h_r) = (g_all - g_l, h_all - h_l);
                let gain = 0.5 * (self.score(g_l, h_l) + self.score(g_r, h_r) - parent);
                if gain > 1e-12 && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let default_left = if mc == 0 { c_l >= c_r } else { miss_left };
                    best = Some(SplitChoice {
                        gain,
                        feature: f,
                        bin: j,
                        default_left,
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let g: f64 = rows.iter().map(|&r| self.grad[r]).sum();
        let h: f64 = rows.iter().map(|&r| self.hess[r]).sum();
        let id = self.nodes.len();
        let leaf = Node::Leaf {
            value: -self.cfg.learning_rate * g / (h + self.cfg.l2_leaf_regularization),
        };
        self.nodes.push(leaf.clone());
        if depth >= self.cfg.max_depth || rows.len() < 2 * self.cfg.min_samples_leaf.max(1) {
            return id;
        }
        let candidates: Vec<Option<SplitChoice>> = (0..self.binned.thresholds.len())
            .into_par_iter()
            .map(|f| self.best_for_feature(f, &rows, g, h))
            .collect();
        // lowest feature index wins ties
        let best = candidates
            .into_iter()
            .flatten()
            .fold(None::<SplitChoice>, |acc, c| match acc {
                Some(a) if a.gain >= c.gain => Some(a),
                _ => Some(c),
            });
        let Some(best) = best else { return id };

        let bins = &self.binned.bins[best.feature];
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| {
            let b = bins[r];
            if b == MISSING {
                best.default_left
            } else {
                b as usize <= best.bin
            }
        });
        let left = self.grow(left_rows, depth + 1);
        let right = self.grow(right_rows, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: self.binned.thresholds[best.feature][best.bin],
            default_left: best.default_left,
            left,
            right,
        };
        id
    }
}

/// Trains a boosted ensemble. A single-class label vector yields a constant
/// model at the (clamped) prevalence log-odds.
pub fn train_gbdt(x: &Matrix, labels: &[u8], cfg: &TrainConfig) -> Result<GbdtModel, EvalError> {
    if x.rows() != labels.len() {
        return Err(EvalError::Dimension {
            expected: labels.len(),
            got: x.rows(),
        });
    }
    if x.rows() < 2 {
        return Err(EvalError::TooFewRows(x.rows()));
    }
    let n = labels.len();
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let p = (n_pos as f64 / n as f64).clamp(1e-6, 1.0 - 1e-6);
    let base = (p / (1.0 - p)).ln();
    if n_pos == 0 || n_pos == n {
        log::warn!("training labels contain a single class; returning a constant model");
        return Ok(GbdtModel::constant(base, x.cols(), cfg.learning_rate));
    }

    let binned = bin_matrix(x, cfg.max_split_candidates);
    let mut scores = vec![base; n];
    let mut trees = Vec::with_capacity(cfg.num_trees);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for _ in 0..cfg.num_trees {
        for i in 0..n {
            let p = sigmoid(scores[i]);
            grad[i] = p - labels[i] as f64;
            hess[i] = p * (1.0 - p);
        }
        let mut grower = Grower {
            binned: &binned,
            grad: &grad,
            hess: &hess,
            cfg,
            nodes: Vec::new(),
        };
        grower.grow((0..n).collect(), 0);
        let tree = Tree {
            nodes: grower.nodes,
        };
        for (i, s) in scores.iter_mut().enumerate() {
            *s += tree.predict_row(x.row(i));
        }
        trees.push(tree);
    }
    Ok(GbdtModel {
        trees,
        learning_rate: cfg.learning_rate,
        base_score: base,
        n_features: x.cols(),
    })
}
