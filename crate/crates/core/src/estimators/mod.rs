//! Backbone probability models: the logistic uplift form for `w`, `f_in` and
//! `z`, the Beta-parameter perceptron that seeds the in-range tracker, and
//! the shared data plumbing (datasets, standardization, AUC, checkpoints).

mod beta;
mod checkpoint;
mod logistic;

pub use beta::{fit_beta_param_model, BetaParamModel, BETA_EPS, BETA_HIDDEN};
pub use checkpoint::{Checkpoint, ModelKind, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use logistic::{fit_logistic, fit_logistic_with, Fitted, LogisticUpliftModel, PROB_EPS};

use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::LabeledSample;

/// Which label a model is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Target {
    /// In-range indicator on all samples.
    W,
    /// Completion indicator on in-range samples only.
    FIn,
    /// Completion indicator on all samples.
    Z,
    /// In-range indicator, fitted as Beta parameters.
    Beta,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::W => "w",
            Target::FIn => "f_in",
            Target::Z => "z",
            Target::Beta => "beta",
        }
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "w" => Ok(Target::W),
            "f_in" | "f-in" | "fin" => Ok(Target::FIn),
            "z" => Ok(Target::Z),
            "beta" => Ok(Target::Beta),
            _ => Err(Error::Argument(format!("unknown target `{s}` (expected w, f_in, z or beta)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.02, epochs: 50, batch_size: 256, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

/// Rows of `(x, d, y)` where `d` is the coupon value, not its index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub d: Vec<f64>,
    pub y: Vec<bool>,
}

impl Dataset {
    pub fn push(&mut self, x: Vec<f64>, d: f64, y: bool) {
        self.x.push(x);
        self.d.push(d);
        self.y.push(y);
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    /// Builds the training set for `target` from logged samples.
    pub fn from_samples(samples: &[LabeledSample], coupons: &[f64], target: Target) -> Self {
        let mut ds = Dataset::default();
        for s in samples {
            let (keep, label) = match target {
                Target::W | Target::Beta => (true, s.in_range),
                Target::FIn => (s.in_range, s.completed),
                Target::Z => (true, s.completed),
            };
            if keep {
                ds.push(s.features.to_vec(), coupons[s.coupon], label);
            }
        }
        ds
    }

    /// Deterministic split: every `k`-th row goes to the second part.
    pub fn split_every(&self, k: usize) -> (Dataset, Dataset) {
        let mut a = Dataset::default();
        let mut b = Dataset::default();
        for i in 0..self.len() {
            let part = if k > 0 && i % k == k - 1 { &mut b } else { &mut a };
            part.push(self.x[i].clone(), self.d[i], self.y[i]);
        }
        (a, b)
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Argument("empty dataset".into()));
        }
        let dim = self.dim();
        if self.x.iter().any(|r| r.len() != dim) || self.d.len() != self.len() {
            return Err(Error::Argument("ragged dataset".into()));
        }
        let first = self.d[0];
        if self.d.iter().all(|&d| d == first) {
            log::warn!("dataset has a single coupon level; the treatment effect is not identifiable");
        }
        Ok(())
    }
}

/// Per-feature affine standardization to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        let mut mean = vec![0.0; dim];
        let mut std = vec![1.0; dim];
        for k in 0..dim {
            let col: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            let (m, s) = crate::stats::mean_std(&col);
            mean[k] = m;
            if s > 1e-12 {
                std[k] = s;
            }
        }
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Argument(format!("expected {} features, got {}", self.dim(), x.len())));
        }
        Ok(x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect())
    }
}

pub(crate) fn shuffled_batches<R: rand::Rng + ?Sized>(n: usize, batch: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch).map(<[usize]>::to_vec).collect()
}

/// Rank-based AUC (Mann-Whitney) with average ranks for ties.
pub fn evaluate_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Argument(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both label classes".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // ranks are 1-based; tied block shares the average
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += avg * idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let p = pos as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * neg as f64))
}
