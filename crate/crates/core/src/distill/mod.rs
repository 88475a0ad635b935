//! Loss machinery: softened distributions, confidence-modulated target
//! mixing, the confidence-distillation objective and the baselines.
//!
//! Everything here is `f64` and returns analytic gradients with respect to
//! the student's class logits and confidence logit.

mod labels;
mod losses;

pub use labels::{
    load_pseudo_labels, make_pseudo_labels, pseudo_labels_from_logits, save_pseudo_labels, teacher_clip_logits,
    PseudoLabelRow, PseudoLabelTable,
};
pub use losses::{
    condi_sr_grad, condi_sr_loss, confidence_bce, confidence_bce_grad, cross_entropy, kd_loss, kd_loss_grad,
    mix_teacher_targets, naive_bce_grad, naive_bce_loss, softened_softmax, st_conf_grad, st_conf_loss, st_ent_grad,
    st_ent_loss, LossGrad, LossParts,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied inside every logarithm.
pub const LOG_FLOOR: f64 = 1e-12;
const SIMPLEX_TOL: f64 = 1e-6;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Natural-log Shannon entropy; `0·log 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// A probability vector over `C` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution(Vec<f64>);

impl ClassDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Numeric("empty distribution".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0 + SIMPLEX_TOL) {
            return Err(Error::Numeric(format!("entries outside [0,1]: {probs:?}")));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Numeric(format!("distribution sums to {s}")));
        }
        Ok(ClassDistribution(probs))
    }

    pub(crate) fn new_unchecked(probs: Vec<f64>) -> Self {
        ClassDistribution(probs)
    }

    pub fn uniform(c: usize) -> Self {
        ClassDistribution(vec![1.0 / c as f64; c])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn entropy(&self) -> f64 {
        entropy(&self.0)
    }
}

/// Teacher-correctness label: `true` iff the teacher's top class is the
/// ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoLabel(pub bool);

impl PseudoLabel {
    pub fn from_probs(p: &ClassDistribution, label: usize) -> Self {
        PseudoLabel(p.argmax() == label)
    }

    pub fn value(self) -> f64 {
        if self.0 {
            1.0
        } else {
            0.0
        }
    }
}

/// The student's estimate that the teacher is right: `sigmoid(logit)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceScore(f64);

impl ConfidenceScore {
    pub fn from_logit(logit: f64) -> Self {
        ConfidenceScore(sigmoid(logit))
    }

    pub fn new(z: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&z) {
            return Err(Error::Numeric(format!("confidence {z} outside [0,1]")));
        }
        Ok(ConfidenceScore(z))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub tau: f64,
    pub lambda: f64,
    pub mu: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: 0.9,
            lambda: 1.5,
            mu: 1.5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::config("tau must be positive"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::config("lambda must be non-negative"));
        }
        if !(self.mu >= 1.0) {
            return Err(Error::config("mu must be at least 1"));
        }
        Ok(())
    }
}
