//! Reference implementations of the training objective.
//!
//! The classifier emits two logits per pair, `[negative, positive]`. The
//! entailment probability is the softmax of the positive logit, which equals
//! `sigmoid(l_pos - l_neg)`. The objective is a weighted binary
//! cross-entropy on that probability plus a temperature-scaled softmax
//! cross-entropy on the logits.
//!
//! These are plain `f64` routines with closed-form gradients; the tensor
//! versions used for training are checked against them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[EPS, 1 - EPS]` inside logarithms.
pub const PROB_EPSILON: f64 = 1e-7;

/// How the contrastive term's normalizer ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NceMode {
    /// Softmax over the two class logits of each instance.
    #[default]
    PerInstance,
    /// Softmax over the batch of true-class logits.
    InBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub w_pos: f64,
    pub w_neg: f64,
    pub tau: f64,
    /// Adds the contrastive term; off gives plain (weighted) cross-entropy.
    #[serde(default = "yes")]
    pub use_nce: bool,
    #[serde(default)]
    pub nce_mode: NceMode,
}

fn yes() -> bool {
    true
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            w_pos: 1.0,
            w_neg: 0.5,
            tau: 1.0,
            use_nce: true,
            nce_mode: NceMode::PerInstance,
        }
    }
}

impl LossConfig {
    /// Unweighted cross-entropy, no contrastive term.
    pub fn cross_entropy() -> Self {
        LossConfig {
            w_pos: 1.0,
            w_neg: 1.0,
            use_nce: false,
            ..LossConfig::default()
        }
    }

    pub fn weighted(w_pos: f64, w_neg: f64) -> Self {
        LossConfig {
            w_pos,
            w_neg,
            ..LossConfig::default()
        }
    }

    /// The four loss-function ablation settings, labeled.
    pub fn ablation_grid() -> Vec<(&'static str, LossConfig)> {
        vec![
            ("cross-entropy", LossConfig::cross_entropy()),
            ("loss w_p=1 w_n=1", LossConfig::weighted(1.0, 1.0)),
            ("loss w_p=1 w_n=0.2", LossConfig::weighted(1.0, 0.2)),
            ("loss w_p=1 w_n=0.5", LossConfig::weighted(1.0, 0.5)),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w_pos > 0.0 && self.w_neg > 0.0) {
            return Err(Error::Config("class weights must be positive".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config("tau must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub wce: f64,
    pub nce: f64,
    pub total: f64,
}

fn check_batch(n: usize, labels: usize) -> Result<()> {
    if n != labels {
        return Err(Error::InvalidInput(format!(
            "{n} predictions but {labels} labels"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    Ok(())
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON)
}

/// Weighted binary cross-entropy on probabilities.
pub fn wce_loss(predictions: &[f64], labels: &[bool], w_pos: f64, w_neg: f64) -> Result<f64> {
    check_batch(predictions.len(), labels.len())?;
    let sum: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = clamp_prob(p);
            if y {
                w_pos * p.ln()
            } else {
                w_neg * (1.0 - p).ln()
            }
        })
        .sum();
    Ok(-sum / predictions.len() as f64)
}

pub fn positive_probability(logits: [f64; 2]) -> f64 {
    1.0 / (1.0 + (logits[0] - logits[1]).exp())
}

/// Gradient of [`wce_loss`] applied to `positive_probability(logits)`.
pub fn wce_grad_logits(logits: &[[f64; 2]], labels: &[bool], w_pos: f64, w_neg: f64) -> Result<Vec<[f64; 2]>> {
    check_batch(logits.len(), labels.len())?;
    let n = logits.len() as f64;
    Ok(logits
        .iter()
        .zip(labels)
        .map(|(&l, &y)| {
            let p = positive_probability(l);
            if p != clamp_prob(p) {
                return [0.0, 0.0];
            }
            let dz = if y { -w_pos * (1.0 - p) } else { w_neg * p } / n;
            [-dz, dz]
        })
        .collect())
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Temperature-scaled softmax cross-entropy on class scores.
pub fn nce_loss(scores: &[[f64; 2]], labels: &[bool], tau: f64, mode: NceMode) -> Result<f64> {
    check_batch(scores.len(), labels.len())?;
    if !(tau > 0.0) {
        return Err(Error::Config(format!("tau must be positive, got {tau}")));
    }
    let n = scores.len() as f64;
    match mode {
        NceMode::PerInstance => {
            let sum: f64 = scores
                .iter()
                .zip(labels)
                .map(|(s, &y)| {
                    let true_score = s[usize::from(y)] / tau;
                    log_sum_exp(s.iter().map(|x| x / tau)) - true_score
                })
                .sum();
            Ok(sum / n)
        }
        NceMode::InBatch => {
            let t: Vec<f64> = scores.iter().zip(labels).map(|(s, &y)| s[usize::from(y)] / tau).collect();
            Ok(log_sum_exp(t.iter().copied()) - t.iter().sum::<f64>() / n)
        }
    }
}

pub fn nce_grad(scores: &[[f64; 2]], labels: &[bool], tau: f64, mode: NceMode) -> Result<Vec<[f64; 2]>> {
    check_batch(scores.len(), labels.len())?;
    if !(tau > 0.0) {
        return Err(Error::Config(format!("tau must be positive, got {tau}")));
    }
    let n = scores.len() as f64;
    match mode {
        NceMode::PerInstance => Ok(scores
            .iter()
            .zip(labels)
            .map(|(s, &y)| {
                let lse = log_sum_exp(s.iter().map(|x| x / tau));
                let mut g = [0.0; 2];
                for (j, gj) in g.iter_mut().enumerate() {
                    let p = (s[j] / tau - lse).exp();
                    let target = if j == usize::from(y) { 1.0 } else { 0.0 };
                    *gj = (p - target) / (tau * n);
                }
                g
            })
            .collect()),
        NceMode::InBatch => {
            let t: Vec<f64> = scores.iter().zip(labels).map(|(s, &y)| s[usize::from(y)] / tau).collect();
            let lse = log_sum_exp(t.iter().copied());
            Ok(t.iter()
                .zip(labels)
                .map(|(&ti, &y)| {
                    let mut g = [0.0; 2];
                    g[usize::from(y)] = ((ti - lse).exp() - 1.0 / n) / tau;
                    g
                })
                .collect())
        }
    }
}

/// `wce + nce` on one batch of logits; both terms are reported.
pub fn combined_loss(logits: &[[f64; 2]], labels: &[bool], cfg: &LossConfig) -> Result<LossBreakdown> {
    cfg.validate()?;
    let probs: Vec<f64> = logits.iter().map(|&l| positive_probability(l)).collect();
    let wce = wce_loss(&probs, labels, cfg.w_pos, cfg.w_neg)?;
    let nce = if cfg.use_nce {
        nce_loss(logits, labels, cfg.tau, cfg.nce_mode)?
    } else {
        0.0
    };
    Ok(LossBreakdown {
        wce,
        nce,
        total: wce + nce,
    })
}

pub fn combined_grad(logits: &[[f64; 2]], labels: &[bool], cfg: &LossConfig) -> Result<Vec<[f64; 2]>> {
    let mut g = wce_grad_logits(logits, labels, cfg.w_pos, cfg.w_neg)?;
    if cfg.use_nce {
        for (a, b) in g.iter_mut().zip(nce_grad(logits, labels, cfg.tau, cfg.nce_mode)?) {
            a[0] += b[0];
            a[1] += b[1];
        }
    }
    Ok(g)
}
