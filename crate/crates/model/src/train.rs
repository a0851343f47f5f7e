//! Fine-tuning and k-fold cross-validation.

use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use eae_core::evaluator::{evaluate_nli, labels_from_scores, Averaging};
use eae_core::loss::LossConfig;
use eae_core::nli::{assign_folds, EntailmentModel, TrainConfig};
use eae_core::pairgen::{Label, NliPair};
use eae_core::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{me, NliClassifier};

/// Mixes a root seed with stream indices.
pub fn derive_seed(root: u64, parts: &[u64]) -> u64 {
    let mut h = root ^ 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        h = (h ^ p).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub pairs: usize,
    pub accuracy: Option<f64>,
    pub average_f1: Option<f64>,
    pub positive_f1: Option<f64>,
    pub negative_f1: Option<f64>,
    /// Whether both classes occur in the gold labels.
    pub both_classes: bool,
}

pub fn evaluate_pairs(model: &dyn EntailmentModel, pairs: &[NliPair], threshold: f64) -> Result<EvalSummary> {
    let batch: Vec<(&str, &str)> = pairs.iter().map(|p| (p.premise.as_str(), p.hypothesis.as_str())).collect();
    let scores = if batch.is_empty() { Vec::new() } else { model.predict_batch(&batch)? };
    let predicted = labels_from_scores(&scores, threshold);
    let gold: Vec<Label> = pairs.iter().map(|p| p.label).collect();
    let report = evaluate_nli(&predicted, &gold, Averaging::Macro)?;
    Ok(EvalSummary {
        pairs: pairs.len(),
        accuracy: report.accuracy,
        average_f1: report.average_f1,
        positive_f1: report.class(Label::Positive).and_then(|c| c.f1.filter(|_| c.support > 0)),
        negative_f1: report.class(Label::Negative).and_then(|c| c.f1.filter(|_| c.support > 0)),
        both_classes: gold.contains(&Label::Positive) && gold.contains(&Label::Negative),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub wce: f64,
    pub nce: f64,
    pub validation: Option<EvalSummary>,
}

/// Runs `cfg.epochs` passes of AdamW over `train`. Batch order is drawn
/// from `seed`; `validation` is scored after every epoch.
pub fn train_model(
    model: &NliClassifier,
    train: &[NliPair],
    validation: Option<&[NliPair]>,
    cfg: &TrainConfig,
    loss: &LossConfig,
    seed: u64,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    loss.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidInput("no training pairs".into()));
    }
    let params = ParamsAdamW {
        lr: cfg.learning_rate,
        weight_decay: cfg.weight_decay,
        ..ParamsAdamW::default()
    };
    let mut opt = AdamW::new(model.vars(), params).map_err(me)?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[epoch as u64])));
        let (mut sum, mut wce, mut nce) = (0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let pairs: Vec<(&str, &str)> = batch
                .iter()
                .map(|&i| (train[i].premise.as_str(), train[i].hypothesis.as_str()))
                .collect();
            let labels: Vec<bool> = batch.iter().map(|&i| train[i].label.is_positive()).collect();
            let logits = model.logits(&pairs)?;
            let out = crate::loss::combined_loss(&logits, &labels, loss).map_err(me)?;
            opt.backward_step(&out.total).map_err(me)?;
            let w = batch.len() as f64;
            sum += (out.wce + out.nce) * w;
            wce += out.wce * w;
            nce += out.nce * w;
        }
        let n = train.len() as f64;
        let validation = match validation {
            Some(v) if !v.is_empty() => Some(evaluate_pairs(model, v, cfg.threshold)?),
            _ => None,
        };
        log::info!(
            "epoch {} loss {:.4} (wce {:.4}, nce {:.4}){}",
            epoch + 1,
            sum / n,
            wce / n,
            nce / n,
            validation
                .as_ref()
                .and_then(|v| v.average_f1)
                .map(|f| format!(" val F1 {f:.4}"))
                .unwrap_or_default()
        );
        history.push(EpochMetrics {
            epoch: epoch + 1,
            loss: sum / n,
            wce: wce / n,
            nce: nce / n,
            validation,
        });
    }
    Ok(history)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub init_seed: u64,
    pub train_pairs: usize,
    pub validation_pairs: usize,
    pub epochs: Vec<EpochMetrics>,
    pub validation: Option<EvalSummary>,
    /// Left out of the average because its validation part has one class.
    pub skipped: bool,
}

pub struct KFoldOutcome {
    pub folds: Vec<FoldReport>,
    pub models: Vec<NliClassifier>,
    pub fold_of: Vec<usize>,
    /// Mean validation average F1 over the folds that were not skipped.
    pub mean_average_f1: Option<f64>,
    pub best_fold: usize,
}

impl KFoldOutcome {
    pub fn best_model(&self) -> &NliClassifier {
        &self.models[self.best_fold]
    }
}

/// Trains one model per fold on the other folds and validates it on its
/// own. Pairs sharing a premise always share a fold. `make_model` receives
/// the initialization seed of each fold.
pub fn train_kfold(
    pairs: &[NliPair],
    cfg: &TrainConfig,
    loss: &LossConfig,
    make_model: &dyn Fn(u64) -> Result<NliClassifier>,
) -> Result<KFoldOutcome> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidInput("training split is empty".into()));
    }
    let fold_of = assign_folds(pairs, cfg.folds, cfg.seed)?;
    let mut folds = Vec::with_capacity(cfg.folds);
    let mut models = Vec::with_capacity(cfg.folds);
    for k in 0..cfg.folds {
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for (p, &f) in pairs.iter().zip(&fold_of) {
            if f == k {
                val.push(p.clone());
            } else {
                train.push(p.clone());
            }
        }
        let init_seed = derive_seed(cfg.seed, &[1, k as u64]);
        let model = make_model(init_seed)?;
        log::info!("fold {}/{}: {} train, {} validation pairs", k + 1, cfg.folds, train.len(), val.len());
        let epochs = train_model(&model, &train, Some(&val), cfg, loss, derive_seed(cfg.seed, &[2, k as u64]))?;
        let validation = epochs.last().and_then(|e| e.validation.clone());
        let skipped = !validation.as_ref().is_some_and(|v| v.both_classes);
        if skipped {
            log::warn!("fold {} validation has a single class; excluded from the average", k + 1);
        }
        folds.push(FoldReport {
            fold: k,
            init_seed,
            train_pairs: train.len(),
            validation_pairs: val.len(),
            epochs,
            validation,
            skipped,
        });
        models.push(model);
    }

    let scored: Vec<(usize, f64)> = folds
        .iter()
        .filter(|f| !f.skipped)
        .filter_map(|f| f.validation.as_ref()?.average_f1.map(|s| (f.fold, s)))
        .collect();
    let mean_average_f1 = (!scored.is_empty()).then(|| scored.iter().map(|s| s.1).sum::<f64>() / scored.len() as f64);
    let best_fold = scored
        .iter()
        .fold(None::<(usize, f64)>, |best, &(k, s)| match best {
            Some((_, b)) if b >= s => best,
            _ => Some((k, s)),
        })
        .map(|(k, _)| k)
        .unwrap_or_else(|| {
            log::warn!("no fold could be scored; keeping the first model");
            0
        });
    Ok(KFoldOutcome {
        folds,
        models,
        fold_of,
        mean_average_f1,
        best_fold,
    })
}
