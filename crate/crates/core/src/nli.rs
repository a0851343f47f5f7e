//! Entailment-model interfaces shared by training, evaluation and the
//! extraction pipeline.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::pairgen::NliPair;
use crate::templates::{instantiate, Split, TemplateRegistry};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Anything that scores `P(premise entails hypothesis)`.
pub trait EntailmentModel: Send + Sync {
    /// Scores a batch of `(premise, hypothesis)` pairs; one probability each.
    fn predict_batch(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>>;

    fn predict(&self, premise: &str, hypothesis: &str) -> Result<f64> {
        let out = self.predict_batch(&[(premise, hypothesis)])?;
        out.into_iter()
            .next()
            .ok_or_else(|| Error::Model("model returned no score".into()))
    }
}

impl<M: EntailmentModel + ?Sized> EntailmentModel for &M {
    fn predict_batch(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>> {
        (**self).predict_batch(pairs)
    }
}

impl<M: EntailmentModel + ?Sized> EntailmentModel for Box<M> {
    fn predict_batch(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>> {
        (**self).predict_batch(pairs)
    }
}

/// Answers 1.0 for known gold positives and 0.0 otherwise.
#[derive(Debug, Clone, Default)]
pub struct OracleModel {
    positives: HashSet<(String, String)>,
}

impl OracleModel {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = &'a NliPair>) -> Self {
        OracleModel {
            positives: pairs
                .into_iter()
                .filter(|p| p.label.is_positive())
                .map(|p| (p.premise.clone(), p.hypothesis.clone()))
                .collect(),
        }
    }

    /// Gold positives of every template for every relation in the corpus.
    pub fn from_corpus(corpus: &Corpus, templates: &TemplateRegistry) -> Result<Self> {
        let mut positives = HashSet::new();
        for s in corpus.sentences() {
            for r in &s.relations {
                let ev = s.entity(&r.event_id).ok_or_else(|| Error::UnknownEntity(r.event_id.clone()))?;
                let arg = s
                    .entity(&r.argument_id)
                    .ok_or_else(|| Error::UnknownEntity(r.argument_id.clone()))?;
                for split in [Split::Train, Split::Test] {
                    for t in templates.templates_for(r.relation, split) {
                        positives.insert((s.text.clone(), instantiate(t, ev, arg)?.text));
                    }
                }
            }
        }
        Ok(OracleModel { positives })
    }
}

impl EntailmentModel for OracleModel {
    fn predict_batch(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>> {
        Ok(pairs
            .iter()
            .map(|(p, h)| {
                if self.positives.contains(&(p.to_string(), h.to_string())) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect())
    }
}

/// Wraps a scoring closure.
pub struct FnModel<F>(pub F);

impl<F> EntailmentModel for FnModel<F>
where
    F: Fn(&str, &str) -> f64 + Send + Sync,
{
    fn predict_batch(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>> {
        Ok(pairs.iter().map(|(p, h)| (self.0)(p, h)).collect())
    }
}

/// Optimizer and schedule settings for fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub folds: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            folds: 5,
            learning_rate: 2e-5,
            weight_decay: 1e-8,
            epochs: 5,
            batch_size: 16,
            seed: 42,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config(format!("need at least 2 folds, got {}", self.folds)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config("threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Assigns each pair to a fold so that pairs sharing a premise share a fold.
///
/// Premises are shuffled with `seed`, then each goes to the fold currently
/// holding the fewest pairs.
pub fn assign_folds(pairs: &[NliPair], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in pairs.iter().enumerate() {
        groups.entry(p.premise.as_str()).or_default().push(i);
    }
    if groups.len() < k {
        return Err(Error::InvalidInput(format!(
            "{} distinct premises cannot fill {k} folds",
            groups.len()
        )));
    }
    let mut keys: Vec<&str> = groups.keys().copied().collect();
    keys.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut sizes = vec![0usize; k];
    let mut fold_of = vec![0usize; pairs.len()];
    for key in keys {
        let members = &groups[key];
        let (target, _) = sizes
            .iter()
            .enumerate()
            .min_by_key(|(i, &s)| (s, *i))
            .expect("k >= 2");
        sizes[target] += members.len();
        for &i in members {
            fold_of[i] = target;
        }
    }
    Ok(fold_of)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Relation;
    use crate::pairgen::Label;

    fn pair(premise: &str, label: Label) -> NliPair {
        NliPair {
            premise: premise.into(),
            hypothesis: "h".into(),
            label,
            split: Split::Train,
            relation: Relation::HasDate,
            template_id: "hasDate/t2".into(),
            sentence_id: premise.into(),
            event_id: "e".into(),
            entity_id: "d".into(),
        }
    }

    #[test]
    fn two_folds_of_five() {
        let pairs: Vec<_> = (0..10).map(|i| pair(&format!("p{i}"), Label::Positive)).collect();
        let folds = assign_folds(&pairs, 2, 3).unwrap();
        assert_eq!(folds.iter().filter(|&&f| f == 0).count(), 5);
        assert_eq!(folds, assign_folds(&pairs, 2, 3).unwrap());
    }

    #[test]
    fn premises_never_cross_folds() {
        let pairs: Vec<_> = (0..40).map(|i| pair(&format!("p{}", i % 13), Label::Negative)).collect();
        let folds = assign_folds(&pairs, 5, 9).unwrap();
        for (a, pa) in pairs.iter().enumerate() {
            for (b, pb) in pairs.iter().enumerate() {
                if pa.premise == pb.premise {
                    assert_eq!(folds[a], folds[b]);
                }
            }
        }
        assert!(assign_folds(&pairs, 1, 0).is_err());
        assert!(assign_folds(&pairs[..3], 5, 0).is_err());
    }

    #[test]
    fn oracle_scores_only_gold() {
        let pairs = [pair("a", Label::Positive), pair("b", Label::Negative)];
        let oracle = OracleModel::from_pairs(&pairs);
        assert_eq!(oracle.predict("a", "h").unwrap(), 1.0);
        assert_eq!(oracle.predict("b", "h").unwrap(), 0.0);
    }

    #[test]
    fn train_config_checks() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { folds: 1, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
    }
}
