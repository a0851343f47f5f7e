//! Premise/hypothesis dataset construction.
//!
//! Event sentences are split into train and test premises first, so no
//! premise ever appears on both sides. Gold relations then yield positive
//! pairs; every other type-compatible (event, entity) pair in the same
//! sentence yields negative pairs. Training pairs use every training
//! template of the relation, test pairs only the test template.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{event_sentences, AnnotatedSentence, Corpus, Relation, RelationAnnotation, TypeCompatibility};
use crate::error::{Error, Result};
use crate::templates::{instantiate, relation_for_entity_type, Split, TemplateRegistry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn from_bool(positive: bool) -> Self {
        if positive {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
        })
    }
}

/// One premise/hypothesis record. Field order is the on-disk order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NliPair {
    pub premise: String,
    pub hypothesis: String,
    pub label: Label,
    pub split: Split,
    pub relation: Relation,
    pub template_id: String,
    pub sentence_id: String,
    pub event_id: String,
    pub entity_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_fraction: 0.70,
            seed: 42,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// Splits event sentences into train and test premises.
///
/// Sentences sharing identical text are kept together. Each side preserves
/// corpus order.
pub fn split_premises<'a>(
    corpus: &'a Corpus,
    cfg: &SplitConfig,
) -> Result<(Vec<&'a AnnotatedSentence>, Vec<&'a AnnotatedSentence>)> {
    cfg.validate()?;
    let sentences = event_sentences(corpus);
    if sentences.is_empty() {
        return Err(Error::InvalidInput(format!(
            "corpus `{}` has no sentences with events",
            corpus.name
        )));
    }

    // Group indices by premise text, in first-occurrence order.
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut by_text: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, s) in sentences.iter().enumerate() {
        let g = *by_text.entry(s.text.as_str()).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }

    let mut order: Vec<usize> = (0..groups.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order.shuffle(&mut rng);
    let n_train = ((groups.len() as f64) * cfg.train_fraction).round() as usize;

    let mut in_train = vec![false; sentences.len()];
    for &g in &order[..n_train] {
        for &i in &groups[g] {
            in_train[i] = true;
        }
    }
    let (train, test): (Vec<_>, Vec<_>) = sentences
        .into_iter()
        .zip(in_train)
        .partition(|(_, t)| *t);
    Ok((
        train.into_iter().map(|(s, _)| s).collect(),
        test.into_iter().map(|(s, _)| s).collect(),
    ))
}

/// One positive pair per gold relation and applicable template.
pub fn generate_positive_pairs(
    sentences: &[&AnnotatedSentence],
    split: Split,
    templates: &TemplateRegistry,
) -> Result<Vec<NliPair>> {
    let mut pairs = Vec::new();
    for s in sentences {
        for rel in &s.relations {
            let event = s
                .entity(&rel.event_id)
                .ok_or_else(|| Error::UnknownEntity(rel.event_id.clone()))?;
            let arg = s
                .entity(&rel.argument_id)
                .ok_or_else(|| Error::UnknownEntity(rel.argument_id.clone()))?;
            if !TypeCompatibility::allows(rel.relation, arg.entity_type) {
                return Err(Error::IncompatibleType {
                    entity_id: arg.entity_id.clone(),
                    entity_type: arg.entity_type.to_string(),
                    relation: rel.relation.to_string(),
                });
            }
            for t in templates.templates_for(rel.relation, split) {
                let h = instantiate(t, event, arg)?;
                pairs.push(make_pair(s, h, Label::Positive, split));
            }
        }
    }
    Ok(pairs)
}

/// Pairs every event with every type-compatible entity that is not one of
/// its gold arguments.
pub fn generate_negative_pairs(
    sentences: &[&AnnotatedSentence],
    split: Split,
    templates: &TemplateRegistry,
) -> Result<Vec<NliPair>> {
    let mut pairs = Vec::new();
    for s in sentences {
        let gold: HashSet<&RelationAnnotation> = s.relations.iter().collect();
        for event in s.events() {
            for entity in &s.entities {
                let Some(relation) = relation_for_entity_type(entity.entity_type) else {
                    continue;
                };
                let key = RelationAnnotation::new(event.entity_id.clone(), relation, entity.entity_id.clone());
                if gold.contains(&key) {
                    continue;
                }
                for t in templates.templates_for(relation, split) {
                    let h = instantiate(t, event, entity)?;
                    pairs.push(make_pair(s, h, Label::Negative, split));
                }
            }
        }
    }
    Ok(pairs)
}

fn make_pair(s: &AnnotatedSentence, h: crate::templates::Hypothesis, label: Label, split: Split) -> NliPair {
    NliPair {
        premise: s.text.clone(),
        hypothesis: h.text,
        label,
        split,
        relation: h.relation,
        template_id: h.template_id,
        sentence_id: s.sentence_id.clone(),
        event_id: h.event_id,
        entity_id: h.entity_id,
    }
}

/// Pair counts per split, relation and label.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    cells: BTreeMap<Split, BTreeMap<Relation, [usize; 2]>>,
}

impl DatasetStats {
    pub fn from_pairs(pairs: &[NliPair]) -> Self {
        let mut stats = DatasetStats::default();
        for p in pairs {
            let cell = stats
                .cells
                .entry(p.split)
                .or_default()
                .entry(p.relation)
                .or_default();
            cell[usize::from(!p.label.is_positive())] += 1;
        }
        stats
    }

    pub fn count(&self, split: Split, relation: Relation, label: Label) -> usize {
        self.cells
            .get(&split)
            .and_then(|m| m.get(&relation))
            .map(|c| c[usize::from(!label.is_positive())])
            .unwrap_or(0)
    }

    pub fn split_total(&self, split: Split, label: Option<Label>) -> usize {
        Relation::ALL
            .iter()
            .map(|&r| match label {
                Some(l) => self.count(split, r, l),
                None => self.count(split, r, Label::Positive) + self.count(split, r, Label::Negative),
            })
            .sum()
    }

    pub fn total(&self) -> usize {
        self.split_total(Split::Train, None) + self.split_total(Split::Test, None)
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<6} {:<12} {:>9} {:>9} {:>9}", "Phase", "Pairs", "Positive", "Negative", "Total")?;
        for split in [Split::Train, Split::Test] {
            for &rel in Relation::ALL {
                let p = self.count(split, rel, Label::Positive);
                let n = self.count(split, rel, Label::Negative);
                writeln!(f, "{:<6} {:<12} {:>9} {:>9} {:>9}", split.to_string(), rel.as_str(), p, n, p + n)?;
            }
            let p = self.split_total(split, Some(Label::Positive));
            let n = self.split_total(split, Some(Label::Negative));
            writeln!(f, "{:<6} {:<12} {:>9} {:>9} {:>9}", split.to_string(), "SubTotal", p, n, p + n)?;
        }
        let p = self.split_total(Split::Train, Some(Label::Positive)) + self.split_total(Split::Test, Some(Label::Positive));
        let n = self.split_total(Split::Train, Some(Label::Negative)) + self.split_total(Split::Test, Some(Label::Negative));
        write!(f, "{:<6} {:<12} {:>9} {:>9} {:>9}", "", "Total", p, n, p + n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NliDataset {
    pub pairs: Vec<NliPair>,
    pub stats: DatasetStats,
    pub train_sentence_ids: Vec<String>,
    pub test_sentence_ids: Vec<String>,
}

impl NliDataset {
    fn from_parts(pairs: Vec<NliPair>, train: &[&AnnotatedSentence], test: &[&AnnotatedSentence]) -> Self {
        NliDataset {
            stats: DatasetStats::from_pairs(&pairs),
            pairs,
            train_sentence_ids: train.iter().map(|s| s.sentence_id.clone()).collect(),
            test_sentence_ids: test.iter().map(|s| s.sentence_id.clone()).collect(),
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &NliPair> {
        self.pairs.iter().filter(move |p| p.split == split)
    }
}

/// Splits the corpus and generates both splits' pairs.
pub fn build_nli_dataset(corpus: &Corpus, cfg: &SplitConfig, templates: &TemplateRegistry) -> Result<NliDataset> {
    cfg.validate()?;
    if event_sentences(corpus).is_empty() {
        return Ok(NliDataset::from_parts(Vec::new(), &[], &[]));
    }
    let (train, test) = split_premises(corpus, cfg)?;
    let mut pairs = generate_positive_pairs(&train, Split::Train, templates)?;
    pairs.extend(generate_negative_pairs(&train, Split::Train, templates)?);
    pairs.extend(generate_positive_pairs(&test, Split::Test, templates)?);
    pairs.extend(generate_negative_pairs(&test, Split::Test, templates)?);
    Ok(NliDataset::from_parts(pairs, &train, &test))
}

/// Every event sentence becomes a test premise (held-out corpora).
pub fn build_test_only_dataset(corpus: &Corpus, templates: &TemplateRegistry) -> Result<NliDataset> {
    let test = event_sentences(corpus);
    let mut pairs = generate_positive_pairs(&test, Split::Test, templates)?;
    pairs.extend(generate_negative_pairs(&test, Split::Test, templates)?);
    Ok(NliDataset::from_parts(pairs, &[], &test))
}

pub fn write_pairs<W: Write>(pairs: &[NliPair], mut writer: W) -> Result<()> {
    for p in pairs {
        serde_json::to_writer(&mut writer, p).map_err(|e| Error::Protocol(e.to_string()))?;
        writer
            .write_all(b"\n")
            .map_err(|e| Error::io("<dataset writer>", e))?;
    }
    Ok(())
}

pub fn read_pairs<R: BufRead>(reader: R) -> Result<Vec<NliPair>> {
    let mut pairs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::parse(format!("line {}", idx + 1), e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let pair = serde_json::from_str(&line).map_err(|e| Error::parse(format!("line {}", idx + 1), e.to_string()))?;
        pairs.push(pair);
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EntityType;

    fn sentence_with_date(id: &str) -> AnnotatedSentence {
        // "summit on Monday and Tuesday"
        AnnotatedSentence::new(id, format!("summit {id} on Monday and Tuesday"))
            .with_entity(format!("{id}-ev"), EntityType::Event, 0, 6)
    }

    fn dated(id: &str) -> AnnotatedSentence {
        let s = sentence_with_date(id);
        let off = s.text.find("Monday").unwrap();
        let off2 = s.text.find("Tuesday").unwrap();
        s.with_entity(format!("{id}-d1"), EntityType::Date, off, off + 6)
            .with_entity(format!("{id}-d2"), EntityType::Date, off2, off2 + 7)
            .with_relation(format!("{id}-ev"), Relation::HasDate, format!("{id}-d1"))
    }

    fn plain_event(id: &str) -> AnnotatedSentence {
        AnnotatedSentence::new(id, format!("strike {id}")).with_entity(format!("{id}-ev"), EntityType::Event, 0, 6)
    }

    #[test]
    fn ten_sentences_split_seven_three() {
        let sentences = (0..10).map(|i| plain_event(&format!("s{i}"))).collect();
        let corpus = Corpus::new("c", sentences).unwrap();
        for seed in 0..5 {
            let cfg = SplitConfig { train_fraction: 0.7, seed };
            let (train, test) = split_premises(&corpus, &cfg).unwrap();
            assert_eq!((train.len(), test.len()), (7, 3));
            let again = split_premises(&corpus, &cfg).unwrap();
            assert_eq!(train, again.0);
        }
    }

    #[test]
    fn duplicate_premises_stay_on_one_side() {
        let mut sentences: Vec<_> = (0..6).map(|i| plain_event(&format!("s{i}"))).collect();
        sentences.push(
            AnnotatedSentence::new("dup", sentences[0].text.clone()).with_entity("dup-ev", EntityType::Event, 0, 6),
        );
        let corpus = Corpus::new("c", sentences).unwrap();
        for seed in 0..20 {
            let (train, test) = split_premises(&corpus, &SplitConfig { train_fraction: 0.5, seed }).unwrap();
            let train_texts: HashSet<_> = train.iter().map(|s| &s.text).collect();
            assert!(test.iter().all(|s| !train_texts.contains(&s.text)));
        }
    }

    #[test]
    fn no_event_sentences_is_an_error_for_split() {
        let corpus = Corpus::new("c", vec![AnnotatedSentence::new("s", "calm")]).unwrap();
        assert!(split_premises(&corpus, &SplitConfig::default()).is_err());
        let ds = build_nli_dataset(&corpus, &SplitConfig::default(), &TemplateRegistry::default()).unwrap();
        assert!(ds.pairs.is_empty());
    }

    #[test]
    fn bad_fraction_is_rejected() {
        let corpus = Corpus::new("c", vec![plain_event("a")]).unwrap();
        for f in [0.0, 1.0, -0.5, f64::NAN] {
            assert!(split_premises(&corpus, &SplitConfig { train_fraction: f, seed: 1 }).is_err());
        }
    }

    #[test]
    fn positive_counts_follow_template_policy() {
        let reg = TemplateRegistry::default();
        let s = dated("a");
        assert_eq!(generate_positive_pairs(&[&s], Split::Train, &reg).unwrap().len(), 4);
        let test = generate_positive_pairs(&[&s], Split::Test, &reg).unwrap();
        assert_eq!(test.len(), 1);
        assert_eq!(test[0].template_id, "hasDate/t2");
        assert!(test[0].label.is_positive());
        assert!(generate_positive_pairs(&[&plain_event("b")], Split::Train, &reg).unwrap().is_empty());
    }

    #[test]
    fn negatives_exclude_gold_arguments() {
        let reg = TemplateRegistry::default();
        let s = dated("a");
        let neg = generate_negative_pairs(&[&s], Split::Test, &reg).unwrap();
        assert_eq!(neg.len(), 1);
        assert_eq!(neg[0].entity_id, "a-d2");
        assert_eq!(neg[0].label, Label::Negative);

        let only_gold = AnnotatedSentence::new("g", "raid in Gaza")
            .with_entity("g-ev", EntityType::Event, 0, 4)
            .with_entity("g-l", EntityType::Gpe, 8, 12)
            .with_relation("g-ev", Relation::HasLocation, "g-l");
        assert!(generate_negative_pairs(&[&only_gold], Split::Test, &reg).unwrap().is_empty());
    }

    #[test]
    fn shared_location_with_two_events() {
        let reg = TemplateRegistry::default();
        let s = AnnotatedSentence::new("x", "war and truce in Gaza")
            .with_entity("e1", EntityType::Event, 0, 3)
            .with_entity("e2", EntityType::Event, 8, 13)
            .with_entity("loc", EntityType::Gpe, 17, 21)
            .with_relation("e1", Relation::HasLocation, "loc");
        let neg = generate_negative_pairs(&[&s], Split::Test, &reg).unwrap();
        assert_eq!(neg.len(), 1);
        assert_eq!((neg[0].event_id.as_str(), neg[0].entity_id.as_str()), ("e2", "loc"));
    }

    #[test]
    fn incompatible_gold_is_an_error() {
        let mut s = dated("a");
        s.relations.push(RelationAnnotation::new("a-ev", Relation::HasAgent, "a-d2"));
        assert!(matches!(
            generate_positive_pairs(&[&s], Split::Test, &TemplateRegistry::default()),
            Err(Error::IncompatibleType { .. })
        ));
    }

    #[test]
    fn dataset_file_round_trip_and_stats() {
        let corpus = Corpus::new("c", (0..10).map(|i| dated(&format!("s{i}"))).collect()).unwrap();
        let ds = build_nli_dataset(&corpus, &SplitConfig::default(), &TemplateRegistry::default()).unwrap();
        assert_eq!(ds.stats.count(Split::Train, Relation::HasDate, Label::Positive), 7 * 4);
        assert_eq!(ds.stats.count(Split::Train, Relation::HasDate, Label::Negative), 7 * 4);
        assert_eq!(ds.stats.count(Split::Test, Relation::HasDate, Label::Positive), 3);
        assert_eq!(ds.stats.total(), ds.pairs.len());

        let mut buf = Vec::new();
        write_pairs(&ds.pairs, &mut buf).unwrap();
        assert_eq!(read_pairs(buf.as_slice()).unwrap(), ds.pairs);
        let first = String::from_utf8(buf).unwrap();
        assert!(first.starts_with("{\"premise\":"));
        assert!(ds.stats.to_string().contains("SubTotal"));
    }

    #[test]
    fn test_only_dataset_uses_every_event_sentence() {
        let corpus = Corpus::new("ood", (0..4).map(|i| dated(&format!("o{i}"))).collect()).unwrap();
        let ds = build_test_only_dataset(&corpus, &TemplateRegistry::default()).unwrap();
        assert_eq!(ds.pairs.len(), 8);
        assert!(ds.pairs.iter().all(|p| p.split == Split::Test));
        assert!(ds.train_sentence_ids.is_empty());
    }
}
