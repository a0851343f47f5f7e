use std::collections::{BTreeSet, HashSet};

use eae_core::corpus::{AnnotatedSentence, EntityType, Relation};
use eae_core::pairgen::{
    build_nli_dataset, generate_negative_pairs, generate_positive_pairs, write_pairs, Label, NliPair, SplitConfig,
};
use eae_core::synth::{synth_corpus, SynthConfig};
use eae_core::templates::{relation_for_entity_type, Split, TemplateRegistry};
use proptest::prelude::*;

/// Relation an argument type maps to, written out independently.
fn oracle_relation(ty: EntityType) -> Option<&'static str> {
    match ty.as_str() {
        "PERS" | "ORG" | "OCC" | "NORP" => Some("hasAgent"),
        "GPE" | "LOC" | "FAC" => Some("hasLocation"),
        "DATE" | "TIME" => Some("hasDate"),
        _ => None,
    }
}

type Row = (String, String, bool, String, String, String);

/// Every template of the split over every (event, typed entity) pair, with
/// the label looked up in the gold relations.
fn brute_force(s: &AnnotatedSentence, split: Split, reg: &TemplateRegistry) -> BTreeSet<Row> {
    let gold: HashSet<(String, String, String)> = s
        .relations
        .iter()
        .map(|r| (r.event_id.clone(), r.relation.to_string(), r.argument_id.clone()))
        .collect();
    let mut out = BTreeSet::new();
    for ev in s.entities.iter().filter(|e| e.entity_type.as_str() == "EVENT") {
        for en in &s.entities {
            let Some(rel) = oracle_relation(en.entity_type) else { continue };
            for t in reg.all() {
                let applies = match split {
                    Split::Train => true,
                    Split::Test => t.index == 2,
                };
                if t.relation.to_string() != rel || !applies {
                    continue;
                }
                let hyp = t.pattern.replace("{event}", &ev.surface).replace("{entity}", &en.surface);
                let label = gold.contains(&(ev.entity_id.clone(), rel.to_string(), en.entity_id.clone()));
                out.insert((s.text.clone(), hyp, label, t.id.clone(), ev.entity_id.clone(), en.entity_id.clone()));
            }
        }
    }
    out
}

fn rows(pairs: &[NliPair]) -> BTreeSet<Row> {
    pairs
        .iter()
        .map(|p| {
            (
                p.premise.clone(),
                p.hypothesis.clone(),
                p.label.is_positive(),
                p.template_id.clone(),
                p.event_id.clone(),
                p.entity_id.clone(),
            )
        })
        .collect()
}

#[test]
fn generator_matches_brute_force_on_synthetic_sentences() {
    let reg = TemplateRegistry::default();
    let corpus = synth_corpus(&SynthConfig { sentences: 60, ..Default::default() }).unwrap();
    assert!(corpus.sentences().len() >= 20);
    for s in corpus.sentences() {
        for split in [Split::Train, Split::Test] {
            let mut pairs = generate_positive_pairs(&[s], split, &reg).unwrap();
            pairs.extend(generate_negative_pairs(&[s], split, &reg).unwrap());
            let got = rows(&pairs);
            assert_eq!(got.len(), pairs.len(), "duplicate pairs in {}", s.sentence_id);
            assert_eq!(got, brute_force(s, split, &reg), "sentence {}", s.sentence_id);
        }
    }
}

fn synth_cfg() -> impl Strategy<Value = SynthConfig> {
    (1usize..40, 0u64..1000, 0.0f64..1.0).prop_map(|(sentences, seed, link)| SynthConfig {
        sentences,
        seed,
        link_probability: link,
        ..Default::default()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn premises_stay_on_one_side(cfg in synth_cfg(), split_seed in 0u64..100) {
        let corpus = synth_corpus(&cfg).unwrap();
        let ds = build_nli_dataset(&corpus, &SplitConfig { seed: split_seed, ..Default::default() }, &TemplateRegistry::default()).unwrap();
        let train: HashSet<&str> = ds.split(Split::Train).map(|p| p.premise.as_str()).collect();
        let test: HashSet<&str> = ds.split(Split::Test).map(|p| p.premise.as_str()).collect();
        prop_assert!(train.is_disjoint(&test));
    }

    #[test]
    fn pairs_partition_candidates(cfg in synth_cfg()) {
        let reg = TemplateRegistry::default();
        let corpus = synth_corpus(&cfg).unwrap();
        for s in corpus.sentences() {
            for split in [Split::Train, Split::Test] {
                let pos = generate_positive_pairs(&[s], split, &reg).unwrap().len();
                let neg = generate_negative_pairs(&[s], split, &reg).unwrap().len();
                let per_template = match split { Split::Train => 4, Split::Test => 1 };
                let events = s.events().count();
                let args = s.entities.iter().filter(|e| oracle_relation(e.entity_type).is_some()).count();
                prop_assert_eq!(pos + neg, per_template * events * args);
            }
        }
    }

    #[test]
    fn relation_follows_entity_type(cfg in synth_cfg()) {
        let corpus = synth_corpus(&cfg).unwrap();
        let ds = build_nli_dataset(&corpus, &SplitConfig::default(), &TemplateRegistry::default()).unwrap();
        for p in &ds.pairs {
            let s = corpus.sentence(&p.sentence_id).unwrap();
            let ty = s.entity(&p.entity_id).unwrap().entity_type;
            prop_assert_eq!(relation_for_entity_type(ty), Some(p.relation));
            if p.split == Split::Test {
                prop_assert!(p.template_id.ends_with("/t2"));
            }
        }
    }

    #[test]
    fn dataset_bytes_are_reproducible(cfg in synth_cfg()) {
        let corpus = synth_corpus(&cfg).unwrap();
        let reg = TemplateRegistry::default();
        let bytes = || {
            let ds = build_nli_dataset(&corpus, &SplitConfig::default(), &reg).unwrap();
            let mut buf = Vec::new();
            write_pairs(&ds.pairs, &mut buf).unwrap();
            buf
        };
        prop_assert_eq!(bytes(), bytes());
    }
}

#[test]
fn positives_count_identity() {
    // Each gold relation gives four train pairs or one test pair.
    let corpus = synth_corpus(&SynthConfig { sentences: 200, ..Default::default() }).unwrap();
    let ds = build_nli_dataset(&corpus, &SplitConfig::default(), &TemplateRegistry::default()).unwrap();
    let totals = corpus.relation_counts();
    for &rel in Relation::ALL {
        let train = ds.stats.count(Split::Train, rel, Label::Positive);
        let test = ds.stats.count(Split::Test, rel, Label::Positive);
        assert_eq!(train % 4, 0);
        assert_eq!(train / 4 + test, totals[&rel]);
    }
}
