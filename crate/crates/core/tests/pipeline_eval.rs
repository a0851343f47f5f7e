use std::collections::BTreeSet;

use eae_core::corpus::{AnnotatedSentence, Corpus, EntityType, Relation};
use eae_core::evaluator::{evaluate_eae, evaluate_nli, evaluate_per_relation, labels_from_scores, Averaging};
use eae_core::iaa::{f1_from_counts, ConfusionCounts};
use eae_core::nli::{FnModel, OracleModel};
use eae_core::pairgen::{build_test_only_dataset, Label};
use eae_core::pipeline::{
    candidate_pairs, extract_corpus, process_document, EventArgumentGraph, ExtractConfig, GoldNer, SentenceSplitter,
};
use eae_core::synth::{synth_corpus, SynthConfig};
use eae_core::templates::TemplateRegistry;
use proptest::prelude::*;

fn brute_candidates(s: &AnnotatedSentence) -> BTreeSet<(String, String, &'static str)> {
    let mut out = BTreeSet::new();
    for a in &s.entities {
        for b in &s.entities {
            if a.entity_type != EntityType::Event {
                continue;
            }
            let rel = match b.entity_type {
                EntityType::Pers | EntityType::Org | EntityType::Occ | EntityType::Norp => "hasAgent",
                EntityType::Gpe | EntityType::Loc | EntityType::Fac => "hasLocation",
                EntityType::Date | EntityType::Time => "hasDate",
                _ => continue,
            };
            out.insert((a.entity_id.clone(), b.entity_id.clone(), rel));
        }
    }
    out
}

#[test]
fn candidate_examples() {
    let s = AnnotatedSentence::new("a", "raid in Gaza on Monday")
        .with_entity("e", EntityType::Event, 0, 4)
        .with_entity("g", EntityType::Gpe, 8, 12)
        .with_entity("d", EntityType::Date, 16, 22);
    assert_eq!(candidate_pairs(&s).len(), 2);
    let s = AnnotatedSentence::new("b", "raid and siege in Gaza")
        .with_entity("e1", EntityType::Event, 0, 4)
        .with_entity("e2", EntityType::Event, 9, 14)
        .with_entity("g", EntityType::Gpe, 18, 22);
    assert_eq!(candidate_pairs(&s).len(), 2);
}

#[test]
fn document_of_three_sentences_gives_one_graph() {
    let s = AnnotatedSentence::new("x", "raid in Gaza.")
        .with_entity("e", EntityType::Event, 0, 4)
        .with_entity("g", EntityType::Gpe, 8, 12)
        .with_relation("e", Relation::HasLocation, "g");
    let quiet = AnnotatedSentence::new("y", "nothing here.").with_entity("p", EntityType::Pers, 0, 7);
    let corpus = Corpus::new("doc", vec![s, quiet]).unwrap();
    let reg = TemplateRegistry::default();
    let ner = GoldNer::from_corpus(&corpus);
    let oracle = OracleModel::from_corpus(&corpus, &reg).unwrap();
    let text = "nothing here. raid in Gaza.\nnothing here.";
    let run = || {
        process_document("d", text, &SentenceSplitter::default(), &ner, &oracle, &reg, &ExtractConfig::default()).unwrap()
    };
    let r = run();
    assert_eq!(r.graphs.len(), 1);
    assert!(r.failures.is_empty());
    assert_eq!(r.graphs[0].edges.len(), 1);
    assert_eq!(r, run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn candidates_equal_brute_force(seed in 0u64..10_000) {
        let corpus = synth_corpus(&SynthConfig { sentences: 10, seed, ..Default::default() }).unwrap();
        for s in corpus.sentences() {
            let got: BTreeSet<_> = candidate_pairs(s)
                .iter()
                .map(|c| (c.event.entity_id.clone(), c.entity.entity_id.clone(), c.relation.as_str()))
                .collect();
            prop_assert_eq!(got, brute_candidates(s));
        }
    }

    #[test]
    fn oracle_extraction_is_perfect(seed in 0u64..10_000) {
        let corpus = synth_corpus(&SynthConfig { sentences: 15, seed, ..Default::default() }).unwrap();
        let reg = TemplateRegistry::default();
        let oracle = OracleModel::from_corpus(&corpus, &reg).unwrap();
        let pred = extract_corpus(&corpus, &oracle, &reg, &ExtractConfig::default()).unwrap();
        let gold: Vec<_> = corpus.sentences().iter().filter(|s| s.has_event()).map(EventArgumentGraph::from_gold).collect();
        for g in &pred {
            g.validate(0.5).unwrap();
        }
        let r = evaluate_eae(&pred, &gold).unwrap();
        prop_assert_eq!(r.counts.fn_ + r.counts.fp, 0);
        if r.counts.tp > 0 {
            prop_assert_eq!((r.precision, r.recall, r.f1), (Some(1.0), Some(1.0), Some(1.0)));
        }
    }

    #[test]
    fn threshold_monotone_and_micro_consistent(seed in 0u64..10_000, lo in 0.0f64..1.0, hi in 0.0f64..1.0) {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let corpus = synth_corpus(&SynthConfig { sentences: 10, seed, ..Default::default() }).unwrap();
        let reg = TemplateRegistry::default();
        let model = FnModel(|p: &str, h: &str| ((p.len() * 31 + h.len() * 17) % 101) as f64 / 100.0);
        let a = extract_corpus(&corpus, &model, &reg, &ExtractConfig::with_threshold(lo)).unwrap();
        let b = extract_corpus(&corpus, &model, &reg, &ExtractConfig::with_threshold(hi)).unwrap();
        for (ga, gb) in a.iter().zip(&b) {
            let ta: BTreeSet<_> = ga.triples().collect();
            let tb: BTreeSet<_> = gb.triples().collect();
            prop_assert!(tb.is_subset(&ta));
            prop_assert!(ga.edges.len() <= candidate_pairs(corpus.sentence(&ga.sentence_id).unwrap()).len());
        }
        let gold: Vec<_> = corpus.sentences().iter().filter(|s| s.has_event()).map(EventArgumentGraph::from_gold).collect();
        let r = evaluate_eae(&a, &gold).unwrap();
        let summed: ConfusionCounts = r.per_relation.iter().map(|m| m.counts).sum();
        prop_assert_eq!(summed, r.counts);
        prop_assert_eq!(r.f1, f1_from_counts(&r.counts).ok());
    }

    #[test]
    fn nli_metrics_ignore_order(labels in proptest::collection::vec((any::<bool>(), any::<bool>(), 0usize..3), 1..60), rot in 0usize..60) {
        let pred: Vec<Label> = labels.iter().map(|l| Label::from_bool(l.0)).collect();
        let gold: Vec<Label> = labels.iter().map(|l| Label::from_bool(l.1)).collect();
        let rels: Vec<Relation> = labels.iter().map(|l| Relation::ALL[l.2]).collect();
        let k = rot % pred.len();
        let rotate = |v: &[Label]| { let mut v = v.to_vec(); v.rotate_left(k); v };
        let mut rr = rels.clone();
        rr.rotate_left(k);
        let a = evaluate_nli(&pred, &gold, Averaging::Macro).unwrap();
        let b = evaluate_nli(&rotate(&pred), &rotate(&gold), Averaging::Macro).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(
            evaluate_per_relation(&pred, &gold, &rels).unwrap(),
            evaluate_per_relation(&rotate(&pred), &rotate(&gold), &rr).unwrap()
        );
    }
}

#[test]
fn oracle_on_test_pairs_scores_one() {
    let corpus = synth_corpus(&SynthConfig { sentences: 30, ..Default::default() }).unwrap();
    let reg = TemplateRegistry::default();
    let ds = build_test_only_dataset(&corpus, &reg).unwrap();
    let oracle = OracleModel::from_pairs(&ds.pairs);
    let batch: Vec<(&str, &str)> = ds.pairs.iter().map(|p| (p.premise.as_str(), p.hypothesis.as_str())).collect();
    use eae_core::EntailmentModel;
    let pred = labels_from_scores(&oracle.predict_batch(&batch).unwrap(), 0.5);
    let gold: Vec<Label> = ds.pairs.iter().map(|p| p.label).collect();
    let r = evaluate_nli(&pred, &gold, Averaging::Macro).unwrap();
    assert_eq!(r.average_f1, Some(1.0));
}
