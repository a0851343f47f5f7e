//! Inter-annotator agreement between two annotators' relation sets.
//!
//! Two measures are reported per relation: F1 over triples, where `TP` is a
//! triple both annotators asserted, `FN` one only the first annotator
//! asserted and `FP` one only the second asserted; and Cohen's kappa over an
//! explicit universe of judged items.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedSentence, Relation, RelationAnnotation};
use crate::error::{Error, Result};
use crate::templates::relation_for_entity_type;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
}

impl ConfusionCounts {
    pub fn new(tp: usize, fn_: usize, fp: usize) -> Self {
        ConfusionCounts { tp, fn_, fp }
    }

    pub fn is_empty(&self) -> bool {
        self.tp == 0 && self.fn_ == 0 && self.fp == 0
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts::new(self.tp + o.tp, self.fn_ + o.fn_, self.fp + o.fp)
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = ConfusionCounts>>(iter: I) -> Self {
        iter.fold(ConfusionCounts::default(), |a, b| a + b)
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// `2TP / (2TP + FN + FP)`.
pub fn f1_from_counts(c: &ConfusionCounts) -> Result<f64> {
    if c.is_empty() {
        return Err(Error::UndefinedMetric("F1 with TP = FN = FP = 0".into()));
    }
    let tp2 = 2.0 * c.tp as f64;
    Ok(tp2 / (tp2 + c.fn_ as f64 + c.fp as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementCounts {
    pub relation: Relation,
    #[serde(flatten)]
    pub counts: ConfusionCounts,
}

/// A candidate (event, argument) pair both annotators implicitly judged.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JudgedItem {
    pub event_id: String,
    pub argument_id: String,
    pub relation: Relation,
}

/// The set of items over which kappa is computed, plus the entity ids that
/// annotations may reference.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ItemUniverse {
    items: BTreeSet<JudgedItem>,
    entity_ids: HashSet<String>,
}

impl ItemUniverse {
    /// Every type-compatible (event, entity) pair in the given sentences.
    pub fn from_sentences<'a>(sentences: impl IntoIterator<Item = &'a AnnotatedSentence>) -> Self {
        let mut universe = ItemUniverse::default();
        for s in sentences {
            universe
                .entity_ids
                .extend(s.entities.iter().map(|e| e.entity_id.clone()));
            for ev in s.events() {
                for arg in &s.entities {
                    if let Some(relation) = relation_for_entity_type(arg.entity_type) {
                        universe.items.insert(JudgedItem {
                            event_id: ev.entity_id.clone(),
                            argument_id: arg.entity_id.clone(),
                            relation,
                        });
                    }
                }
            }
        }
        universe
    }

    pub fn from_items(items: impl IntoIterator<Item = JudgedItem>) -> Self {
        let items: BTreeSet<JudgedItem> = items.into_iter().collect();
        let entity_ids = items
            .iter()
            .flat_map(|i| [i.event_id.clone(), i.argument_id.clone()])
            .collect();
        ItemUniverse { items, entity_ids }
    }

    pub fn items(&self, relation: Relation) -> impl Iterator<Item = &JudgedItem> {
        self.items.iter().filter(move |i| i.relation == relation)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn check(&self, triples: &[RelationAnnotation]) -> Result<()> {
        for t in triples {
            for id in [&t.event_id, &t.argument_id] {
                if !self.entity_ids.contains(id) {
                    return Err(Error::UnknownEntity(id.clone()));
                }
            }
        }
        Ok(())
    }
}

/// Per-relation TP/FN/FP by exact set semantics on triples.
pub fn confusion_counts(
    annotations_a: &[RelationAnnotation],
    annotations_b: &[RelationAnnotation],
    universe: &ItemUniverse,
) -> Result<BTreeMap<Relation, AgreementCounts>> {
    universe.check(annotations_a)?;
    universe.check(annotations_b)?;
    let a: HashSet<&RelationAnnotation> = annotations_a.iter().collect();
    let b: HashSet<&RelationAnnotation> = annotations_b.iter().collect();
    let mut out: BTreeMap<Relation, AgreementCounts> = Relation::ALL
        .iter()
        .map(|&relation| {
            (
                relation,
                AgreementCounts {
                    relation,
                    counts: ConfusionCounts::default(),
                },
            )
        })
        .collect();
    for t in &a {
        let c = &mut out.get_mut(&t.relation).expect("all relations present").counts;
        if b.contains(t) {
            c.tp += 1;
        } else {
            c.fn_ += 1;
        }
    }
    for t in b.difference(&a) {
        out.get_mut(&t.relation).expect("all relations present").counts.fp += 1;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaInputs<T: Ord> {
    pub n: usize,
    /// Category -> (count by annotator 1, count by annotator 2).
    pub marginals: BTreeMap<T, (usize, usize)>,
    pub observed: f64,
    pub expected: f64,
}

impl<T: Ord> KappaInputs<T> {
    pub fn kappa(&self) -> Result<f64> {
        if (1.0 - self.expected).abs() < f64::EPSILON {
            return Err(Error::UndefinedMetric(
                "kappa with expected agreement 1 (both annotators constant)".into(),
            ));
        }
        Ok((self.observed - self.expected) / (1.0 - self.expected))
    }
}

/// Observed agreement and chance agreement from per-category marginals.
pub fn kappa_inputs<T: Ord + Clone>(labels_a: &[T], labels_b: &[T]) -> Result<KappaInputs<T>> {
    if labels_a.len() != labels_b.len() {
        return Err(Error::InvalidInput(format!(
            "label lists differ in length ({} vs {})",
            labels_a.len(),
            labels_b.len()
        )));
    }
    if labels_a.is_empty() {
        return Err(Error::InvalidInput("kappa over zero items".into()));
    }
    let n = labels_a.len();
    let mut marginals: BTreeMap<T, (usize, usize)> = BTreeMap::new();
    let mut agree = 0usize;
    for (a, b) in labels_a.iter().zip(labels_b) {
        marginals.entry(a.clone()).or_default().0 += 1;
        marginals.entry(b.clone()).or_default().1 += 1;
        if a == b {
            agree += 1;
        }
    }
    let n2 = (n * n) as f64;
    let expected = marginals
        .values()
        .map(|&(x, y)| (x * y) as f64)
        .sum::<f64>()
        / n2;
    Ok(KappaInputs {
        n,
        marginals,
        observed: agree as f64 / n as f64,
        expected,
    })
}

/// Cohen's kappa for two equal-length label sequences.
pub fn cohen_kappa<T: Ord + Clone>(labels_a: &[T], labels_b: &[T]) -> Result<f64> {
    kappa_inputs(labels_a, labels_b)?.kappa()
}

/// Binary kappa when the true-negative count of the item universe is known.
pub fn kappa_from_counts(c: &ConfusionCounts, tn: usize) -> Result<f64> {
    let n = c.tp + c.fn_ + c.fp + tn;
    if n == 0 {
        return Err(Error::InvalidInput("kappa over zero items".into()));
    }
    let n = n as f64;
    let a_yes = (c.tp + c.fn_) as f64;
    let b_yes = (c.tp + c.fp) as f64;
    let expected = (a_yes * b_yes + (n - a_yes) * (n - b_yes)) / (n * n);
    let observed = (c.tp + tn) as f64 / n;
    KappaInputs::<bool> {
        n: n as usize,
        marginals: BTreeMap::new(),
        observed,
        expected,
    }
    .kappa()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IaaRow {
    pub relation: Relation,
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
    pub kappa: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IaaReport {
    pub rows: Vec<IaaRow>,
    pub total: ConfusionCounts,
    /// Unweighted mean of the defined per-relation kappas.
    pub macro_kappa: Option<f64>,
    /// F1 over the summed counts.
    pub micro_f1: Option<f64>,
}

impl IaaReport {
    fn from_rows(rows: Vec<IaaRow>) -> Self {
        let total: ConfusionCounts = rows.iter().map(|r| ConfusionCounts::new(r.tp, r.fn_, r.fp)).sum();
        let kappas: Vec<f64> = rows.iter().filter_map(|r| r.kappa).collect();
        let macro_kappa = (!kappas.is_empty()).then(|| kappas.iter().sum::<f64>() / kappas.len() as f64);
        IaaReport {
            micro_f1: f1_from_counts(&total).ok(),
            rows,
            total,
            macro_kappa,
        }
    }

    pub fn row(&self, relation: Relation) -> Option<&IaaRow> {
        self.rows.iter().find(|r| r.relation == relation)
    }
}

/// Agreement report with kappa computed over `universe`.
pub fn iaa_report(
    annotations_a: &[RelationAnnotation],
    annotations_b: &[RelationAnnotation],
    universe: &ItemUniverse,
) -> Result<IaaReport> {
    let counts = confusion_counts(annotations_a, annotations_b, universe)?;
    let a: HashSet<&RelationAnnotation> = annotations_a.iter().collect();
    let b: HashSet<&RelationAnnotation> = annotations_b.iter().collect();
    let mut rows = Vec::new();
    for (&relation, agreement) in &counts {
        let (mut la, mut lb) = (Vec::new(), Vec::new());
        for item in universe.items(relation) {
            let key = RelationAnnotation::new(item.event_id.clone(), relation, item.argument_id.clone());
            la.push(a.contains(&key));
            lb.push(b.contains(&key));
        }
        let kappa = if la.is_empty() {
            None
        } else {
            match cohen_kappa(&la, &lb) {
                Ok(k) => Some(k),
                Err(Error::UndefinedMetric(msg)) => {
                    log::warn!("{relation}: {msg}");
                    None
                }
                Err(e) => return Err(e),
            }
        };
        let c = agreement.counts;
        if c.is_empty() && la.is_empty() {
            continue;
        }
        rows.push(IaaRow {
            relation,
            tp: c.tp,
            fn_: c.fn_,
            fp: c.fp,
            kappa,
            f1: f1_from_counts(&c).ok(),
        });
    }
    Ok(IaaReport::from_rows(rows))
}

/// Per-relation counts as reported in an agreement table. `tn` is the
/// number of items neither annotator labeled with the relation; kappa is
/// only computed when it is provided.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountsRow {
    pub relation: Relation,
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
    #[serde(default)]
    pub tn: Option<usize>,
}

pub fn iaa_report_from_counts(rows: &[CountsRow]) -> Result<IaaReport> {
    let mut out = Vec::new();
    for r in rows {
        let c = ConfusionCounts::new(r.tp, r.fn_, r.fp);
        let kappa = match r.tn {
            Some(tn) => Some(kappa_from_counts(&c, tn)?),
            None => None,
        };
        out.push(IaaRow {
            relation: r.relation,
            tp: r.tp,
            fn_: r.fn_,
            fp: r.fp,
            kappa,
            f1: Some(f1_from_counts(&c)?),
        });
    }
    Ok(IaaReport::from_rows(out))
}

/// Rounds half away from zero at `decimals` places.
pub fn round_half_up(value: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    // Nudge by a few ulps so values like 0.125 stored as 0.12499999 round up.
    let scaled = value * scale;
    (scaled + scaled.signum() * scaled.abs().max(1.0) * 1e-12).round() / scale
}

pub(crate) fn pct(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{:.2}", round_half_up(x * 100.0, 2)),
        None => "n/a".into(),
    }
}

impl fmt::Display for IaaReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>5} {:>5} {:>5} {:>8} {:>8}", "Relation", "TP", "FN", "FP", "kappa", "F1")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<12} {:>5} {:>5} {:>5} {:>8} {:>8}",
                r.relation.as_str(),
                r.tp,
                r.fn_,
                r.fp,
                pct(r.kappa),
                pct(r.f1)
            )?;
        }
        write!(
            f,
            "{:<12} {:>5} {:>5} {:>5} {:>8} {:>8}",
            "Overall",
            self.total.tp,
            self.total.fn_,
            self.total.fp,
            pct(self.macro_kappa),
            pct(self.micro_f1)
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EntityType;
    use proptest::prelude::*;

    fn t(e: &str, r: Relation, a: &str) -> RelationAnnotation {
        RelationAnnotation::new(e, r, a)
    }

    fn universe() -> ItemUniverse {
        ItemUniverse::from_sentences(&[AnnotatedSentence::new("s", "w x y z v")
            .with_entity("ev", EntityType::Event, 0, 1)
            .with_entity("p1", EntityType::Pers, 2, 3)
            .with_entity("p2", EntityType::Pers, 4, 5)
            .with_entity("p3", EntityType::Pers, 6, 7)
            .with_entity("p4", EntityType::Pers, 8, 9)])
    }

    #[test]
    fn f1_reference_rows() {
        let cases = [((37, 10, 10), 0.7872), ((43, 2, 6), 0.9149), ((109, 14, 18), 0.8720)];
        for ((tp, fn_, fp), want) in cases {
            let got = f1_from_counts(&ConfusionCounts::new(tp, fn_, fp)).unwrap();
            assert!((got - want).abs() < 5e-5, "{got} vs {want}");
        }
        assert!(matches!(
            f1_from_counts(&ConfusionCounts::default()),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn confusion_set_arithmetic() {
        let h = Relation::HasAgent;
        let a = [t("ev", h, "p1"), t("ev", h, "p2"), t("ev", h, "p3")];
        let b = [t("ev", h, "p2"), t("ev", h, "p3"), t("ev", h, "p4")];
        let c = confusion_counts(&a, &b, &universe()).unwrap()[&h].counts;
        assert_eq!(c, ConfusionCounts::new(2, 1, 1));

        let same = confusion_counts(&a, &a, &universe()).unwrap()[&h].counts;
        assert_eq!(same, ConfusionCounts::new(3, 0, 0));

        let disjoint = confusion_counts(&a[..1], &b[2..], &universe()).unwrap()[&h].counts;
        assert_eq!(disjoint.tp, 0);
    }

    #[test]
    fn unknown_ids_are_rejected() {
        let a = [t("ev", Relation::HasAgent, "ghost")];
        assert!(matches!(
            confusion_counts(&a, &[], &universe()),
            Err(Error::UnknownEntity(id)) if id == "ghost"
        ));
    }

    #[test]
    fn kappa_hand_example() {
        let inputs = kappa_inputs(&['x', 'x', 'y', 'y'], &['x', 'y', 'x', 'y']).unwrap();
        assert_eq!(inputs.observed, 0.5);
        assert_eq!(inputs.expected, 0.5);
        assert_eq!(inputs.kappa().unwrap(), 0.0);
    }

    #[test]
    fn kappa_identical_and_degenerate() {
        let a = ["a", "b", "c", "a"];
        assert_eq!(cohen_kappa(&a, &a).unwrap(), 1.0);
        assert!(matches!(cohen_kappa(&["a", "a"], &["a", "a"]), Err(Error::UndefinedMetric(_))));
        assert!(cohen_kappa::<u8>(&[], &[]).is_err());
        assert!(cohen_kappa(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn kappa_from_counts_matches_label_lists() {
        let c = ConfusionCounts::new(5, 2, 3);
        let tn = 10;
        let mut la = Vec::new();
        let mut lb = Vec::new();
        for (x, y, n) in [(true, true, 5), (true, false, 2), (false, true, 3), (false, false, tn)] {
            for _ in 0..n {
                la.push(x);
                lb.push(y);
            }
        }
        let direct = cohen_kappa(&la, &lb).unwrap();
        assert!((kappa_from_counts(&c, tn).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn report_from_counts_micro_f1() {
        let rows = [
            CountsRow { relation: Relation::HasAgent, tp: 37, fn_: 10, fp: 10, tn: None },
            CountsRow { relation: Relation::HasLocation, tp: 29, fn_: 2, fp: 2, tn: None },
            CountsRow { relation: Relation::HasDate, tp: 43, fn_: 2, fp: 6, tn: None },
        ];
        let report = iaa_report_from_counts(&rows).unwrap();
        assert_eq!(report.total, ConfusionCounts::new(109, 14, 18));
        assert_eq!(round_half_up(report.micro_f1.unwrap() * 100.0, 2), 87.20);
        assert!(report.macro_kappa.is_none());
        assert!(report.to_string().contains("87.20"));
    }

    #[test]
    fn perfect_single_relation_report() {
        let a = [t("ev", Relation::HasAgent, "p1")];
        let report = iaa_report(&a, &a, &universe()).unwrap();
        assert_eq!(report.macro_kappa, Some(1.0));
        assert_eq!(report.micro_f1, Some(1.0));
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(round_half_up(0.125, 2), 0.13);
        assert_eq!(round_half_up(78.7234, 2), 78.72);
        assert_eq!(round_half_up(82.235, 2), 82.24);
        assert_eq!(round_half_up(0.9355, 2), 0.94);
    }

    proptest! {
        #[test]
        fn f1_symmetric_in_fn_fp(tp in 0usize..500, x in 0usize..500, y in 0usize..500) {
            prop_assume!(tp + x + y > 0);
            let a = f1_from_counts(&ConfusionCounts::new(tp, x, y)).unwrap();
            let b = f1_from_counts(&ConfusionCounts::new(tp, y, x)).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn kappa_invariant_under_relabeling(pairs in prop::collection::vec((0u8..4, 0u8..4), 2..60)) {
            let (a, b): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let perm = [2u8, 0, 3, 1];
            let pa: Vec<u8> = a.iter().map(|&x| perm[x as usize]).collect();
            let pb: Vec<u8> = b.iter().map(|&x| perm[x as usize]).collect();
            match (cohen_kappa(&a, &b), cohen_kappa(&pa, &pb)) {
                (Ok(k1), Ok(k2)) => {
                    prop_assert!((k1 - k2).abs() < 1e-12);
                    prop_assert!(k1 <= 1.0 + 1e-12);
                    let inputs = kappa_inputs(&a, &b).unwrap();
                    prop_assert_eq!((k1 - 1.0).abs() < 1e-12, inputs.observed == 1.0);
                }
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "relabeling changed definedness"),
            }
        }
    }
}
