//! Classification metrics for entailment predictions and triple-level
//! metrics for extracted graphs.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{Relation, RelationAnnotation};
use crate::error::{Error, Result};
use crate::iaa::{f1_from_counts, pct, ConfusionCounts};
use crate::pairgen::Label;
use crate::pipeline::EventArgumentGraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    /// Gold instances of the class.
    pub support: usize,
    pub counts: ConfusionCounts,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

impl ClassMetrics {
    /// Metrics from counts. F1 is undefined only when the class has no gold
    /// and no predicted instances.
    pub fn from_counts(name: impl Into<String>, counts: ConfusionCounts) -> Self {
        ClassMetrics {
            name: name.into(),
            support: counts.tp + counts.fn_,
            counts,
            precision: counts.precision(),
            recall: counts.recall(),
            f1: f1_from_counts(&counts).ok(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Unweighted mean over classes.
    #[default]
    Macro,
    /// Mean weighted by support.
    Weighted,
}

/// Averages the F1 of the classes with nonzero support.
pub fn average_f1(classes: &[ClassMetrics], averaging: Averaging) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for c in classes {
        let Some(f1) = c.f1.filter(|_| c.support > 0) else {
            log::warn!("class `{}` has no support; left out of the average", c.name);
            continue;
        };
        let w = match averaging {
            Averaging::Macro => 1.0,
            Averaging::Weighted => c.support as f64,
        };
        num += w * f1;
        den += w;
    }
    (den > 0.0).then(|| num / den)
}

pub fn labels_from_scores(scores: &[f64], threshold: f64) -> Vec<Label> {
    scores.iter().map(|&s| Label::from_bool(s >= threshold)).collect()
}

fn class_counts(predicted: &[Label], gold: &[Label], class: Label) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (&p, &g) in predicted.iter().zip(gold) {
        match (p == class, g == class) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    c
}

fn check_aligned(predicted: usize, gold: usize) -> Result<()> {
    if predicted != gold {
        return Err(Error::InvalidInput(format!(
            "{predicted} predictions for {gold} gold labels"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NliReport {
    pub classes: Vec<ClassMetrics>,
    pub averaging: Averaging,
    pub average_f1: Option<f64>,
    pub accuracy: Option<f64>,
}

impl NliReport {
    pub fn class(&self, label: Label) -> Option<&ClassMetrics> {
        self.classes.iter().find(|c| c.name == label.to_string())
    }
}

/// Per-class metrics for positive and negative, and their average.
pub fn evaluate_nli(predicted: &[Label], gold: &[Label], averaging: Averaging) -> Result<NliReport> {
    check_aligned(predicted.len(), gold.len())?;
    let classes: Vec<ClassMetrics> = [Label::Positive, Label::Negative]
        .into_iter()
        .map(|l| ClassMetrics::from_counts(l.to_string(), class_counts(predicted, gold, l)))
        .collect();
    let correct = predicted.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(NliReport {
        average_f1: average_f1(&classes, averaging),
        accuracy: (!gold.is_empty()).then(|| correct as f64 / gold.len() as f64),
        classes,
        averaging,
    })
}

/// Positive-class metrics within each relation's pairs.
pub fn evaluate_per_relation(predicted: &[Label], gold: &[Label], relations: &[Relation]) -> Result<Vec<ClassMetrics>> {
    check_aligned(predicted.len(), gold.len())?;
    check_aligned(relations.len(), gold.len())?;
    let mut out = Vec::new();
    for &rel in Relation::ALL {
        let idx: Vec<usize> = (0..gold.len()).filter(|&i| relations[i] == rel).collect();
        if idx.is_empty() {
            continue;
        }
        let p: Vec<Label> = idx.iter().map(|&i| predicted[i]).collect();
        let g: Vec<Label> = idx.iter().map(|&i| gold[i]).collect();
        out.push(ClassMetrics::from_counts(rel.to_string(), class_counts(&p, &g, Label::Positive)));
    }
    Ok(out)
}

/// Parses relation tags, rejecting unknown names.
pub fn parse_relation_tags<S: AsRef<str>>(tags: &[S]) -> Result<Vec<Relation>> {
    tags.iter().map(|t| t.as_ref().parse()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EaeReport {
    pub sentences: usize,
    pub counts: ConfusionCounts,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub per_relation: Vec<ClassMetrics>,
}

/// Exact-match scoring of extracted triples against gold graphs. Both sides
/// must cover the same sentence ids.
pub fn evaluate_eae(predicted: &[EventArgumentGraph], gold: &[EventArgumentGraph]) -> Result<EaeReport> {
    let pred_ids: BTreeSet<&str> = predicted.iter().map(|g| g.sentence_id.as_str()).collect();
    let gold_ids: BTreeSet<&str> = gold.iter().map(|g| g.sentence_id.as_str()).collect();
    if pred_ids != gold_ids || pred_ids.len() != predicted.len() || gold_ids.len() != gold.len() {
        let missing: Vec<_> = gold_ids.symmetric_difference(&pred_ids).take(5).collect();
        return Err(Error::InvalidInput(format!(
            "predicted and gold graphs cover different sentences (e.g. {missing:?})"
        )));
    }
    let key = |g: &EventArgumentGraph| -> HashSet<(String, RelationAnnotation)> {
        g.triples().map(|t| (g.sentence_id.clone(), t)).collect()
    };
    let p: HashSet<_> = predicted.iter().flat_map(key).collect();
    let g: HashSet<_> = gold.iter().flat_map(key).collect();

    let mut by_rel: BTreeMap<Relation, ConfusionCounts> = Relation::ALL.iter().map(|&r| (r, ConfusionCounts::default())).collect();
    for t in p.intersection(&g) {
        by_rel.get_mut(&t.1.relation).expect("all relations").tp += 1;
    }
    for t in p.difference(&g) {
        by_rel.get_mut(&t.1.relation).expect("all relations").fp += 1;
    }
    for t in g.difference(&p) {
        by_rel.get_mut(&t.1.relation).expect("all relations").fn_ += 1;
    }
    let counts: ConfusionCounts = by_rel.values().copied().sum();
    Ok(EaeReport {
        sentences: gold.len(),
        counts,
        precision: counts.precision(),
        recall: counts.recall(),
        f1: f1_from_counts(&counts).ok(),
        per_relation: by_rel
            .into_iter()
            .filter(|(_, c)| !c.is_empty())
            .map(|(r, c)| ClassMetrics::from_counts(r.to_string(), c))
            .collect(),
    })
}

fn write_rows(f: &mut fmt::Formatter<'_>, rows: &[ClassMetrics]) -> fmt::Result {
    writeln!(f, "{:<12} {:>9} {:>9} {:>9} {:>8}", "", "Precision", "Recall", "F1", "Support")?;
    for r in rows {
        writeln!(
            f,
            "{:<12} {:>9} {:>9} {:>9} {:>8}",
            r.name,
            pct(r.precision),
            pct(r.recall),
            pct(r.f1),
            r.support
        )?;
    }
    Ok(())
}

impl fmt::Display for NliReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_rows(f, &self.classes)?;
        let name = match self.averaging {
            Averaging::Macro => "Average",
            Averaging::Weighted => "Weighted",
        };
        writeln!(f, "{:<12} {:>9} {:>9} {:>9}", name, "", "", pct(self.average_f1))?;
        write!(f, "accuracy {}", pct(self.accuracy))
    }
}

impl fmt::Display for EaeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_rows(f, &self.per_relation)?;
        writeln!(
            f,
            "{:<12} {:>9} {:>9} {:>9} {:>8}",
            "All",
            pct(self.precision),
            pct(self.recall),
            pct(self.f1),
            self.counts.tp + self.counts.fn_
        )?;
        write!(f, "TP {} FN {} FP {} over {} sentences", self.counts.tp, self.counts.fn_, self.counts.fp, self.sentences)
    }
}

/// A plain SVG bar chart of F1 per row, scaled to [0, 100].
pub fn f1_bar_chart_svg(title: &str, rows: &[ClassMetrics]) -> String {
    let (bar_w, gap, height, top, left) = (60.0, 20.0, 200.0, 30.0, 40.0);
    let width = left + rows.len() as f64 * (bar_w + gap) + gap;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"11\">\n",
        top + height + 40.0
    );
    svg.push_str(&format!("<text x=\"{left}\" y=\"18\" font-size=\"13\">{}</text>\n", escape(title)));
    svg.push_str(&format!(
        "<line x1=\"{left}\" y1=\"{}\" x2=\"{width}\" y2=\"{}\" stroke=\"black\"/>\n",
        top + height,
        top + height
    ));
    for (i, r) in rows.iter().enumerate() {
        let v = r.f1.unwrap_or(0.0).clamp(0.0, 1.0);
        let h = v * height;
        let x = left + gap + i as f64 * (bar_w + gap);
        let y = top + height - h;
        svg.push_str(&format!(
            "<rect x=\"{x}\" y=\"{y}\" width=\"{bar_w}\" height=\"{h}\" fill=\"#4a7ab5\"/>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            x + bar_w / 2.0,
            y - 4.0,
            pct(r.f1),
            x + bar_w / 2.0,
            top + height + 16.0,
            escape(&r.name)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AnnotatedSentence, EntityType};
    use crate::pipeline::Edge;
    use Label::{Negative as N, Positive as P};

    #[test]
    fn perfect_predictions() {
        let gold = [P, N, N, P, N];
        let r = evaluate_nli(&gold, &gold, Averaging::Macro).unwrap();
        for c in &r.classes {
            assert_eq!(c.f1, Some(1.0));
        }
        assert_eq!(r.average_f1, Some(1.0));
    }

    #[test]
    fn half_recall_full_precision() {
        let gold = [P, P, N, N];
        let pred = [P, N, N, N];
        let r = evaluate_nli(&pred, &gold, Averaging::Macro).unwrap();
        let pos = r.class(P).unwrap();
        assert_eq!(pos.precision, Some(1.0));
        assert_eq!(pos.recall, Some(0.5));
        assert!((pos.f1.unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_support_class_is_excluded() {
        let gold = [N, N, N];
        let r = evaluate_nli(&gold, &gold, Averaging::Macro).unwrap();
        assert_eq!(r.class(P).unwrap().f1, None);
        assert_eq!(r.average_f1, Some(1.0));
    }

    #[test]
    fn macro_is_unweighted_mean() {
        let classes = [
            ClassMetrics { name: "positive".into(), support: 781, counts: ConfusionCounts::default(), precision: None, recall: None, f1: Some(0.9224) },
            ClassMetrics { name: "negative".into(), support: 1435, counts: ConfusionCounts::default(), precision: None, recall: None, f1: Some(0.9578) },
        ];
        let avg = average_f1(&classes, Averaging::Macro).unwrap();
        assert!((avg - 0.9401).abs() < 1e-12);
        let w = average_f1(&classes, Averaging::Weighted).unwrap();
        assert!(w > avg);
    }

    #[test]
    fn per_relation_matches_restricted_positive_class() {
        let gold = [P, N, P, P, N, N];
        let pred = [P, P, N, P, N, P];
        let rels = [Relation::HasDate, Relation::HasDate, Relation::HasAgent, Relation::HasDate, Relation::HasAgent, Relation::HasAgent];
        let per = evaluate_per_relation(&pred, &gold, &rels).unwrap();
        for m in &per {
            let idx: Vec<usize> = (0..6).filter(|&i| rels[i].to_string() == m.name).collect();
            let p: Vec<_> = idx.iter().map(|&i| pred[i]).collect();
            let g: Vec<_> = idx.iter().map(|&i| gold[i]).collect();
            let whole = evaluate_nli(&p, &g, Averaging::Macro).unwrap();
            assert_eq!(whole.class(P).unwrap().f1, m.f1);
        }
        assert!(parse_relation_tags(&["hasDate", "hasWeapon"]).is_err());
    }

    fn graph(edges: &[(&str, Relation, &str)]) -> EventArgumentGraph {
        let s = AnnotatedSentence::new("s", "x y z")
            .with_entity("e", EntityType::Event, 0, 1)
            .with_entity("g", EntityType::Gpe, 2, 3)
            .with_entity("d", EntityType::Date, 4, 5);
        EventArgumentGraph {
            sentence_id: "s".into(),
            nodes: s.entities,
            edges: edges
                .iter()
                .map(|&(e, r, a)| Edge { event_id: e.into(), relation: r, argument_id: a.into(), confidence: 1.0 })
                .collect(),
        }
    }

    #[test]
    fn eae_counts_and_universe() {
        let gold = [graph(&[("e", Relation::HasLocation, "g"), ("e", Relation::HasDate, "d")])];
        let r = evaluate_eae(&gold, &gold).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (Some(1.0), Some(1.0), Some(1.0)));

        let none = [graph(&[])];
        let r = evaluate_eae(&none, &gold).unwrap();
        assert_eq!(r.recall, Some(0.0));
        assert_eq!(r.precision, None);

        let mut other = graph(&[]);
        other.sentence_id = "t".into();
        assert!(evaluate_eae(&[other], &gold).is_err());
    }

    #[test]
    fn chart_has_one_bar_per_row() {
        let rows = vec![ClassMetrics::from_counts("hasDate", ConfusionCounts::new(3, 1, 0))];
        let svg = f1_bar_chart_svg("F1 <per relation>", &rows);
        assert_eq!(svg.matches("<rect").count(), 1);
        assert!(svg.contains("&lt;per relation&gt;"));
    }
}
