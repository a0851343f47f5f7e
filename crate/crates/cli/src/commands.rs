//! One function per subcommand.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use eae_core::corpus::{corpus_stats, load_corpus, CorpusFormat};
use eae_core::evaluator::{
    evaluate_eae, evaluate_nli, evaluate_per_relation, f1_bar_chart_svg, labels_from_scores, Averaging, ClassMetrics,
    NliReport,
};
use eae_core::iaa::{iaa_report, iaa_report_from_counts, CountsRow, ItemUniverse};
use eae_core::loss::LossConfig;
use eae_core::nli::{EntailmentModel, OracleModel};
use eae_core::pairgen::{build_nli_dataset, build_test_only_dataset, read_pairs, write_pairs, DatasetStats, Label, NliPair};
use eae_core::pipeline::ner::{GoldNer, MockNer, NerProvider, RecognizedSpan, RemoteNer, RemoteNerConfig};
use eae_core::pipeline::{extract_corpus, process_document, write_graphs, EventArgumentGraph, SentenceSplitter};
use eae_core::{Corpus, Relation, Split, TemplateRegistry};
use eae_model::train::{train_kfold, FoldReport, KFoldOutcome};
use eae_model::NliClassifier;
use serde::{Deserialize, Serialize};

use crate::config::{Experiment, ProviderKind, RunConfig};
use crate::manifest::{Manifest, Outputs};
use crate::{Command, CorpusArgs, SplitArg};

pub fn dispatch(command: Command, mut cfg: RunConfig) -> Result<String> {
    let name = command.name();
    match command {
        Command::Pairgen {
            corpus,
            test_only,
            templates,
        } => {
            apply_corpus_args(&mut cfg, corpus);
            if templates.is_some() {
                cfg.paths.templates = templates;
            }
            pairgen(&cfg, test_only)
        }
        Command::Train { dataset, corpus } => {
            apply_corpus_args(&mut cfg, corpus);
            if dataset.is_some() {
                cfg.paths.dataset = dataset;
            }
            train(&cfg)
        }
        Command::Eval {
            checkpoint,
            dataset,
            split,
            plot,
        } => {
            if checkpoint.is_some() {
                cfg.paths.checkpoint = checkpoint;
            }
            if dataset.is_some() {
                cfg.paths.dataset = dataset;
            }
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            eval(&cfg, split, plot)
        }
        Command::Iaa {
            counts,
            annotator_a,
            annotator_b,
            format,
        } => {
            if let Some(f) = format {
                cfg.paths.corpus_format = f;
            }
            iaa(&cfg, counts.as_deref(), annotator_a.as_deref().zip(annotator_b.as_deref()))
        }
        Command::Extract {
            corpus,
            text,
            checkpoint,
            oracle,
            provider,
            threshold,
        } => {
            apply_corpus_args(&mut cfg, corpus);
            if checkpoint.is_some() {
                cfg.paths.checkpoint = checkpoint;
            }
            if let Some(p) = provider {
                cfg.provider.kind = p;
            }
            if let Some(t) = threshold {
                cfg.extract.threshold = t;
                cfg.extract.validate()?;
            }
            extract(&cfg, text.as_deref(), oracle)
        }
        Command::Stats { corpus, dataset } => {
            apply_corpus_args(&mut cfg, corpus);
            if dataset.is_some() {
                cfg.paths.dataset = dataset;
            }
            stats(&cfg)
        }
    }
    .with_context(|| format!("{name} failed"))
}

fn apply_corpus_args(cfg: &mut RunConfig, args: CorpusArgs) {
    if args.corpus.is_some() {
        cfg.paths.corpus = args.corpus;
    }
    if let Some(f) = args.format {
        cfg.paths.corpus_format = f;
    }
    if args.relations.is_some() {
        cfg.paths.relations = args.relations;
    }
}

fn required<'a>(path: &'a Option<PathBuf>, what: &str, flag: &str) -> Result<&'a Path> {
    let path = path.as_deref().with_context(|| format!("no {what} given (use {flag})"))?;
    if !path.exists() {
        bail!("{what} {} does not exist", path.display());
    }
    Ok(path)
}

fn read_corpus_at(cfg: &RunConfig, path: &Path) -> Result<Corpus> {
    let mut format: CorpusFormat = cfg.paths.corpus_format.parse()?;
    if let CorpusFormat::Bio { relations } = &mut format {
        relations.clone_from(&cfg.paths.relations);
    }
    load_corpus(path, &format).with_context(|| format!("loading corpus {}", path.display()))
}

fn load_pairs(path: &Path) -> Result<Vec<NliPair>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_pairs(BufReader::new(file)).with_context(|| format!("reading pairs from {}", path.display()))
}

fn pairs_bytes(pairs: &[NliPair]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_pairs(pairs, &mut buf)?;
    Ok(buf)
}

// ---------------------------------------------------------------------------

pub fn pairgen(cfg: &RunConfig, test_only: bool) -> Result<String> {
    let path = required(&cfg.paths.corpus, "corpus", "--corpus")?;
    let corpus = read_corpus_at(cfg, path)?;
    let templates = cfg.templates()?;
    let dataset = if test_only {
        build_test_only_dataset(&corpus, &templates)?
    } else {
        build_nli_dataset(&corpus, &cfg.split, &templates)?
    };
    if dataset.pairs.is_empty() {
        bail!("corpus `{}` produced no pairs", corpus.name);
    }

    let mut manifest = Manifest::new("pairgen", cfg);
    manifest.input("corpus", path)?;
    if let Some(t) = &cfg.paths.templates {
        manifest.input("templates", t)?;
    }
    let mut out = Outputs::new(&cfg.paths.output_dir);
    out.add("pairs.jsonl", pairs_bytes(&dataset.pairs)?);
    #[derive(Serialize)]
    struct SplitIds<'a> {
        train: &'a [String],
        test: &'a [String],
    }
    out.add_json(
        "split.json",
        &SplitIds {
            train: &dataset.train_sentence_ids,
            test: &dataset.test_sentence_ids,
        },
    )?;
    out.add_json("stats.json", &dataset.stats)?;
    let report = format!("{}\n", dataset.stats);
    out.add("stats.txt", report.clone());
    out.commit(manifest, &[])?;
    Ok(report)
}

// ---------------------------------------------------------------------------

/// NLI metrics of a model on a list of pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEvaluation {
    pub pairs: usize,
    pub threshold: f64,
    pub nli: NliReport,
    /// Positive-class metrics per relation.
    pub per_relation: Vec<ClassMetrics>,
}

impl PairEvaluation {
    pub fn text(&self) -> String {
        let mut s = format!("{}\n\nPer relation (positive class)\n", self.nli);
        for c in &self.per_relation {
            let _ = writeln!(
                s,
                "{:<12} P {:>6} R {:>6} F1 {:>6} support {}",
                c.name,
                pct(c.precision),
                pct(c.recall),
                pct(c.f1),
                c.support
            );
        }
        s
    }

    /// Mean of a per-class metric over the classes present in the gold labels.
    pub fn macro_of(&self, pick: impl Fn(&ClassMetrics) -> Option<f64>) -> Option<f64> {
        let v: Vec<f64> = self.nli.classes.iter().filter(|c| c.support > 0).filter_map(pick).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}", x * 100.0)).unwrap_or_else(|| "n/a".into())
}

pub fn evaluate_model(model: &dyn EntailmentModel, pairs: &[NliPair], threshold: f64) -> Result<PairEvaluation> {
    if pairs.is_empty() {
        bail!("nothing to evaluate");
    }
    let batch: Vec<(&str, &str)> = pairs.iter().map(|p| (p.premise.as_str(), p.hypothesis.as_str())).collect();
    let scores = model.predict_batch(&batch)?;
    let predicted = labels_from_scores(&scores, threshold);
    let gold: Vec<Label> = pairs.iter().map(|p| p.label).collect();
    let relations: Vec<Relation> = pairs.iter().map(|p| p.relation).collect();
    Ok(PairEvaluation {
        pairs: pairs.len(),
        threshold,
        nli: evaluate_nli(&predicted, &gold, Averaging::Macro)?,
        per_relation: evaluate_per_relation(&predicted, &gold, &relations)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub folds: Vec<FoldReport>,
    pub fold_of: Vec<usize>,
    pub mean_average_f1: Option<f64>,
    pub best_fold: usize,
    /// Directory of the best fold's checkpoint, relative to the run.
    pub best_checkpoint: String,
}

fn summarize(outcome: &KFoldOutcome, checkpoint: &str) -> TrainingSummary {
    TrainingSummary {
        folds: outcome.folds.clone(),
        fold_of: outcome.fold_of.clone(),
        mean_average_f1: outcome.mean_average_f1,
        best_fold: outcome.best_fold,
        best_checkpoint: checkpoint.into(),
    }
}

fn fold_table(outcome: &KFoldOutcome) -> String {
    let mut s = String::from("fold  train  val  val-F1  skipped\n");
    for f in &outcome.folds {
        let f1 = f.validation.as_ref().and_then(|v| v.average_f1);
        let _ = writeln!(
            s,
            "{:>4} {:>6} {:>4} {:>7} {}",
            f.fold + 1,
            f.train_pairs,
            f.validation_pairs,
            pct(f1),
            if f.skipped { "yes" } else { "" }
        );
    }
    let _ = writeln!(s, "mean validation F1 {}; best fold {}", pct(outcome.mean_average_f1), outcome.best_fold + 1);
    s
}

fn run_folds(cfg: &RunConfig, train_pairs: &[NliPair], loss: &LossConfig) -> Result<KFoldOutcome> {
    let model = &cfg.model;
    Ok(train_kfold(train_pairs, &cfg.train, loss, &|seed| {
        model.build(seed).map_err(|e| eae_core::Error::Model(format!("{e:#}")))
    })?)
}

pub fn train(cfg: &RunConfig) -> Result<String> {
    let path = required(&cfg.paths.dataset, "dataset", "--dataset")?;
    let pairs = load_pairs(path)?;
    let train_pairs: Vec<NliPair> = pairs.iter().filter(|p| p.split == Split::Train).cloned().collect();
    let test_pairs: Vec<NliPair> = pairs.iter().filter(|p| p.split == Split::Test).cloned().collect();
    if train_pairs.is_empty() {
        bail!("dataset {} has no train split", path.display());
    }
    let mut manifest = Manifest::new("train", cfg);
    manifest.input("dataset", path)?;
    let mut out = Outputs::new(&cfg.paths.output_dir);
    let threshold = cfg.train.threshold;
    let mut report = String::new();

    match cfg.experiment {
        Experiment::Single => {
            let outcome = run_folds(cfg, &train_pairs, &cfg.loss)?;
            out.add_json("folds.json", &summarize(&outcome, "model"))?;
            report.push_str(&fold_table(&outcome));
            if !test_pairs.is_empty() {
                let ev = evaluate_model(outcome.best_model(), &test_pairs, threshold)?;
                let _ = write!(report, "\nTest split\n{}", ev.text());
                out.add_json("test_eval.json", &ev)?;
            }
            out.add("report.txt", report.clone());
            out.commit(manifest, &[("model".into(), outcome.best_model())])?;
        }
        Experiment::LossAblation => {
            if test_pairs.is_empty() {
                bail!("the loss ablation scores the test split, which {} lacks", path.display());
            }
            let mut rows = Vec::new();
            let mut outcomes = Vec::new();
            for (name, loss) in LossConfig::ablation_grid() {
                log::info!("loss configuration {name}");
                let slug: String = name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '-' }).collect();
                let outcome = run_folds(cfg, &train_pairs, &loss)?;
                let ev = evaluate_model(outcome.best_model(), &test_pairs, threshold)?;
                out.add_json(&format!("{slug}/folds.json"), &summarize(&outcome, "model"))?;
                let _ = write!(report, "== {name} ==\n{}\n", ev.nli);
                rows.push(AblationRow {
                    name: name.into(),
                    loss: Some(loss),
                    template: None,
                    evaluation: ev,
                });
                outcomes.push((format!("{slug}/model"), outcome));
            }
            out.add_json("ablation.json", &rows)?;
            out.add("report.txt", report.clone());
            let models: Vec<(String, &NliClassifier)> =
                outcomes.iter().map(|(n, o)| (n.clone(), o.best_model())).collect();
            out.commit(manifest, &models)?;
        }
        Experiment::TemplateAblation => {
            let corpus_path = required(&cfg.paths.corpus, "corpus", "--corpus")?;
            let corpus = read_corpus_at(cfg, corpus_path)?;
            manifest.input("corpus", corpus_path)?;
            let base = cfg.templates()?;
            let outcome = run_folds(cfg, &train_pairs, &cfg.loss)?;
            report.push_str(&fold_table(&outcome));
            report.push_str("\ntemplate      P       R      F1\n");
            let mut rows = Vec::new();
            for index in template_indices(&base) {
                let registry = base.with_test_template(index)?;
                let dataset = build_nli_dataset(&corpus, &cfg.split, &registry)?;
                let test: Vec<NliPair> = dataset.split(Split::Test).cloned().collect();
                let ev = evaluate_model(outcome.best_model(), &test, threshold)?;
                let _ = writeln!(
                    report,
                    "t{index:<8} {:>7} {:>7} {:>7}",
                    pct(ev.macro_of(|c| c.precision)),
                    pct(ev.macro_of(|c| c.recall)),
                    pct(ev.nli.average_f1)
                );
                rows.push(AblationRow {
                    name: format!("t{index}"),
                    loss: None,
                    template: Some(index),
                    evaluation: ev,
                });
            }
            out.add_json("folds.json", &summarize(&outcome, "model"))?;
            out.add_json("ablation.json", &rows)?;
            out.add("report.txt", report.clone());
            out.commit(manifest, &[("model".into(), outcome.best_model())])?;
        }
    }
    Ok(report)
}

/// Template indices defined for every relation.
fn template_indices(registry: &TemplateRegistry) -> Vec<u8> {
    let mut idx: Vec<u8> = registry.all().iter().map(|t| t.index).collect();
    idx.sort_unstable();
    idx.dedup();
    idx.retain(|&i| Relation::ALL.iter().all(|&r| registry.all().iter().any(|t| t.relation == r && t.index == i)));
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub loss: Option<LossConfig>,
    pub template: Option<u8>,
    pub evaluation: PairEvaluation,
}

// ---------------------------------------------------------------------------

fn load_checkpoint(cfg: &RunConfig) -> Result<NliClassifier> {
    let dir = required(&cfg.paths.checkpoint, "checkpoint", "--checkpoint")?;
    NliClassifier::load(dir).with_context(|| format!("loading checkpoint {}", dir.display()))
}

pub fn eval(cfg: &RunConfig, split: Split, plot: bool) -> Result<String> {
    let path = required(&cfg.paths.dataset, "dataset", "--dataset")?;
    let model = load_checkpoint(cfg)?;
    let pairs: Vec<NliPair> = load_pairs(path)?.into_iter().filter(|p| p.split == split).collect();
    if pairs.is_empty() {
        bail!("dataset {} has no {split} pairs", path.display());
    }
    let ev = evaluate_model(&model, &pairs, model.threshold()).map_err(|e| {
        e.context(format!(
            "checkpoint `{}` cannot score {}",
            model.config().identifier,
            path.display()
        ))
    })?;
    let mut manifest = Manifest::new("eval", cfg);
    manifest.input("dataset", path)?;
    manifest.input("checkpoint", cfg.paths.checkpoint.as_deref().expect("checked"))?;
    let mut out = Outputs::new(&cfg.paths.output_dir);
    out.add_json("eval.json", &ev)?;
    let report = ev.text();
    out.add("eval.txt", report.clone());
    if plot {
        let mut rows = ev.nli.classes.clone();
        rows.extend(ev.per_relation.iter().cloned());
        out.add("f1.svg", f1_bar_chart_svg(&format!("F1 on {split} ({} pairs)", ev.pairs), &rows));
    }
    out.commit(manifest, &[])?;
    Ok(report)
}

// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(untagged)]
enum CountsFile {
    List(Vec<CountsRow>),
    Table { rows: Vec<CountsRow> },
}

fn read_counts(path: &Path) -> Result<Vec<CountsRow>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let parsed: CountsFile = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text)?
    } else {
        serde_json::from_str(&text)?
    };
    Ok(match parsed {
        CountsFile::List(rows) | CountsFile::Table { rows } => rows,
    })
}

pub fn iaa(cfg: &RunConfig, counts: Option<&Path>, pair: Option<(&Path, &Path)>) -> Result<String> {
    let mut manifest = Manifest::new("iaa", cfg);
    let report = match (counts, pair) {
        (Some(path), _) => {
            if !path.exists() {
                bail!("counts file {} does not exist", path.display());
            }
            manifest.input("counts", path)?;
            iaa_report_from_counts(&read_counts(path)?)?
        }
        (None, Some((a, b))) => {
            let ca = read_corpus_at(cfg, a)?;
            let cb = read_corpus_at(cfg, b)?;
            manifest.input("annotator_a", a)?;
            manifest.input("annotator_b", b)?;
            let ta: Vec<&str> = ca.sentences().iter().map(|s| s.text.as_str()).collect();
            let tb: Vec<&str> = cb.sentences().iter().map(|s| s.text.as_str()).collect();
            if ta != tb {
                bail!("the two annotations do not cover the same sentences");
            }
            let universe = ItemUniverse::from_sentences(ca.sentences().iter().chain(cb.sentences()));
            let ra: Vec<_> = ca.sentences().iter().flat_map(|s| s.relations.iter().cloned()).collect();
            let rb: Vec<_> = cb.sentences().iter().flat_map(|s| s.relations.iter().cloned()).collect();
            iaa_report(&ra, &rb, &universe)?
        }
        (None, None) => bail!("give --counts or both --annotator-a and --annotator-b"),
    };
    let text = report.to_string();
    let mut out = Outputs::new(&cfg.paths.output_dir);
    out.add_json("iaa.json", &report)?;
    out.add("iaa.txt", format!("{text}\n"));
    out.commit(manifest, &[])?;
    Ok(text)
}

// ---------------------------------------------------------------------------

fn provider(cfg: &RunConfig, corpus: Option<&Corpus>) -> Result<Box<dyn NerProvider>> {
    Ok(match cfg.provider.kind {
        ProviderKind::Gold => Box::new(GoldNer::from_corpus(
            corpus.context("the gold provider needs an annotated --corpus")?,
        )),
        ProviderKind::Mock => {
            let path = required(&cfg.provider.mock_file, "mock response file", "provider.mock_file")?;
            let text = fs::read_to_string(path)?;
            let responses: BTreeMap<String, Vec<RecognizedSpan>> =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            Box::new(
                responses
                    .into_iter()
                    .fold(MockNer::new(), |m, (text, spans)| m.with_response(text, spans)),
            )
        }
        ProviderKind::Remote => Box::new(RemoteNer::new(RemoteNerConfig::from_env()?)?),
    })
}

pub fn extract(cfg: &RunConfig, text: Option<&Path>, oracle: bool) -> Result<String> {
    let corpus = match &cfg.paths.corpus {
        Some(_) => Some(read_corpus_at(cfg, required(&cfg.paths.corpus, "corpus", "--corpus")?)?),
        None => None,
    };
    let templates = cfg.templates()?;
    let model: Box<dyn EntailmentModel> = if oracle {
        let c = corpus.as_ref().context("--oracle answers from gold relations and needs --corpus")?;
        Box::new(OracleModel::from_corpus(c, &templates)?)
    } else {
        Box::new(load_checkpoint(cfg)?)
    };

    let mut manifest = Manifest::new("extract", cfg);
    if let Some(p) = &cfg.paths.corpus {
        manifest.input("corpus", p)?;
    }
    if let Some(p) = &cfg.paths.checkpoint {
        if !oracle {
            manifest.input("checkpoint", p)?;
        }
    }
    let mut out = Outputs::new(&cfg.paths.output_dir);
    let mut report = String::new();
    let graphs: Vec<EventArgumentGraph> = match text {
        Some(path) => {
            let doc = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            manifest.input("text", path)?;
            let ner = provider(cfg, corpus.as_ref())?;
            let doc_id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "doc".into());
            let result = process_document(
                &doc_id,
                &doc,
                &SentenceSplitter::default(),
                ner.as_ref(),
                model.as_ref(),
                &templates,
                &cfg.extract,
            )?;
            out.add_json("failures.json", &result.failures)?;
            let _ = writeln!(
                report,
                "{} graphs, {} failed sentences",
                result.graphs.len(),
                result.failures.len()
            );
            result.graphs
        }
        None => {
            let c = corpus.as_ref().context("give --corpus or --text")?;
            let predicted = extract_corpus(c, model.as_ref(), &templates, &cfg.extract)?;
            let gold: Vec<EventArgumentGraph> = c
                .sentences()
                .iter()
                .filter(|s| s.has_event())
                .map(EventArgumentGraph::from_gold)
                .collect();
            let eae = evaluate_eae(&predicted, &gold)?;
            let _ = writeln!(report, "{eae}");
            out.add_json("eae.json", &eae)?;
            predicted
        }
    };
    let mut buf = Vec::new();
    write_graphs(&graphs, &mut buf)?;
    out.add("graphs.jsonl", buf);
    out.add("report.txt", report.clone());
    out.commit(manifest, &[])?;
    Ok(report)
}

// ---------------------------------------------------------------------------

pub fn stats(cfg: &RunConfig) -> Result<String> {
    let mut manifest = Manifest::new("stats", cfg);
    let mut out = Outputs::new(&cfg.paths.output_dir);
    let mut report = String::new();
    if cfg.paths.corpus.is_none() && cfg.paths.dataset.is_none() {
        bail!("give --corpus and/or --dataset");
    }
    if cfg.paths.corpus.is_some() {
        let path = required(&cfg.paths.corpus, "corpus", "--corpus")?;
        let s = corpus_stats(&read_corpus_at(cfg, path)?);
        manifest.input("corpus", path)?;
        let _ = writeln!(report, "{s}");
        out.add_json("corpus_stats.json", &s)?;
    }
    if cfg.paths.dataset.is_some() {
        let path = required(&cfg.paths.dataset, "dataset", "--dataset")?;
        let s = DatasetStats::from_pairs(&load_pairs(path)?);
        manifest.input("dataset", path)?;
        let _ = writeln!(report, "{s}");
        out.add_json("dataset_stats.json", &s)?;
    }
    out.add("stats.txt", report.clone());
    out.commit(manifest, &[])?;
    Ok(report)
}
