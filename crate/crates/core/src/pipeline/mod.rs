//! End-to-end extraction: entities from a provider, one entailment query per
//! candidate (event, entity) pair, and a graph of the accepted edges.

mod graph;
pub mod ner;

use serde::{Deserialize, Serialize};

pub use graph::{read_graphs, write_graphs, Edge, EventArgumentGraph};
pub use ner::{recognize_entities, GoldNer, MockNer, NerProvider, ProviderKind, RecognizedSpan, RemoteNer, RemoteNerConfig};

use crate::corpus::{normalize_whitespace, AnnotatedSentence, Corpus, EntityMention, Relation};
use crate::error::{Error, Result};
use crate::nli::{EntailmentModel, DEFAULT_THRESHOLD};
use crate::templates::{instantiate, relation_for_entity_type, TemplateRegistry};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate<'a> {
    pub event: &'a EntityMention,
    pub entity: &'a EntityMention,
    pub relation: Relation,
}

/// Every EVENT mention paired with every mention whose type maps to a
/// relation. Events never fill argument slots.
pub fn candidate_pairs(sentence: &AnnotatedSentence) -> Vec<Candidate<'_>> {
    let mut out = Vec::new();
    for event in sentence.events() {
        for entity in &sentence.entities {
            if entity.is_event() {
                continue;
            }
            if let Some(relation) = relation_for_entity_type(entity.entity_type) {
                out.push(Candidate { event, entity, relation });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractConfig {
    pub threshold: f64,
    /// Pairs per model call; does not change results.
    pub batch_size: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            threshold: DEFAULT_THRESHOLD,
            batch_size: 32,
        }
    }
}

impl ExtractConfig {
    pub fn with_threshold(threshold: f64) -> Self {
        ExtractConfig {
            threshold,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.threshold.is_nan() {
            return Err(Error::Config("threshold is NaN".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Scores every candidate of `sentence` with its relation's test template
/// and keeps the pairs scoring at least the threshold.
pub fn extract_arguments(
    sentence: &AnnotatedSentence,
    model: &dyn EntailmentModel,
    templates: &TemplateRegistry,
    cfg: &ExtractConfig,
) -> Result<EventArgumentGraph> {
    cfg.validate()?;
    let candidates = candidate_pairs(sentence);
    let hypotheses = candidates
        .iter()
        .map(|c| instantiate(templates.test_template(c.relation), c.event, c.entity).map(|h| h.text))
        .collect::<Result<Vec<_>>>()?;

    let mut scores = Vec::with_capacity(candidates.len());
    for chunk in hypotheses.chunks(cfg.batch_size) {
        let batch: Vec<(&str, &str)> = chunk.iter().map(|h| (sentence.text.as_str(), h.as_str())).collect();
        let out = model.predict_batch(&batch)?;
        if out.len() != batch.len() {
            return Err(Error::Model(format!("model returned {} scores for {} pairs", out.len(), batch.len())));
        }
        scores.extend(out);
    }

    let edges = candidates
        .iter()
        .zip(scores)
        .filter(|(_, s)| *s >= cfg.threshold)
        .map(|(c, confidence)| Edge {
            event_id: c.event.entity_id.clone(),
            relation: c.relation,
            argument_id: c.entity.entity_id.clone(),
            confidence,
        })
        .collect();
    let mut graph = EventArgumentGraph {
        sentence_id: sentence.sentence_id.clone(),
        nodes: sentence.entities.clone(),
        edges,
    };
    graph.sort_edges();
    Ok(graph)
}

/// Runs extraction over the event sentences of an annotated corpus using its
/// gold mentions (relations are ignored).
pub fn extract_corpus(
    corpus: &Corpus,
    model: &dyn EntailmentModel,
    templates: &TemplateRegistry,
    cfg: &ExtractConfig,
) -> Result<Vec<EventArgumentGraph>> {
    corpus
        .sentences()
        .iter()
        .filter(|s| s.has_event())
        .map(|s| {
            let mut bare = s.clone();
            bare.relations.clear();
            extract_arguments(&bare, model, templates, cfg)
        })
        .collect()
}

/// Rule-based sentence splitter. A terminator ends a sentence when it is
/// followed by whitespace or the end of the text; newlines always do.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceSplitter {
    pub terminators: Vec<char>,
}

impl Default for SentenceSplitter {
    fn default() -> Self {
        SentenceSplitter {
            terminators: vec!['.', '!', '?', '؟'],
        }
    }
}

impl SentenceSplitter {
    pub fn split(&self, text: &str) -> Vec<String> {
        let chars: Vec<char> = text.chars().collect();
        let mut out = Vec::new();
        let mut current = String::new();
        for (i, &c) in chars.iter().enumerate() {
            if c == '\n' {
                push_sentence(&mut out, &mut current);
                continue;
            }
            current.push(c);
            let boundary = chars.get(i + 1).is_none_or(|n| n.is_whitespace());
            if self.terminators.contains(&c) && boundary {
                push_sentence(&mut out, &mut current);
            }
        }
        push_sentence(&mut out, &mut current);
        out
    }
}

fn push_sentence(out: &mut Vec<String>, current: &mut String) {
    let s = normalize_whitespace(current);
    if !s.is_empty() {
        out.push(s);
    }
    current.clear();
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceFailure {
    pub sentence_id: String,
    pub text: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DocumentResult {
    pub graphs: Vec<EventArgumentGraph>,
    pub failures: Vec<SentenceFailure>,
}

/// Splits `text`, tags each sentence, and extracts a graph for every
/// sentence that has an event. Sentence ids are `{doc_id}-s{n}` (1-based).
/// A failing sentence is recorded and processing moves on.
pub fn process_document(
    doc_id: &str,
    text: &str,
    splitter: &SentenceSplitter,
    provider: &dyn NerProvider,
    model: &dyn EntailmentModel,
    templates: &TemplateRegistry,
    cfg: &ExtractConfig,
) -> Result<DocumentResult> {
    cfg.validate()?;
    let mut result = DocumentResult::default();
    for (n, sentence_text) in splitter.split(text).into_iter().enumerate() {
        let sentence_id = format!("{doc_id}-s{}", n + 1);
        let outcome = recognize_entities(&sentence_id, &sentence_text, provider).and_then(|s| {
            if s.has_event() {
                extract_arguments(&s, model, templates, cfg).map(Some)
            } else {
                Ok(None)
            }
        });
        match outcome {
            Ok(Some(graph)) => result.graphs.push(graph),
            Ok(None) => {}
            Err(e) => {
                log::warn!("{sentence_id}: {e}");
                result.failures.push(SentenceFailure {
                    sentence_id,
                    text: sentence_text,
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(result)
}
