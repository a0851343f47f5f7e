//! Relation-annotated nested NER corpora.
//!
//! A corpus is an ordered list of sentences. Each sentence carries its
//! (possibly nested) entity mentions and the event-argument relations that
//! link `EVENT` mentions to their agents, locations and dates. Offsets are
//! character offsets (Unicode scalar values) into the whitespace-normalized
//! sentence text, so Arabic text is addressed the same way as ASCII.
//!
//! Two on-disk formats are understood:
//!
//! * **JSONL** (canonical): one JSON object per sentence,
//!   `{"sentence_id", "text", "entities": [{"id","type","start","end"}], "relations": [{"event_id","relation","argument_id"}]}`.
//!   An optional first line `{"corpus": {"name", "source", "domains"}}` carries provenance.
//! * **Column/BIO**: one token per line, a token followed by one tag column per
//!   nesting layer (`B-EVENT`, `I-GPE#e12`, `O`), blank lines between sentences,
//!   `# sentence_id = ...` comments, plus a tab-separated relation sidecar
//!   `sentence_id  event_id  relation  argument_id`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationIssue};

macro_rules! string_enum {
    (
        $(#[$meta:meta])*
        pub enum $name:ident { $($variant:ident => $text:literal),+ $(,)? }
    ) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

string_enum! {
    /// The 21 tag names of the nested NER corpus.
    pub enum EntityType {
        Pers => "PERS",
        Norp => "NORP",
        Occ => "OCC",
        Org => "ORG",
        Gpe => "GPE",
        Loc => "LOC",
        Fac => "FAC",
        Event => "EVENT",
        Date => "DATE",
        Time => "TIME",
        Cardinal => "CARDINAL",
        Ordinal => "ORDINAL",
        Percent => "PERCENT",
        Language => "LANGUAGE",
        Quantity => "QUANTITY",
        Website => "WEBSITE",
        Unit => "UNIT",
        Law => "LAW",
        Product => "PRODUCT",
        Money => "MONEY",
        Curr => "CURR",
    }
}

impl EntityType {
    /// True for the ten types that take part in the event-argument schema.
    pub fn is_interpreted(self) -> bool {
        self == EntityType::Event || TypeCompatibility::relation_for(self).is_some()
    }
}

impl FromStr for EntityType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EntityType::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown entity type `{s}`")))
    }
}

string_enum! {
    /// Event-argument relation types.
    pub enum Relation {
        HasAgent => "hasAgent",
        HasLocation => "hasLocation",
        HasDate => "hasDate",
    }
}

impl FromStr for Relation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Relation::ALL
            .iter()
            .copied()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::UnknownRelation(s.to_string()))
    }
}

/// Which entity types may fill each relation's argument slot.
///
/// The three type sets are pairwise disjoint, so an argument's type alone
/// determines the only relation it can take part in.
#[derive(Debug, Clone, Copy, Default)]
pub struct TypeCompatibility;

impl TypeCompatibility {
    pub fn types_for(relation: Relation) -> &'static [EntityType] {
        use EntityType::*;
        match relation {
            Relation::HasAgent => &[Pers, Org, Occ, Norp],
            Relation::HasLocation => &[Gpe, Loc, Fac],
            Relation::HasDate => &[Time, Date],
        }
    }

    pub fn allows(relation: Relation, entity_type: EntityType) -> bool {
        Self::types_for(relation).contains(&entity_type)
    }

    pub fn relation_for(entity_type: EntityType) -> Option<Relation> {
        Relation::ALL
            .iter()
            .copied()
            .find(|&r| Self::allows(r, entity_type))
    }
}

/// Half-open character span `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
}

impl CharSpan {
    pub fn new(start: usize, end: usize) -> Self {
        CharSpan { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Extracts the spanned characters, or `None` when out of bounds.
    pub fn slice<'a>(&self, text: &'a str) -> Option<&'a str> {
        if self.start > self.end {
            return None;
        }
        let mut indices = text.char_indices().map(|(i, _)| i).chain(Some(text.len()));
        let begin = indices.nth(self.start)?;
        let finish = if self.end == self.start {
            begin
        } else {
            indices.nth(self.end - self.start - 1)?
        };
        Some(&text[begin..finish])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub entity_id: String,
    pub sentence_id: String,
    pub surface: String,
    pub span: CharSpan,
    pub entity_type: EntityType,
}

impl EntityMention {
    pub fn is_event(&self) -> bool {
        self.entity_type == EntityType::Event
    }
}

/// A gold `(event, relation, argument)` triple.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationAnnotation {
    pub event_id: String,
    pub relation: Relation,
    pub argument_id: String,
}

impl RelationAnnotation {
    pub fn new(event_id: impl Into<String>, relation: Relation, argument_id: impl Into<String>) -> Self {
        RelationAnnotation {
            event_id: event_id.into(),
            relation,
            argument_id: argument_id.into(),
        }
    }
}

impl fmt::Display for RelationAnnotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -{}-> {}", self.event_id, self.relation, self.argument_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    pub sentence_id: String,
    pub text: String,
    pub entities: Vec<EntityMention>,
    pub relations: Vec<RelationAnnotation>,
}

impl AnnotatedSentence {
    pub fn new(sentence_id: impl Into<String>, text: impl Into<String>) -> Self {
        AnnotatedSentence {
            sentence_id: sentence_id.into(),
            text: text.into(),
            entities: Vec::new(),
            relations: Vec::new(),
        }
    }

    /// Adds a mention whose surface is read off the sentence text.
    pub fn with_entity(
        mut self,
        entity_id: impl Into<String>,
        entity_type: EntityType,
        start: usize,
        end: usize,
    ) -> Self {
        let span = CharSpan::new(start, end);
        let surface = span.slice(&self.text).unwrap_or_default().to_string();
        self.entities.push(EntityMention {
            entity_id: entity_id.into(),
            sentence_id: self.sentence_id.clone(),
            surface,
            span,
            entity_type,
        });
        self
    }

    pub fn with_relation(
        mut self,
        event_id: impl Into<String>,
        relation: Relation,
        argument_id: impl Into<String>,
    ) -> Self {
        self.relations
            .push(RelationAnnotation::new(event_id, relation, argument_id));
        self
    }

    pub fn entity(&self, entity_id: &str) -> Option<&EntityMention> {
        self.entities.iter().find(|e| e.entity_id == entity_id)
    }

    pub fn events(&self) -> impl Iterator<Item = &EntityMention> {
        self.entities.iter().filter(|e| e.is_event())
    }

    pub fn has_event(&self) -> bool {
        self.entities.iter().any(|e| e.is_event())
    }

    /// Checks every sentence-local invariant; returns all violations.
    pub fn validate(&self) -> Vec<ValidationIssue> {
        let mut issues = Vec::new();
        let sid = &self.sentence_id;
        let issue = |ids: Vec<String>, message: String| ValidationIssue {
            sentence_id: sid.clone(),
            ids,
            message,
        };

        if self.text != normalize_whitespace(&self.text) {
            issues.push(issue(vec![], "sentence text is not whitespace-normalized".into()));
        }

        let text_len = self.text.chars().count();
        let mut seen_spans: HashSet<(CharSpan, EntityType)> = HashSet::new();
        let mut local_ids: HashMap<&str, &EntityMention> = HashMap::new();
        for e in &self.entities {
            if e.sentence_id != self.sentence_id {
                issues.push(issue(
                    vec![e.entity_id.clone()],
                    format!("mention claims sentence `{}`", e.sentence_id),
                ));
            }
            if e.span.is_empty() || e.span.end > text_len {
                issues.push(issue(
                    vec![e.entity_id.clone()],
                    format!(
                        "span {}..{} outside sentence of {} chars",
                        e.span.start, e.span.end, text_len
                    ),
                ));
            } else if e.span.slice(&self.text) != Some(e.surface.as_str()) {
                issues.push(issue(
                    vec![e.entity_id.clone()],
                    format!("surface `{}` does not match text at span", e.surface),
                ));
            }
            if !seen_spans.insert((e.span, e.entity_type)) {
                issues.push(issue(
                    vec![e.entity_id.clone()],
                    format!("duplicate {} mention at {}..{}", e.entity_type, e.span.start, e.span.end),
                ));
            }
            if local_ids.insert(&e.entity_id, e).is_some() {
                issues.push(issue(vec![e.entity_id.clone()], "entity id repeated within sentence".into()));
            }
        }

        let mut seen_triples = HashSet::new();
        for r in &self.relations {
            let ids = vec![r.to_string()];
            match local_ids.get(r.event_id.as_str()) {
                None => issues.push(issue(ids.clone(), "event id not found in this sentence".into())),
                Some(ev) if !ev.is_event() => issues.push(issue(
                    ids.clone(),
                    format!("relation head has type {}, expected EVENT", ev.entity_type),
                )),
                Some(_) => {}
            }
            match local_ids.get(r.argument_id.as_str()) {
                None => issues.push(issue(ids.clone(), "argument id not found in this sentence".into())),
                Some(arg) if !TypeCompatibility::allows(r.relation, arg.entity_type) => {
                    issues.push(issue(
                        ids.clone(),
                        format!("argument type {} incompatible with {}", arg.entity_type, r.relation),
                    ))
                }
                Some(_) => {}
            }
            if !seen_triples.insert(r) {
                issues.push(issue(ids, "duplicate relation triple".into()));
            }
        }
        issues
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub domains: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub name: String,
    pub provenance: Provenance,
    sentences: Vec<AnnotatedSentence>,
}

impl Corpus {
    /// Builds a corpus, rejecting it with every violation found if any
    /// invariant does not hold.
    pub fn new(name: impl Into<String>, sentences: Vec<AnnotatedSentence>) -> Result<Self> {
        Self::with_provenance(name, Provenance::default(), sentences)
    }

    pub fn with_provenance(
        name: impl Into<String>,
        provenance: Provenance,
        sentences: Vec<AnnotatedSentence>,
    ) -> Result<Self> {
        let corpus = Corpus {
            name: name.into(),
            provenance,
            sentences,
        };
        let issues = corpus.validate();
        if issues.is_empty() {
            Ok(corpus)
        } else {
            Err(Error::Validation(issues))
        }
    }

    pub fn empty(name: impl Into<String>) -> Self {
        Corpus {
            name: name.into(),
            provenance: Provenance::default(),
            sentences: Vec::new(),
        }
    }

    pub fn sentences(&self) -> &[AnnotatedSentence] {
        &self.sentences
    }

    pub fn sentence(&self, sentence_id: &str) -> Option<&AnnotatedSentence> {
        self.sentences.iter().find(|s| s.sentence_id == sentence_id)
    }

    pub fn relation_count(&self) -> usize {
        self.sentences.iter().map(|s| s.relations.len()).sum()
    }

    pub fn relation_counts(&self) -> BTreeMap<Relation, usize> {
        let mut counts: BTreeMap<Relation, usize> = Relation::ALL.iter().map(|&r| (r, 0)).collect();
        for r in self.sentences.iter().flat_map(|s| &s.relations) {
            *counts.entry(r.relation).or_default() += 1;
        }
        counts
    }

    fn validate(&self) -> Vec<ValidationIssue> {
        let mut issues = Vec::new();
        let mut sentence_ids = HashSet::new();
        let mut entity_owner: HashMap<&str, (usize, &str)> = HashMap::new();
        for (idx, s) in self.sentences.iter().enumerate() {
            if !sentence_ids.insert(s.sentence_id.as_str()) {
                issues.push(ValidationIssue {
                    sentence_id: s.sentence_id.clone(),
                    ids: vec![],
                    message: "duplicate sentence id".into(),
                });
            }
            issues.extend(s.validate());
            for e in &s.entities {
                if let Some((other_idx, other)) = entity_owner.insert(&e.entity_id, (idx, &s.sentence_id)) {
                    if other_idx != idx {
                        issues.push(ValidationIssue {
                            sentence_id: s.sentence_id.clone(),
                            ids: vec![e.entity_id.clone()],
                            message: format!("entity id already used in sentence `{other}`"),
                        });
                    }
                }
            }
        }
        issues
    }
}

/// Collapses whitespace runs to single spaces and trims the ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Returns the sentences holding at least one `EVENT` mention, in corpus order.
pub fn event_sentences(corpus: &Corpus) -> Vec<&AnnotatedSentence> {
    corpus.sentences().iter().filter(|s| s.has_event()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsReport {
    pub sentences: usize,
    pub event_sentences: usize,
    pub entities: usize,
    pub events: usize,
    pub relations: BTreeMap<Relation, usize>,
    pub total_relations: usize,
    pub events_with_arguments: usize,
    pub events_without_arguments: usize,
    pub events_with_two_or_more_arguments: usize,
    pub events_with_multiple_agents: usize,
    /// hasAgent relations that belong to events with more than one agent.
    pub agent_relations_on_multi_agent_events: usize,
}

pub fn corpus_stats(corpus: &Corpus) -> StatsReport {
    let mut report = StatsReport {
        sentences: corpus.sentences().len(),
        event_sentences: 0,
        entities: 0,
        events: 0,
        relations: corpus.relation_counts(),
        total_relations: corpus.relation_count(),
        events_with_arguments: 0,
        events_without_arguments: 0,
        events_with_two_or_more_arguments: 0,
        events_with_multiple_agents: 0,
        agent_relations_on_multi_agent_events: 0,
    };
    for s in corpus.sentences() {
        report.entities += s.entities.len();
        if s.has_event() {
            report.event_sentences += 1;
        }
        for ev in s.events() {
            report.events += 1;
            let args: Vec<_> = s
                .relations
                .iter()
                .filter(|r| r.event_id == ev.entity_id)
                .collect();
            let agents = args.iter().filter(|r| r.relation == Relation::HasAgent).count();
            match args.len() {
                0 => report.events_without_arguments += 1,
                n => {
                    report.events_with_arguments += 1;
                    if n >= 2 {
                        report.events_with_two_or_more_arguments += 1;
                    }
                }
            }
            if agents >= 2 {
                report.events_with_multiple_agents += 1;
                report.agent_relations_on_multi_agent_events += agents;
            }
        }
    }
    report
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>7}", "Relation", "Count")?;
        for (rel, n) in &self.relations {
            writeln!(f, "{:<12} {:>7}", rel.as_str(), n)?;
        }
        writeln!(f, "{:<12} {:>7}", "Total", self.total_relations)?;
        writeln!(f)?;
        writeln!(f, "sentences                         {}", self.sentences)?;
        writeln!(f, "sentences with events             {}", self.event_sentences)?;
        writeln!(f, "entities                          {}", self.entities)?;
        writeln!(f, "events                            {}", self.events)?;
        writeln!(f, "events with arguments             {}", self.events_with_arguments)?;
        writeln!(f, "events without arguments          {}", self.events_without_arguments)?;
        writeln!(f, "events with >= 2 arguments        {}", self.events_with_two_or_more_arguments)?;
        writeln!(f, "events with multiple agents       {}", self.events_with_multiple_agents)?;
        write!(f, "agent relations on those events   {}", self.agent_relations_on_multi_agent_events)
    }
}

// ---------------------------------------------------------------------------
// I/O
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    /// Column-per-token tags plus an optional relation sidecar. When loading
    /// from a path and no sidecar is given, `<path>.relations.tsv` is used if
    /// it exists.
    Bio { relations: Option<PathBuf> },
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" | "json" => Ok(CorpusFormat::Jsonl),
            "bio" | "conll" => Ok(CorpusFormat::Bio { relations: None }),
            other => Err(Error::Config(format!("unknown corpus format `{other}`"))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderRecord {
    corpus: HeaderBody,
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderBody {
    name: String,
    #[serde(flatten)]
    provenance: Provenance,
}

#[derive(Debug, Serialize, Deserialize)]
struct SentenceRecord {
    sentence_id: String,
    text: String,
    #[serde(default)]
    entities: Vec<EntityRecord>,
    #[serde(default)]
    relations: Vec<RelationAnnotation>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EntityRecord {
    id: String,
    #[serde(rename = "type")]
    entity_type: String,
    start: usize,
    end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    surface: Option<String>,
}

/// Loads and validates a corpus from a file.
pub fn load_corpus(path: impl AsRef<Path>, format: &CorpusFormat) -> Result<Corpus> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".into());
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    match format {
        CorpusFormat::Jsonl => read_corpus_jsonl(BufReader::new(file), &name),
        CorpusFormat::Bio { relations } => {
            let sidecar = relations.clone().or_else(|| {
                let mut p = path.as_os_str().to_owned();
                p.push(".relations.tsv");
                let p = PathBuf::from(p);
                p.exists().then_some(p)
            });
            let rel_reader = match &sidecar {
                Some(p) => Some(BufReader::new(File::open(p).map_err(|e| Error::io(p, e))?)),
                None => None,
            };
            read_corpus_bio(BufReader::new(file), rel_reader, &name)
        }
    }
}

pub fn read_corpus_jsonl<R: BufRead>(reader: R, default_name: &str) -> Result<Corpus> {
    let mut name = default_name.to_string();
    let mut provenance = Provenance::default();
    let mut sentences = Vec::new();
    let mut issues = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::parse(format!("line {lineno}"), e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        if sentences.is_empty() && line.trim_start().starts_with("{\"corpus\"") {
            let header: HeaderRecord = serde_json::from_str(&line)
                .map_err(|e| Error::parse(format!("line {lineno}"), e.to_string()))?;
            name = header.corpus.name;
            provenance = header.corpus.provenance;
            continue;
        }
        let record: SentenceRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(format!("line {lineno}"), e.to_string()))?;
        let mut sentence = AnnotatedSentence::new(record.sentence_id, record.text);
        for ent in record.entities {
            let entity_type: EntityType = ent.entity_type.parse().map_err(|_| {
                Error::parse(
                    format!("line {lineno}, entity {}", ent.id),
                    format!("unknown entity type `{}`", ent.entity_type),
                )
            })?;
            let span = CharSpan::new(ent.start, ent.end);
            let derived = span.slice(&sentence.text).map(str::to_string);
            let surface = match (ent.surface, derived) {
                (Some(given), Some(derived)) if given != derived => {
                    issues.push(ValidationIssue {
                        sentence_id: sentence.sentence_id.clone(),
                        ids: vec![ent.id.clone()],
                        message: format!("declared surface `{given}` differs from text `{derived}`"),
                    });
                    given
                }
                (Some(given), _) => given,
                (None, Some(derived)) => derived,
                (None, None) => String::new(),
            };
            sentence.entities.push(EntityMention {
                entity_id: ent.id,
                sentence_id: sentence.sentence_id.clone(),
                surface,
                span,
                entity_type,
            });
        }
        sentence.relations = record.relations;
        sentences.push(sentence);
    }

    match Corpus::with_provenance(name, provenance, sentences) {
        Err(Error::Validation(mut more)) => {
            issues.append(&mut more);
            Err(Error::Validation(issues))
        }
        Ok(_) if !issues.is_empty() => Err(Error::Validation(issues)),
        other => other,
    }
}

pub fn write_corpus_jsonl<W: Write>(corpus: &Corpus, mut writer: W) -> Result<()> {
    let io = |e: std::io::Error| Error::io("<corpus writer>", e);
    let header = HeaderRecord {
        corpus: HeaderBody {
            name: corpus.name.clone(),
            provenance: corpus.provenance.clone(),
        },
    };
    serde_json::to_writer(&mut writer, &header).map_err(|e| Error::Protocol(e.to_string()))?;
    writeln!(writer).map_err(io)?;
    for s in corpus.sentences() {
        let record = SentenceRecord {
            sentence_id: s.sentence_id.clone(),
            text: s.text.clone(),
            entities: s
                .entities
                .iter()
                .map(|e| EntityRecord {
                    id: e.entity_id.clone(),
                    entity_type: e.entity_type.as_str().to_string(),
                    start: e.span.start,
                    end: e.span.end,
                    surface: Some(e.surface.clone()),
                })
                .collect(),
            relations: s.relations.clone(),
        };
        serde_json::to_writer(&mut writer, &record).map_err(|e| Error::Protocol(e.to_string()))?;
        writeln!(writer).map_err(io)?;
    }
    Ok(())
}

struct OpenEntity {
    entity_type: EntityType,
    id: Option<String>,
    first_token: usize,
    last_token: usize,
}

struct PendingSentence {
    id: Option<String>,
    tokens: Vec<String>,
    finished: Vec<OpenEntity>,
    open: Vec<OpenEntity>,
}

impl PendingSentence {
    fn new() -> Self {
        PendingSentence {
            id: None,
            tokens: Vec::new(),
            finished: Vec::new(),
            open: Vec::new(),
        }
    }
}

/// Reads the column/BIO format. `relations` is the tab-separated sidecar.
pub fn read_corpus_bio<R: BufRead, S: BufRead>(
    reader: R,
    relations: Option<S>,
    default_name: &str,
) -> Result<Corpus> {
    let mut sentences = Vec::new();
    let mut pending = PendingSentence::new();

    let flush = |pending: &mut PendingSentence, sentences: &mut Vec<AnnotatedSentence>| {
        let mut p = std::mem::replace(pending, PendingSentence::new());
        if p.tokens.is_empty() {
            return;
        }
        p.finished.append(&mut p.open);
        sentences.push(assemble_bio_sentence(p, sentences.len() + 1));
    };

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::parse(format!("line {lineno}"), e.to_string()))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            flush(&mut pending, &mut sentences);
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                if key.trim() == "sentence_id" {
                    if !pending.tokens.is_empty() {
                        flush(&mut pending, &mut sentences);
                    }
                    pending.id = Some(value.trim().to_string());
                }
            }
            continue;
        }

        let mut columns = trimmed.split_whitespace();
        let token = columns.next().unwrap_or_default().to_string();
        let token_idx = pending.tokens.len();
        let mut continued = vec![false; pending.open.len()];
        let mut opened = Vec::new();

        for tag in columns {
            if tag == "O" {
                continue;
            }
            let locator = || format!("line {lineno}, tag `{tag}`");
            let (prefix, rest) = tag
                .split_once('-')
                .ok_or_else(|| Error::parse(locator(), "expected B-TYPE or I-TYPE"))?;
            let (type_name, id) = match rest.split_once('#') {
                Some((t, id)) => (t, Some(id.to_string())),
                None => (rest, None),
            };
            let entity_type: EntityType = type_name
                .parse()
                .map_err(|_| Error::parse(locator(), format!("unknown entity type `{type_name}`")))?;
            let start_new = match prefix {
                "B" => true,
                "I" => {
                    let found = pending.open.iter().enumerate().rev().find(|(i, o)| {
                        !continued[*i]
                            && o.entity_type == entity_type
                            && o.last_token + 1 == token_idx
                            && (id.is_none() || o.id == id)
                    });
                    match found {
                        Some((i, _)) => {
                            continued[i] = true;
                            false
                        }
                        None => {
                            log::warn!("{}: I- tag without an open entity, starting a new one", locator());
                            true
                        }
                    }
                }
                _ => return Err(Error::parse(locator(), "expected B-TYPE or I-TYPE")),
            };
            if start_new {
                opened.push(OpenEntity {
                    entity_type,
                    id,
                    first_token: token_idx,
                    last_token: token_idx,
                });
            }
        }

        let previous = std::mem::take(&mut pending.open);
        for (entity, cont) in previous.into_iter().zip(continued) {
            if cont {
                pending.open.push(OpenEntity {
                    last_token: token_idx,
                    ..entity
                });
            } else {
                pending.finished.push(entity);
            }
        }
        pending.open.extend(opened);
        pending.tokens.push(token);
    }
    flush(&mut pending, &mut sentences);

    if let Some(rel_reader) = relations {
        let index: HashMap<String, usize> = sentences
            .iter()
            .enumerate()
            .map(|(i, s)| (s.sentence_id.clone(), i))
            .collect();
        for (idx, line) in rel_reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::parse(format!("relations line {lineno}"), e.to_string()))?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split('\t').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(Error::parse(
                    format!("relations line {lineno}"),
                    "expected 4 tab-separated fields: sentence_id, event_id, relation, argument_id",
                ));
            }
            let relation: Relation = fields[2]
                .parse()
                .map_err(|_| Error::parse(format!("relations line {lineno}"), format!("unknown relation `{}`", fields[2])))?;
            let &si = index.get(fields[0]).ok_or_else(|| {
                Error::parse(format!("relations line {lineno}"), format!("unknown sentence `{}`", fields[0]))
            })?;
            sentences[si]
                .relations
                .push(RelationAnnotation::new(fields[1], relation, fields[3]));
        }
    }

    Corpus::new(default_name, sentences)
}

fn assemble_bio_sentence(p: PendingSentence, ordinal: usize) -> AnnotatedSentence {
    let sentence_id = p.id.unwrap_or_else(|| format!("s{ordinal}"));
    // Character offset of each token in the space-joined text.
    let mut starts = Vec::with_capacity(p.tokens.len());
    let mut cursor = 0;
    for tok in &p.tokens {
        starts.push(cursor);
        cursor += tok.chars().count() + 1;
    }
    let text = p.tokens.join(" ");
    let mut entities = p.finished;
    entities.sort_by_key(|e| (e.first_token, std::cmp::Reverse(e.last_token), e.entity_type));

    let mut sentence = AnnotatedSentence::new(sentence_id.clone(), text);
    for (n, e) in entities.into_iter().enumerate() {
        let start = starts[e.first_token];
        let end = starts[e.last_token] + p.tokens[e.last_token].chars().count();
        let id = e.id.unwrap_or_else(|| format!("{sentence_id}-T{}", n + 1));
        sentence = sentence.with_entity(id, e.entity_type, start, end);
    }
    sentence
}
