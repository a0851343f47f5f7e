//! Named-entity providers.
//!
//! The pipeline only needs typed spans over a sentence. They can come from a
//! remote tagging service, from a gold-annotated corpus, or from a scripted
//! mock.

use std::collections::HashMap;
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedSentence, CharSpan, Corpus, EntityMention, EntityType};
use crate::error::{Error, Result};

pub const ENV_ENDPOINT: &str = "EAE_NER_ENDPOINT";
pub const ENV_TOKEN: &str = "EAE_NER_TOKEN";
pub const ENV_TIMEOUT_SECS: &str = "EAE_NER_TIMEOUT_SECS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    RemoteService,
    FileBackedGold,
    Mock,
}

/// One typed span as returned by a provider; offsets are characters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecognizedSpan {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(rename = "type")]
    pub entity_type: String,
    pub start: usize,
    pub end: usize,
}

impl RecognizedSpan {
    pub fn new(entity_type: EntityType, start: usize, end: usize) -> Self {
        RecognizedSpan {
            id: None,
            entity_type: entity_type.to_string(),
            start,
            end,
        }
    }
}

pub trait NerProvider: Send + Sync {
    fn kind(&self) -> ProviderKind;

    fn recognize(&self, text: &str) -> Result<Vec<RecognizedSpan>>;
}

/// Runs `provider` over `text` and turns its spans into mentions of a fresh
/// sentence (no relations).
pub fn recognize_entities(sentence_id: &str, text: &str, provider: &dyn NerProvider) -> Result<AnnotatedSentence> {
    let spans = provider.recognize(text)?;
    let text_len = text.chars().count();
    let mut sentence = AnnotatedSentence::new(sentence_id, text);
    for (n, span) in spans.into_iter().enumerate() {
        let entity_type: EntityType = span
            .entity_type
            .parse()
            .map_err(|_| Error::Protocol(format!("provider returned unknown type `{}`", span.entity_type)))?;
        let char_span = CharSpan::new(span.start, span.end);
        if char_span.is_empty() || span.end > text_len {
            return Err(Error::Protocol(format!(
                "provider span {}..{} outside sentence of {text_len} chars",
                span.start, span.end
            )));
        }
        let surface = char_span.slice(text).unwrap_or_default().to_string();
        sentence.entities.push(EntityMention {
            entity_id: span.id.unwrap_or_else(|| format!("{sentence_id}-T{}", n + 1)),
            sentence_id: sentence_id.to_string(),
            surface,
            span: char_span,
            entity_type,
        });
    }
    // Providers may legitimately repeat a span; keep the first copy.
    let mut seen = std::collections::HashSet::new();
    sentence.entities.retain(|e| seen.insert((e.span, e.entity_type)));
    if let Some(issue) = sentence.validate().into_iter().next() {
        return Err(Error::Protocol(format!("provider response invalid: {issue}")));
    }
    Ok(sentence)
}

/// Scripted responses keyed by exact text; unknown text yields no entities.
#[derive(Debug, Clone, Default)]
pub struct MockNer {
    responses: HashMap<String, Vec<RecognizedSpan>>,
    failures: HashMap<String, String>,
}

impl MockNer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_response(mut self, text: impl Into<String>, spans: Vec<RecognizedSpan>) -> Self {
        self.responses.insert(text.into(), spans);
        self
    }

    pub fn failing_on(mut self, text: impl Into<String>, message: impl Into<String>) -> Self {
        self.failures.insert(text.into(), message.into());
        self
    }
}

impl NerProvider for MockNer {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Mock
    }

    fn recognize(&self, text: &str) -> Result<Vec<RecognizedSpan>> {
        if let Some(msg) = self.failures.get(text) {
            return Err(Error::Transport {
                attempts: 1,
                message: msg.clone(),
            });
        }
        Ok(self.responses.get(text).cloned().unwrap_or_default())
    }
}

/// Serves the gold mentions of a corpus, looked up by sentence text.
#[derive(Debug, Clone, Default)]
pub struct GoldNer {
    by_text: HashMap<String, Vec<RecognizedSpan>>,
}

impl GoldNer {
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let mut by_text = HashMap::new();
        for s in corpus.sentences() {
            by_text.entry(s.text.clone()).or_insert_with(|| {
                s.entities
                    .iter()
                    .map(|e| RecognizedSpan {
                        id: Some(e.entity_id.clone()),
                        entity_type: e.entity_type.to_string(),
                        start: e.span.start,
                        end: e.span.end,
                    })
                    .collect()
            });
        }
        GoldNer { by_text }
    }
}

impl NerProvider for GoldNer {
    fn kind(&self) -> ProviderKind {
        ProviderKind::FileBackedGold
    }

    fn recognize(&self, text: &str) -> Result<Vec<RecognizedSpan>> {
        self.by_text
            .get(text)
            .cloned()
            .ok_or_else(|| Error::Protocol(format!("sentence not present in gold file: `{text}`")))
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct RemoteNerConfig {
    pub endpoint: String,
    pub token: Option<String>,
    pub timeout: Duration,
    pub max_retries: u32,
    pub backoff: Duration,
}

impl fmt::Debug for RemoteNerConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteNerConfig")
            .field("endpoint", &self.endpoint)
            .field("token", &self.token.as_ref().map(|_| "<redacted>"))
            .field("timeout", &self.timeout)
            .field("max_retries", &self.max_retries)
            .field("backoff", &self.backoff)
            .finish()
    }
}

impl RemoteNerConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteNerConfig {
            endpoint: endpoint.into(),
            token: None,
            timeout: Duration::from_secs(30),
            max_retries: 3,
            backoff: Duration::from_millis(500),
        }
    }

    /// Reads endpoint, token and timeout from the environment.
    pub fn from_env() -> Result<Self> {
        let endpoint = std::env::var(ENV_ENDPOINT)
            .map_err(|_| Error::Config(format!("{ENV_ENDPOINT} is not set")))?;
        let mut cfg = RemoteNerConfig::new(endpoint);
        cfg.token = std::env::var(ENV_TOKEN).ok().filter(|t| !t.is_empty());
        if let Ok(secs) = std::env::var(ENV_TIMEOUT_SECS) {
            let secs: u64 = secs
                .parse()
                .map_err(|_| Error::Config(format!("{ENV_TIMEOUT_SECS} must be an integer")))?;
            cfg.timeout = Duration::from_secs(secs);
        }
        Ok(cfg)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RemoteResponse {
    Bare(Vec<RecognizedSpan>),
    Wrapped { entities: Vec<RecognizedSpan> },
}

/// Client for a tagging service: `POST <endpoint>` with the raw sentence as
/// a UTF-8 text body; the reply is a JSON list of `{type, start, end, id?}`
/// spans, optionally wrapped as `{"entities": [...]}`.
pub struct RemoteNer {
    config: RemoteNerConfig,
    client: reqwest::blocking::Client,
}

impl RemoteNer {
    pub fn new(config: RemoteNerConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(RemoteNer { config, client })
    }

    fn attempt(&self, text: &str) -> std::result::Result<String, (bool, String)> {
        let mut req = self
            .client
            .post(&self.config.endpoint)
            .header(reqwest::header::CONTENT_TYPE, "text/plain; charset=utf-8")
            .body(text.to_string());
        if let Some(token) = &self.config.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| (true, e.to_string()))?;
        let status = resp.status();
        if status.is_success() {
            return resp.text().map_err(|e| (true, e.to_string()));
        }
        let retryable = status.is_server_error() || status == reqwest::StatusCode::TOO_MANY_REQUESTS;
        Err((retryable, format!("HTTP {status}")))
    }
}

impl NerProvider for RemoteNer {
    fn kind(&self) -> ProviderKind {
        ProviderKind::RemoteService
    }

    fn recognize(&self, text: &str) -> Result<Vec<RecognizedSpan>> {
        let max_attempts = self.config.max_retries + 1;
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(text) {
                Ok(body) => {
                    let parsed: RemoteResponse = serde_json::from_str(&body)
                        .map_err(|e| Error::Protocol(format!("malformed NER response: {e}")))?;
                    return Ok(match parsed {
                        RemoteResponse::Bare(v) => v,
                        RemoteResponse::Wrapped { entities } => entities,
                    });
                }
                Err((retryable, message)) => {
                    if !retryable || attempts >= max_attempts {
                        return Err(Error::Transport { attempts, message });
                    }
                    log::warn!("NER request failed ({message}), retrying");
                    std::thread::sleep(self.config.backoff * attempts);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mock_returns_exactly_the_script() {
        let text = "war in Gaza";
        let ner = MockNer::new().with_response(
            text,
            vec![RecognizedSpan::new(EntityType::Event, 0, 3), RecognizedSpan::new(EntityType::Gpe, 7, 11)],
        );
        let s = recognize_entities("s1", text, &ner).unwrap();
        let got: Vec<_> = s.entities.iter().map(|e| (e.entity_id.as_str(), e.surface.as_str())).collect();
        assert_eq!(got, [("s1-T1", "war"), ("s1-T2", "Gaza")]);
        assert!(s.relations.is_empty());
        assert!(recognize_entities("s2", "calm day", &ner).unwrap().entities.is_empty());
    }

    #[test]
    fn bad_spans_are_protocol_errors() {
        let ner = MockNer::new().with_response("abc", vec![RecognizedSpan::new(EntityType::Pers, 1, 9)]);
        assert!(matches!(recognize_entities("s", "abc", &ner), Err(Error::Protocol(_))));
        let ner = MockNer::new().with_response(
            "abc",
            vec![RecognizedSpan {
                id: None,
                entity_type: "ALIEN".into(),
                start: 0,
                end: 1,
            }],
        );
        assert!(matches!(recognize_entities("s", "abc", &ner), Err(Error::Protocol(_))));
    }

    #[test]
    fn gold_provider_is_identity() {
        let s = AnnotatedSentence::new("g1", "strike in Cairo")
            .with_entity("ev", EntityType::Event, 0, 6)
            .with_entity("c", EntityType::Gpe, 10, 15);
        let corpus = Corpus::new("c", vec![s.clone()]).unwrap();
        let ner = GoldNer::from_corpus(&corpus);
        let got = recognize_entities("g1", &s.text, &ner).unwrap();
        assert_eq!(got.entities, s.entities);
        assert!(recognize_entities("x", "unknown", &ner).is_err());
    }

    #[test]
    fn token_is_redacted_in_debug() {
        let mut cfg = RemoteNerConfig::new("http://localhost:1");
        cfg.token = Some("secret".into());
        assert!(!format!("{cfg:?}").contains("secret"));
    }
}
