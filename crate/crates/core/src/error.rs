use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

/// One invariant violation found while validating a corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationIssue {
    pub sentence_id: String,
    /// Entity ids (or relation triples rendered as `event -rel-> arg`) involved.
    pub ids: Vec<String>,
    pub message: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.sentence_id, self.message)?;
        if !self.ids.is_empty() {
            write!(f, " ({})", self.ids.join(", "))?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {locator}: {message}")]
    Parse { locator: String, message: String },

    #[error("{} validation error(s):\n{}", .0.len(), render_issues(.0))]
    Validation(Vec<ValidationIssue>),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown relation `{0}`")]
    UnknownRelation(String),

    #[error("entity `{entity_id}` of type {entity_type} is not a valid argument for {relation}")]
    IncompatibleType {
        entity_id: String,
        entity_type: String,
        relation: String,
    },

    #[error("unknown entity id `{0}`")]
    UnknownEntity(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("transport error (after {attempts} attempt(s)): {message}")]
    Transport { attempts: u32, message: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("model error: {0}")]
    Model(String),
}

fn render_issues(issues: &[ValidationIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("  - {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(locator: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            locator: locator.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
