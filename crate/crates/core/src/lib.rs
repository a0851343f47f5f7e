//! Event-argument extraction framed as textual entailment.
//!
//! A sentence with an event becomes the premise; each candidate argument
//! becomes a hypothesis built from a relation template. A binary entailment
//! model then decides which hypotheses hold.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod error;
pub mod evaluator;
pub mod iaa;
pub mod loss;
pub mod nli;
pub mod pairgen;
pub mod pipeline;
pub mod synth;
pub mod templates;

pub use corpus::{AnnotatedSentence, Corpus, EntityMention, EntityType, Relation, RelationAnnotation, TypeCompatibility};
pub use error::{Error, Result};
pub use nli::{EntailmentModel, TrainConfig};
pub use pairgen::{Label, NliPair};
pub use templates::{Split, TemplateRegistry};
