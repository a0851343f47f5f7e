//! Transformer entailment classifier, its training loop and checkpoints.

pub mod classifier;
pub mod encoder;
pub mod loss;
#[cfg(feature = "pretrained")]
pub mod pretrained;
pub mod tokenizer;
pub mod train;

pub use classifier::{ModelConfig, NliClassifier, TokenizerSpec, DEFAULT_ENCODER_ID};
pub use train::{train_kfold, train_model, EpochMetrics, EvalSummary, FoldReport, KFoldOutcome};
