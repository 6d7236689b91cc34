//! Desk-scale toolkit for training and evaluating small transformer text
//! classifiers that auto-tag short conversational sentences into a fixed
//! label set.
//!
//! Two architectures are supported: a bidirectional encoder that classifies
//! from the first ([CLS]) position and a causal decoder that classifies from
//! the last real token. Everything runs on CPU with 64-bit floats and is
//! deterministic for fixed seeds, from corpus generation through evaluation.

pub mod cli;
pub mod corpus;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod tokenizer;
pub mod trainer;
pub(crate) mod util;

pub use corpus::{CaseMode, LabelVocab, LabeledSentence, SplitSpec, SyntheticSpec};
pub use metrics::{ConfusionMatrix, EvalReport};
pub use model::{ArchKind, ClassifierModel, ModelConfig};
pub use numerics::{Rng, Tensor};
pub use tokenizer::{EncodedExample, TokenizerVocab};
pub use trainer::{TrainConfig, TrainHistory};
