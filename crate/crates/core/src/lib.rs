//! Black-box adversarial attacks on categorical sequence classifiers that
//! search the embedding space of a masked-reconstruction seq2seq model.

pub mod attacks;
pub mod autodiff;
pub mod classifiers;
pub mod data;
pub mod editdist;
pub mod error;
pub mod evaluation;
pub mod nn;
pub mod runner;
pub mod scalar;
pub mod seq2seq;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Scalar used by the runner and the CLI.
pub type Real = f64;
pub type Seq2SeqModel = seq2seq::Seq2Seq<Real>;
pub type EmbeddedStateF64 = seq2seq::EmbeddedState<Real>;
pub type TargetClassifierF64 = classifiers::TargetClassifier<Real>;
pub type SurrogateF64 = classifiers::Surrogate<Real>;
pub type DeepLevF64 = editdist::DeepLev<Real>;
pub type LanguageModelF64 = evaluation::LanguageModel<Real>;
