//! Masked-reconstruction sequence-to-sequence model: the encoder `E(x)`,
//! beam-search decoder `D(z)`, corruption maskers and training.

mod masker;
mod model;
mod train;

use serde::{Deserialize, Serialize};

pub use masker::{corrupt, MaskOp, MaskerSet};
pub use model::{DecoderContext, Seq2Seq, Seq2SeqConfig};
pub use train::{reconstruction_accuracy, train_seq2seq, ReconstructionStats};

use crate::autodiff::Mat;
use crate::data::TokenSequence;
use crate::scalar::Scalar;

/// Encoder states `z = E(x)`: one row per framed position (`|x| + 2`).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedState<T> {
    matrix: Mat<T>,
}

impl<T: Scalar> EmbeddedState<T> {
    pub fn new(matrix: Mat<T>) -> Self {
        Self { matrix }
    }

    pub fn matrix(&self) -> &Mat<T> {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut Mat<T> {
        &mut self.matrix
    }

    pub fn into_matrix(self) -> Mat<T> {
        self.matrix
    }

    /// Rows including the two framing positions.
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn width(&self) -> usize {
        self.matrix.ncols()
    }

    /// Length of the sequence this state frames.
    pub fn sequence_len(&self) -> usize {
        self.rows().saturating_sub(2)
    }

    pub fn is_finite(&self) -> bool {
        self.matrix.iter().all(|x| x.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.matrix.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.matrix
            .iter()
            .zip(other.matrix.iter())
            .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub sequence: TokenSequence,
    pub log_prob: f64,
    /// `false` when the hypothesis hit the length bound.
    pub terminated: bool,
}

/// Beam hypotheses sorted by total log-probability, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamResult {
    pub hypotheses: Vec<Hypothesis>,
    pub beam: usize,
}

impl BeamResult {
    pub fn top(&self) -> &TokenSequence {
        &self.hypotheses[0].sequence
    }
}
