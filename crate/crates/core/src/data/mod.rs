//! Vocabulary, token sequences, dataset loaders and synthetic tasks.

mod binning;
mod loaders;
mod synthetic;
mod vocab;

use serde::{Deserialize, Serialize};

pub use binning::{encode_transaction, DecileBinning};
pub use loaders::{load_dataset, load_raw, preprocess_text, Dataset, DatasetFormat, LoadOptions, RawExample};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticData, SyntheticRule};
pub use vocab::{control_token_id, TokenId, Vocabulary, BOS, EOS, NUM_RESERVED, PAD, UNK};

use crate::error::{Error, Result};

/// Non-empty sequence of token ids. Framing tokens are added only at
/// model boundaries and never stored here.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<TokenId>", into = "Vec<TokenId>")]
pub struct TokenSequence(Vec<TokenId>);

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Config("token sequence must be non-empty".into()));
        }
        if ids.iter().any(|&t| t == PAD || t == BOS || t == EOS) {
            return Err(Error::Config("token sequence contains PAD/BOS/EOS".into()));
        }
        Ok(Self(ids))
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_ids(self) -> Vec<TokenId> {
        self.0
    }
}

impl TryFrom<Vec<TokenId>> for TokenSequence {
    type Error = Error;

    fn try_from(ids: Vec<TokenId>) -> Result<Self> {
        Self::new(ids)
    }
}

impl From<TokenSequence> for Vec<TokenId> {
    fn from(s: TokenSequence) -> Self {
        s.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub sequence: TokenSequence,
    pub label: usize,
}

/// Number of classes implied by the largest label.
pub fn num_classes(examples: &[LabeledExample]) -> usize {
    examples.iter().map(|e| e.label + 1).max().unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sequence_rejects_empty_and_framing() {
        assert!(TokenSequence::new(vec![]).is_err());
        assert!(TokenSequence::new(vec![10, PAD]).is_err());
        assert!(TokenSequence::new(vec![EOS]).is_err());
        assert!(TokenSequence::new(vec![UNK, 9]).is_ok());
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(words in prop::collection::vec("[a-e]{1,3}", 1..12)) {
            let vocab = Vocabulary::build(&[words.clone()], 1).unwrap();
            let seq = vocab.encode(&words).unwrap();
            prop_assert_eq!(vocab.decode(&seq), words);
        }
    }
}
