use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seq2seq::MaskOp;

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];
const VOCAB_HEADER: &str = "#seqadv-vocab v1";

/// Number of reserved ids: the four framing specials plus one control
/// token per masker operation.
pub const NUM_RESERVED: usize = SPECIALS.len() + MaskOp::ALL.len();

/// Fixed id of the control token announcing `op` to the encoder.
pub fn control_token_id(op: MaskOp) -> TokenId {
    (SPECIALS.len() + op.index()) as TokenId
}

/// Token alphabet. Ids are dense, the reserved tokens come first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Vocabulary over the given regular tokens, in order. Duplicates and
    /// tokens that collide with reserved names are skipped.
    pub fn from_tokens<I, S>(regular: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(MaskOp::ALL.iter().map(|op| op.control_token().to_string()));
        let mut index: HashMap<String, TokenId> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        for tok in regular {
            let tok = tok.into();
            if index.contains_key(&tok) {
                continue;
            }
            index.insert(tok.clone(), tokens.len() as TokenId);
            tokens.push(tok);
        }
        Self { tokens, index }
    }

    /// Keeps every token seen at least `min_freq` times, most frequent
    /// first (ties by token string).
    pub fn build<S: AsRef<str>>(corpus: &[Vec<S>], min_freq: usize) -> Result<Self> {
        if corpus.iter().all(|s| s.is_empty()) {
            return Err(Error::EmptyCorpus);
        }
        let min_freq = min_freq.max(1);
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for tok in corpus.iter().flatten() {
            *counts.entry(tok.as_ref()).or_default() += 1;
        }
        let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_freq).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Ok(Self::from_tokens(kept.into_iter().map(|(t, _)| t)))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn num_regular(&self) -> usize {
        self.len() - NUM_RESERVED
    }

    /// Id of `token`, or `UNK`.
    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn control_id(&self, op: MaskOp) -> TokenId {
        control_token_id(op)
    }

    /// Reserved ids never appear inside a stored sequence except `UNK`.
    pub fn is_reserved(id: TokenId) -> bool {
        (id as usize) < NUM_RESERVED
    }

    /// Ids of the regular (non-reserved) tokens.
    pub fn regular_ids(&self) -> std::ops::Range<TokenId> {
        NUM_RESERVED as TokenId..self.len() as TokenId
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<super::TokenSequence> {
        super::TokenSequence::new(tokens.iter().map(|t| self.id(t.as_ref())).collect())
    }

    pub fn decode(&self, seq: &super::TokenSequence) -> Vec<String> {
        seq.ids().iter().map(|&i| self.token(i).to_string()).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.tokens.len() * 8);
        out.push_str(VOCAB_HEADER);
        out.push('\n');
        for t in &self.tokens {
            let _ = writeln!(out, "{t}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(VOCAB_HEADER) => {}
            other => {
                return Err(Error::parse(
                    "<vocab>",
                    1,
                    format!("expected header {VOCAB_HEADER:?}, got {other:?}"),
                ))
            }
        }
        let tokens: Vec<&str> = lines.collect();
        let expected_reserved = Self::from_tokens(std::iter::empty::<String>());
        if tokens.len() < NUM_RESERVED || tokens[..NUM_RESERVED] != expected_reserved.tokens[..] {
            return Err(Error::parse("<vocab>", 2, "reserved tokens missing or out of order"));
        }
        let vocab = Self::from_tokens(tokens[NUM_RESERVED..].iter().copied());
        if vocab.len() != tokens.len() {
            return Err(Error::parse("<vocab>", 2, "duplicate tokens"));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// SHA-256 of the persisted text form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}
