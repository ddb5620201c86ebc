use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LabeledExample, RawExample, Vocabulary};
use crate::error::{Error, Result};

/// Labelling rule of a synthetic task. Token `i` is named `t{i}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticRule {
    /// Label 1 iff the marker token occurs. Two classes.
    MarkerPresence { marker: usize },
    /// Label is the most frequent of `t0..t{k-1}`; ties go to the lower id.
    MajorityToken,
    /// Label is the parity of the count of `token`. Two classes.
    Parity { token: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_classes: usize,
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub rule: SyntheticRule,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_classes: 2,
            vocab_size: 16,
            min_len: 5,
            max_len: 10,
            rule: SyntheticRule::MarkerPresence { marker: 3 },
            seed: 0,
            n_train: 2000,
            n_test: 400,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub vocab: Vocabulary,
    pub train: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
}

impl SyntheticData {
    pub fn raw(&self, examples: &[LabeledExample]) -> Vec<RawExample> {
        examples
            .iter()
            .map(|e| RawExample {
                tokens: self.vocab.decode(&e.sequence),
                label: e.label,
            })
            .collect()
    }
}

fn token_name(i: usize) -> String {
    format!("t{i}")
}

impl SyntheticRule {
    fn validate(&self, cfg: &SyntheticConfig) -> Result<()> {
        let check_token = |t: usize| {
            if t >= cfg.vocab_size {
                Err(Error::Config(format!("rule token t{t} outside vocabulary of {}", cfg.vocab_size)))
            } else {
                Ok(())
            }
        };
        match self {
            Self::MarkerPresence { marker } => {
                check_token(*marker)?;
                if cfg.n_classes != 2 {
                    return Err(Error::Config("marker rule has two classes".into()));
                }
            }
            Self::Parity { token } => {
                check_token(*token)?;
                if cfg.n_classes != 2 {
                    return Err(Error::Config("parity rule has two classes".into()));
                }
            }
            Self::MajorityToken => {
                if cfg.n_classes < 2 || cfg.n_classes > cfg.vocab_size {
                    return Err(Error::Config("majority rule needs 2..=vocab_size classes".into()));
                }
            }
        }
        Ok(())
    }

    /// Applies the rule to token indices (`t{i}` -> `i`).
    pub fn label(&self, tokens: &[usize], n_classes: usize) -> usize {
        match self {
            Self::MarkerPresence { marker } => usize::from(tokens.contains(marker)),
            Self::Parity { token } => tokens.iter().filter(|&&t| t == *token).count() % 2,
            Self::MajorityToken => {
                let mut counts = vec![0usize; n_classes];
                for &t in tokens {
                    if t < n_classes {
                        counts[t] += 1;
                    }
                }
                let best = *counts.iter().max().unwrap_or(&0);
                counts.iter().position(|&c| c == best).unwrap_or(0)
            }
        }
    }

    fn sample(&self, cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> (Vec<usize>, usize) {
        let len = rng.gen_range(cfg.min_len..=cfg.max_len);
        match self {
            Self::MarkerPresence { marker } => {
                let label = rng.gen_range(0..2);
                let others: Vec<usize> = (0..cfg.vocab_size).filter(|t| t != marker).collect();
                let mut toks: Vec<usize> = (0..len).map(|_| *others.choose(rng).unwrap()).collect();
                if label == 1 {
                    let pos = rng.gen_range(0..len);
                    toks[pos] = *marker;
                }
                (toks, label)
            }
            _ => {
                let toks: Vec<usize> = (0..len).map(|_| rng.gen_range(0..cfg.vocab_size)).collect();
                let label = self.label(&toks, cfg.n_classes);
                (toks, label)
            }
        }
    }
}

/// Deterministic train/test split for the configured rule.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    if cfg.vocab_size < 4 {
        return Err(Error::Config("synthetic vocab_size must be at least 4".into()));
    }
    if cfg.min_len == 0 || cfg.min_len > cfg.max_len {
        return Err(Error::Config("synthetic length range must satisfy 1 <= min <= max".into()));
    }
    cfg.rule.validate(cfg)?;
    let vocab = Vocabulary::from_tokens((0..cfg.vocab_size).map(token_name));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut make = |n: usize| -> Result<Vec<LabeledExample>> {
        (0..n)
            .map(|_| {
                let (toks, label) = cfg.rule.sample(cfg, &mut rng);
                let names: Vec<String> = toks.into_iter().map(token_name).collect();
                Ok(LabeledExample {
                    sequence: vocab.encode(&names)?,
                    label,
                })
            })
            .collect()
    };
    let train = make(cfg.n_train)?;
    let test = make(cfg.n_test)?;
    Ok(SyntheticData { vocab, train, test })
}
