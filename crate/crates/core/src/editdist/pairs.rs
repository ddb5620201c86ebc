use std::io::{BufRead, Write};
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::wer_norm;
use crate::data::{TokenId, TokenSequence};
use crate::error::{Error, Result};
use crate::seq2seq::{corrupt, MaskerSet};

/// Training pair for the edit-distance surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairExample {
    pub x: TokenSequence,
    pub y: TokenSequence,
    pub target: f64,
}

impl PairExample {
    pub fn new(x: TokenSequence, y: TokenSequence) -> Self {
        let target = wer_norm(x.ids(), y.ids());
        Self { x, y, target }
    }
}

/// `round(count * distant_fraction)` pairs of distinct corpus entries, the
/// rest `(x, corrupt(x, m))`, shuffled together.
pub fn generate_pairs(
    corpus: &[TokenSequence],
    count: usize,
    m: &MaskerSet,
    rate: f64,
    distant_fraction: f64,
    regular: Range<TokenId>,
    rng: &mut impl Rng,
) -> Result<Vec<PairExample>> {
    if corpus.len() < 2 {
        return Err(Error::Config("pair generation needs at least two sequences".into()));
    }
    if !(0.0..=1.0).contains(&distant_fraction) {
        return Err(Error::Config(format!("distant_fraction {distant_fraction} outside [0, 1]")));
    }
    let n_distant = (count as f64 * distant_fraction).round() as usize;
    let mut pairs = Vec::with_capacity(count);
    for k in 0..count {
        let i = rng.gen_range(0..corpus.len());
        let x = corpus[i].clone();
        let y = if k < n_distant {
            let mut j = rng.gen_range(0..corpus.len() - 1);
            if j >= i {
                j += 1;
            }
            corpus[j].clone()
        } else {
            corrupt(&x, m, rate, regular.clone(), rng)
        };
        pairs.push(PairExample::new(x, y));
    }
    use rand::seq::SliceRandom;
    pairs.shuffle(rng);
    Ok(pairs)
}

pub fn write_pairs(path: &Path, pairs: &[PairExample]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for p in pairs {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_pairs(path: &Path) -> Result<Vec<PairExample>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut pairs = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PairExample = serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        pairs.push(p);
    }
    Ok(pairs)
}
