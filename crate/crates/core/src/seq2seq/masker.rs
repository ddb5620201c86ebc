use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{TokenId, TokenSequence};
use crate::error::{Error, Result};

/// A corruption / edit operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskOp {
    #[serde(alias = "add_token")]
    Add,
    Replace,
    Delete,
    Swap,
}

impl MaskOp {
    pub const ALL: [MaskOp; 4] = [MaskOp::Add, MaskOp::Replace, MaskOp::Delete, MaskOp::Swap];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn control_token(self) -> &'static str {
        match self {
            MaskOp::Add => "<add>",
            MaskOp::Replace => "<replace>",
            MaskOp::Delete => "<delete>",
            MaskOp::Swap => "<swap>",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MaskOp::Add => "add",
            MaskOp::Replace => "replace",
            MaskOp::Delete => "delete",
            MaskOp::Swap => "swap",
        }
    }
}

impl FromStr for MaskOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "add" | "addtoken" | "add_token" => Ok(MaskOp::Add),
            "replace" => Ok(MaskOp::Replace),
            "delete" => Ok(MaskOp::Delete),
            "swap" => Ok(MaskOp::Swap),
            other => Err(Error::Config(format!("unknown masker operation {other:?}"))),
        }
    }
}

/// Non-empty set of allowed edit operations, kept sorted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<MaskOp>", into = "Vec<MaskOp>")]
pub struct MaskerSet(Vec<MaskOp>);

impl MaskerSet {
    pub fn new(ops: impl IntoIterator<Item = MaskOp>) -> Result<Self> {
        let mut ops: Vec<MaskOp> = ops.into_iter().collect();
        ops.sort();
        ops.dedup();
        if ops.is_empty() {
            return Err(Error::Config("masker set must not be empty".into()));
        }
        Ok(Self(ops))
    }

    pub fn all() -> Self {
        Self(MaskOp::ALL.to_vec())
    }

    pub fn single(op: MaskOp) -> Self {
        Self(vec![op])
    }

    pub fn ops(&self) -> &[MaskOp] {
        &self.0
    }

    pub fn contains(&self, op: MaskOp) -> bool {
        self.0.contains(&op)
    }

    /// The full set followed by each single operation.
    pub fn training_default() -> Vec<MaskerSet> {
        std::iter::once(Self::all())
            .chain(MaskOp::ALL.iter().map(|&op| Self::single(op)))
            .collect()
    }
}

impl Default for MaskerSet {
    fn default() -> Self {
        Self::all()
    }
}

impl TryFrom<Vec<MaskOp>> for MaskerSet {
    type Error = Error;

    fn try_from(v: Vec<MaskOp>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<MaskerSet> for Vec<MaskOp> {
    fn from(m: MaskerSet) -> Self {
        m.0
    }
}

impl FromStr for MaskerSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::new(s.split([',', '+']).filter(|p| !p.trim().is_empty()).map(str::parse).collect::<Result<Vec<_>>>()?)
    }
}

impl fmt::Display for MaskerSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.0.iter().map(|op| op.name()).collect();
        f.write_str(&names.join(","))
    }
}

/// Applies `ceil(rate * |x|)` random operations drawn uniformly from `m`.
///
/// `regular` is the id range of ordinary tokens used by `Add` and
/// `Replace`. `Delete` never empties the sequence; `Replace` always picks a
/// token different from the current one when the alphabet allows it.
pub fn corrupt(
    x: &TokenSequence,
    m: &MaskerSet,
    rate: f64,
    regular: Range<TokenId>,
    rng: &mut impl Rng,
) -> TokenSequence {
    let mut ids = x.ids().to_vec();
    let n_ops = (rate * ids.len() as f64).ceil().max(0.0) as usize;
    let alphabet = regular.end.saturating_sub(regular.start);
    for _ in 0..n_ops {
        let op = m.ops()[rng.gen_range(0..m.ops().len())];
        match op {
            MaskOp::Add => {
                if alphabet > 0 {
                    let pos = rng.gen_range(0..=ids.len());
                    ids.insert(pos, rng.gen_range(regular.clone()));
                }
            }
            MaskOp::Replace => {
                let pos = rng.gen_range(0..ids.len());
                let cur = ids[pos];
                let in_alphabet = regular.contains(&cur);
                let choices = alphabet - u32::from(in_alphabet);
                if choices > 0 {
                    let mut tok = regular.start + rng.gen_range(0..choices);
                    if in_alphabet && tok >= cur {
                        tok += 1;
                    }
                    ids[pos] = tok;
                }
            }
            MaskOp::Delete => {
                if ids.len() > 1 {
                    let pos = rng.gen_range(0..ids.len());
                    ids.remove(pos);
                }
            }
            MaskOp::Swap => {
                if ids.len() > 1 {
                    let i = rng.gen_range(0..ids.len());
                    let mut j = rng.gen_range(0..ids.len() - 1);
                    if j >= i {
                        j += 1;
                    }
                    ids.swap(i, j);
                }
            }
        }
    }
    TokenSequence::new(ids).expect("corruption keeps sequences non-empty")
}
