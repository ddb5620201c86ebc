//! Attack generators over the seq2seq embedding space and the selection
//! rule that turns a candidate trace into one adversarial sequence.

mod generators;
mod hotflip;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use generators::{
    cascada_attack, cascada_objective, mcmc_accept, mcmc_alpha, mcmc_step, random_walk_attack, random_walk_step,
    McmcState,
};
pub use hotflip::{flip_gains, hotflip_attack, Flip};

use crate::classifiers::{SequenceClassifier, StateHead, TokenSurrogate};
use crate::data::{TokenId, TokenSequence};
use crate::editdist::{edit_script, wer, DeepLev, EditCounts};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seq2seq::{MaskerSet, Seq2Seq};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    RandomWalk,
    Mcmc,
    Cascada,
    Hotflip,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::RandomWalk, Method::Mcmc, Method::Cascada, Method::Hotflip];

    pub fn name(self) -> &'static str {
        match self {
            Method::RandomWalk => "random_walk",
            Method::Mcmc => "mcmc",
            Method::Cascada => "cascada",
            Method::Hotflip => "hotflip",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown attack method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// Candidate budget `N`.
    pub n: usize,
    /// Proposal standard deviation.
    pub sigma: f64,
    pub sigma_wer: f64,
    pub sigma_class: f64,
    pub lambda: f64,
    pub step_size: f64,
    pub beam: usize,
    pub masker: MaskerSet,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            n: 100,
            sigma: 0.1,
            sigma_wer: 1.0,
            sigma_class: 0.5,
            lambda: 1.0,
            step_size: 0.1,
            beam: 5,
            masker: MaskerSet::all(),
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sigma", self.sigma),
            ("sigma_wer", self.sigma_wer),
            ("sigma_class", self.sigma_class),
            ("step_size", self.step_size),
        ];
        if self.n == 0 {
            return Err(Error::Config("attack budget n must be at least 1".into()));
        }
        if self.beam == 0 {
            return Err(Error::Config("beam must be at least 1".into()));
        }
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// One generator step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub step: usize,
    /// Frobenius norm of the embedded state; absent for token-space attacks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_norm: Option<f64>,
    pub sequence: TokenSequence,
    /// Guidance probability of the attacked class.
    pub score: f64,
    pub label: usize,
    pub wer: usize,
    /// MCMC only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accepted: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

/// Edit kinds of a minimal script from the original to the adversarial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditAudit {
    pub edits: EditCounts,
    pub length_delta: i64,
    pub multiset_preserved: bool,
}

impl EditAudit {
    pub fn new(x: &[TokenId], y: &[TokenId]) -> Self {
        let mut a = x.to_vec();
        let mut b = y.to_vec();
        a.sort_unstable();
        b.sort_unstable();
        Self {
            edits: edit_script(x, y),
            length_delta: y.len() as i64 - x.len() as i64,
            multiset_preserved: a == b,
        }
    }

    /// Whether every edit is allowed by the masker. Swaps show up as
    /// substitutions in a minimal script, so they are accepted only when
    /// the token multiset is preserved.
    pub fn respects(&self, m: &MaskerSet) -> bool {
        use crate::seq2seq::MaskOp;
        let subs_ok = self.edits.substitutions == 0
            || m.contains(MaskOp::Replace)
            || (m.contains(MaskOp::Swap) && self.multiset_preserved);
        (self.edits.insertions == 0 || m.contains(MaskOp::Add))
            && (self.edits.deletions == 0 || m.contains(MaskOp::Delete))
            && subs_ok
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub index: usize,
    pub method: Method,
    pub original: TokenSequence,
    /// The attacked class `c_x`.
    pub label: usize,
    pub adversarial: TokenSequence,
    /// Trace position of the adversarial; absent when the trace is empty.
    pub selected: Option<usize>,
    /// Whether any candidate changed the guidance label.
    pub flipped: bool,
    pub wer: usize,
    pub audit: EditAudit,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<CandidateRecord>,
    #[serde(skip)]
    pub wall_time: std::time::Duration,
}

/// If some candidate has a label other than `c_x`, the one of those with
/// the smallest `wer`; otherwise the one with the smallest score. Ties go
/// to the earliest step.
pub fn select(trace: &[CandidateRecord], c_x: usize) -> Option<usize> {
    let flipped = trace
        .iter()
        .enumerate()
        .filter(|(_, r)| r.label != c_x)
        .min_by_key(|(_, r)| r.wer)
        .map(|(i, _)| i);
    flipped.or_else(|| {
        trace
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.score.total_cmp(&b.1.score))
            .map(|(i, _)| i)
    })
}

/// Models an attack may use. The target classifier is never among them.
pub struct AttackModels<'a, T: Scalar> {
    pub seq2seq: &'a Seq2Seq<T>,
    /// Scores decoded candidates.
    pub guidance: &'a dyn SequenceClassifier,
    pub state_head: Option<&'a StateHead<T>>,
    pub deep_lev: Option<&'a DeepLev<T>>,
    pub token_surrogate: Option<&'a TokenSurrogate<T>>,
}

impl<'a, T: Scalar> AttackModels<'a, T> {
    pub(crate) fn record(
        &self,
        step: usize,
        z_norm: Option<f64>,
        sequence: TokenSequence,
        x: &TokenSequence,
        c_x: usize,
    ) -> CandidateRecord {
        let (probs, label) = self.guidance.classify(&sequence);
        CandidateRecord {
            step,
            z_norm,
            score: probs.get(c_x).copied().unwrap_or(0.0),
            label,
            wer: wer(sequence.ids(), x.ids()),
            sequence,
            accepted: None,
            diagnostic: None,
        }
    }
}

/// Random stream of example `index`, independent of every other example.
pub fn example_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Runs one generator for `cfg.n` steps and applies [`select`].
pub fn run_attack<T: Scalar>(
    index: usize,
    x: &TokenSequence,
    c_x: usize,
    method: Method,
    models: &AttackModels<'_, T>,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate()?;
    let start = std::time::Instant::now();
    let mut rng = example_rng(cfg.seed, index);
    let trace = match method {
        Method::RandomWalk => random_walk_attack(x, c_x, models, cfg, &mut rng),
        Method::Mcmc => {
            let mut state = McmcState::new(models.seq2seq.encode(x, &cfg.masker), x.clone(), c_x);
            (1..=cfg.n)
                .map(|step| mcmc_step(&mut state, step, models, cfg, &mut rng))
                .collect()
        }
        Method::Cascada => cascada_attack(x, c_x, models, cfg)?,
        Method::Hotflip => hotflip_attack(x, c_x, models, cfg)?,
    };
    let selected = select(&trace, c_x);
    let adversarial = selected.map_or_else(|| x.clone(), |i| trace[i].sequence.clone());
    Ok(AttackResult {
        index,
        method,
        label: c_x,
        flipped: trace.iter().any(|r| r.label != c_x),
        wer: wer(adversarial.ids(), x.ids()),
        audit: EditAudit::new(x.ids(), adversarial.ids()),
        original: x.clone(),
        adversarial,
        selected,
        trace,
        wall_time: start.elapsed(),
    })
}
