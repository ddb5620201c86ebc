use rand::Rng;
use rand_distr::StandardNormal;

use super::{AttackConfig, AttackModels, CandidateRecord};
use crate::autodiff::{Mat, Tape};
use crate::data::TokenSequence;
use crate::editdist::DeepLev;
use crate::error::{Error, Result};
use crate::classifiers::StateHead;
use crate::scalar::Scalar;
use crate::seq2seq::EmbeddedState;

/// `z0 + ε` with i.i.d. `N(0, sigma²)` entries.
pub fn random_walk_step<T: Scalar>(z0: &EmbeddedState<T>, sigma: f64, rng: &mut impl Rng) -> EmbeddedState<T> {
    let mut z = z0.clone();
    for v in z.matrix_mut().iter_mut() {
        *v += T::of(sigma * rng.sample::<f64, _>(StandardNormal));
    }
    z
}

/// Every step restarts from `E(x)`.
pub fn random_walk_attack<T: Scalar>(
    x: &TokenSequence,
    c_x: usize,
    models: &AttackModels<'_, T>,
    cfg: &AttackConfig,
    rng: &mut impl Rng,
) -> Vec<CandidateRecord> {
    let z0 = models.seq2seq.encode(x, &cfg.masker);
    (1..=cfg.n)
        .map(|step| {
            let z = random_walk_step(&z0, cfg.sigma, rng);
            let decoded = models.seq2seq.reconstruct(&z, cfg.beam);
            models.record(step, Some(z.norm()), decoded, x, c_x)
        })
        .collect()
}

/// `exp(-w / sigma_wer - [c0 = c] / sigma_class)`.
pub fn mcmc_alpha(w: usize, same_class: bool, sigma_wer: f64, sigma_class: f64) -> f64 {
    (-(w as f64) / sigma_wer - f64::from(u8::from(same_class)) / sigma_class).exp()
}

/// Draws `u ~ U[0, 1)` and accepts unless `alpha < u`.
pub fn mcmc_accept(alpha: f64, rng: &mut impl Rng) -> bool {
    let u: f64 = rng.gen();
    !(alpha < u)
}

/// Chain position and the fixed references of an MCMC walk.
#[derive(Debug, Clone)]
pub struct McmcState<T: Scalar> {
    pub z: EmbeddedState<T>,
    pub original: TokenSequence,
    pub c0: usize,
}

impl<T: Scalar> McmcState<T> {
    pub fn new(z: EmbeddedState<T>, original: TokenSequence, c0: usize) -> Self {
        Self { z, original, c0 }
    }
}

/// One Metropolis step. The proposal's decode is recorded whether or not
/// it is accepted; a rejection leaves the chain where it was.
pub fn mcmc_step<T: Scalar>(
    state: &mut McmcState<T>,
    step: usize,
    models: &AttackModels<'_, T>,
    cfg: &AttackConfig,
    rng: &mut impl Rng,
) -> CandidateRecord {
    let proposal = random_walk_step(&state.z, cfg.sigma, rng);
    let decoded = models.seq2seq.reconstruct(&proposal, cfg.beam);
    let mut record = models.record(step, Some(proposal.norm()), decoded, &state.original, state.c0);
    let alpha = mcmc_alpha(record.wer, record.label == state.c0, cfg.sigma_wer, cfg.sigma_class);
    let accepted = mcmc_accept(alpha, rng);
    if accepted {
        state.z = proposal;
    }
    record.accepted = Some(accepted);
    record
}

/// `F(z) = C_s(z)[class] + lambda * wer_deep(z, z0)` and `dF/dz`.
pub fn cascada_objective<T: Scalar>(
    head: &StateHead<T>,
    deep_lev: &DeepLev<T>,
    z: &EmbeddedState<T>,
    z0: &EmbeddedState<T>,
    class: usize,
    lambda: f64,
) -> Result<(f64, Mat<T>)> {
    for (expected, got) in [(head.state_width(), z.width()), (deep_lev.state_width(), z.width())] {
        if expected != got || z0.width() != got {
            return Err(Error::WidthMismatch { expected, got });
        }
    }
    let mut tape = Tape::new();
    let ph = head.params().bind(&mut tape);
    let pd = deep_lev.params().bind(&mut tape);
    let zv = tape.borrowed(z.matrix());
    let z0v = tape.borrowed(z0.matrix());
    let probs = head.probs_on_tape(&mut tape, &ph, zv);
    let score = tape.slice_cols(probs, class, 1);
    let dist = deep_lev.wer_deep_on_tape(&mut tape, &pd, zv, z0v);
    let dist = tape.scale(dist, T::of(lambda));
    let f = tape.add(score, dist);
    let value = tape.scalar(f).as_f64();
    let grad = tape.backward(f).wrt_or_zeros(zv, z.matrix().dim());
    Ok((value, grad))
}

/// Gradient descent on [`cascada_objective`] from `E(x)`; every iterate is
/// decoded. A step with a non-finite gradient is skipped and noted.
pub fn cascada_attack<T: Scalar>(
    x: &TokenSequence,
    c_x: usize,
    models: &AttackModels<'_, T>,
    cfg: &AttackConfig,
) -> Result<Vec<CandidateRecord>> {
    let head = models
        .state_head
        .ok_or_else(|| Error::Config("cascada needs the surrogate state head".into()))?;
    let deep_lev = models
        .deep_lev
        .ok_or_else(|| Error::Config("cascada needs the deep Levenshtein model".into()))?;
    let z0 = models.seq2seq.encode(x, &cfg.masker);
    let mut z = z0.clone();
    let mut trace = Vec::with_capacity(cfg.n);
    for step in 1..=cfg.n {
        let (value, grad) = cascada_objective(head, deep_lev, &z, &z0, c_x, cfg.lambda)?;
        let mut diagnostic = None;
        if value.is_finite() && grad.iter().all(|g| g.is_finite()) {
            z.matrix_mut().scaled_add(T::of(-cfg.step_size), &grad);
        } else {
            diagnostic = Some(format!("non-finite objective {value} or gradient; iterate kept"));
        }
        let decoded = models.seq2seq.reconstruct(&z, cfg.beam);
        let mut record = models.record(step, Some(z.norm()), decoded, x, c_x);
        record.diagnostic = diagnostic;
        trace.push(record);
    }
    Ok(trace)
}
