use std::collections::HashSet;

use super::{AttackConfig, AttackModels, CandidateRecord};
use crate::autodiff::Mat;
use crate::data::{TokenId, TokenSequence, NUM_RESERVED};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Replacing position `position` with `token`, with first-order gain `gain`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flip {
    pub position: usize,
    pub token: TokenId,
    pub gain: f64,
}

/// `g(i, v) = grad_i · (emb(v) - emb(x_i))` for every position and every
/// regular token other than `x_i`, best first. Ties go to the smaller
/// position, then the smaller token id.
pub fn flip_gains<T: Scalar>(x: &[TokenId], grad: &Mat<T>, embedding: &Mat<T>) -> Vec<Flip> {
    let scores = grad.dot(&embedding.t());
    let vocab = embedding.nrows();
    let mut flips = Vec::new();
    for (i, &xi) in x.iter().enumerate() {
        let own = (xi as usize) < vocab;
        let base = if own { scores[[i, xi as usize]].as_f64() } else { 0.0 };
        for v in NUM_RESERVED..vocab {
            if v as TokenId == xi {
                continue;
            }
            flips.push(Flip {
                position: i,
                token: v as TokenId,
                gain: scores[[i, v]].as_f64() - base,
            });
        }
    }
    flips.sort_by(|a, b| {
        b.gain
            .total_cmp(&a.gain)
            .then(a.position.cmp(&b.position))
            .then(a.token.cmp(&b.token))
    });
    flips
}

/// Beam search over flip sequences on the token-level surrogate. Each
/// level expands every beam member into its `beam` best flips; children
/// become candidates in order until `n` are collected, and the `beam`
/// children with the largest cumulative gain form the next level.
pub fn hotflip_attack<T: Scalar>(
    x: &TokenSequence,
    c_x: usize,
    models: &AttackModels<'_, T>,
    cfg: &AttackConfig,
) -> Result<Vec<CandidateRecord>> {
    let surrogate = models
        .token_surrogate
        .ok_or_else(|| Error::Config("hotflip needs the token-level surrogate".into()))?;
    let embedding = surrogate.embedding_table();
    let mut seen: HashSet<Vec<TokenId>> = HashSet::from([x.ids().to_vec()]);
    let mut beam: Vec<(TokenSequence, f64)> = vec![(x.clone(), 0.0)];
    let mut trace = Vec::with_capacity(cfg.n);
    while trace.len() < cfg.n && !beam.is_empty() {
        let mut children: Vec<(TokenSequence, f64)> = Vec::new();
        'expand: for (seq, total) in &beam {
            let (_, grad) = surrogate.embedding_gradient(seq, c_x);
            let mut taken = 0;
            for flip in flip_gains(seq.ids(), &grad, embedding) {
                if taken == cfg.beam {
                    break;
                }
                let mut ids = seq.ids().to_vec();
                ids[flip.position] = flip.token;
                if !seen.insert(ids.clone()) {
                    continue;
                }
                taken += 1;
                let child = TokenSequence::new(ids)?;
                trace.push(models.record(trace.len() + 1, None, child.clone(), x, c_x));
                children.push((child, total + flip.gain));
                if trace.len() == cfg.n {
                    break 'expand;
                }
            }
        }
        children.sort_by(|a, b| b.1.total_cmp(&a.1));
        children.truncate(cfg.beam);
        beam = children;
    }
    Ok(trace)
}
