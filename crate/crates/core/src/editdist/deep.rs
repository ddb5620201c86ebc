use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PairExample;
use crate::autodiff::{Mat, Tape, Var};
use crate::data::TokenId;
use crate::error::{Error, Result};
use crate::nn::{fit, mean_max_pool, AdamConfig, Bound, Linear, ParamSet, Trainable};
use crate::scalar::Scalar;
use crate::seq2seq::{EmbeddedState, MaskerSet, Seq2Seq};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeepLevConfig {
    /// Width `d_M` of the vector compared by cosine.
    pub d_out: usize,
    pub d_hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub heldout_fraction: f64,
    pub n_pairs: usize,
    pub distant_fraction: f64,
    pub corruption_rate: f64,
    /// Masker whose control tokens condition the encoder.
    pub masker: MaskerSet,
    pub seed: u64,
}

impl Default for DeepLevConfig {
    fn default() -> Self {
        Self {
            d_out: 64,
            d_hidden: 128,
            epochs: 20,
            batch_size: 32,
            optimizer: AdamConfig::default(),
            heldout_fraction: 0.1,
            n_pairs: 50_000,
            distant_fraction: 0.2,
            corruption_rate: 0.15,
            masker: MaskerSet::all(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Layout {
    hidden: Linear,
    output: Linear,
}

/// `wer_deep(z, z0) = (1 - cos(M(z), M(z0))) / 2`, where `M` is an MLP on
/// the `[mean ‖ max]` pooling of the encoder states.
#[derive(Debug, Clone)]
pub struct DeepLev<T: Scalar> {
    config: DeepLevConfig,
    state_width: usize,
    params: ParamSet<T>,
    layout: Layout,
    pub history: Vec<f64>,
    /// Indices (into the training pairs) held out from fitting.
    pub heldout: Vec<usize>,
    pub heldout_mae: Option<f64>,
}

impl<T: Scalar> DeepLev<T> {
    pub fn new(config: DeepLevConfig, state_width: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xdee9_1e5e);
        let mut params = ParamSet::new();
        let hidden = Linear::new(&mut params, "deep_lev.hidden", 2 * state_width, config.d_hidden, &mut rng);
        let output = Linear::new(&mut params, "deep_lev.output", config.d_hidden, config.d_out, &mut rng);
        Self {
            config,
            state_width,
            params,
            layout: Layout { hidden, output },
            history: Vec::new(),
            heldout: Vec::new(),
            heldout_mae: None,
        }
    }

    pub fn config(&self) -> &DeepLevConfig {
        &self.config
    }

    pub fn state_width(&self) -> usize {
        self.state_width
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn embed_pooled(&self, tape: &mut Tape<'_, T>, p: &Bound, pooled: Var) -> Var {
        let h = self.layout.hidden.forward(tape, p, pooled);
        let h = tape.tanh(h);
        self.layout.output.forward(tape, p, h)
    }

    /// `M(z)` for encoder states `z` on a tape.
    pub fn embed_on_tape(&self, tape: &mut Tape<'_, T>, p: &Bound, z: Var) -> Var {
        let pooled = mean_max_pool(tape, z);
        self.embed_pooled(tape, p, pooled)
    }

    /// Differentiable `wer_deep` between two state matrices on a tape.
    pub fn wer_deep_on_tape(&self, tape: &mut Tape<'_, T>, p: &Bound, z: Var, z0: Var) -> Var {
        let a = self.embed_on_tape(tape, p, z);
        let b = self.embed_on_tape(tape, p, z0);
        cosine_distance(tape, a, b)
    }

    fn check(&self, z: &EmbeddedState<T>) -> Result<()> {
        if z.width() != self.state_width {
            return Err(Error::WidthMismatch {
                expected: self.state_width,
                got: z.width(),
            });
        }
        Ok(())
    }

    /// `wer_deep(z, z0)` and its gradient with respect to `z`.
    pub fn wer_deep_with_grad(&self, z: &EmbeddedState<T>, z0: &EmbeddedState<T>) -> Result<(f64, Mat<T>)> {
        self.check(z)?;
        self.check(z0)?;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let zv = tape.borrowed(z.matrix());
        let z0v = tape.borrowed(z0.matrix());
        let a = self.embed_on_tape(&mut tape, &p, zv);
        let b = self.embed_on_tape(&mut tape, &p, z0v);
        for v in [a, b] {
            if tape.value(v).iter().all(|x| *x == T::zero()) {
                return Err(Error::DegenerateEmbedding);
            }
        }
        let d = cosine_distance(&mut tape, a, b);
        let value = tape.scalar(d).as_f64();
        let grad = tape.backward(d).wrt_or_zeros(zv, z.matrix().dim());
        Ok((value, grad))
    }

    pub fn wer_deep(&self, z: &EmbeddedState<T>, z0: &EmbeddedState<T>) -> Result<f64> {
        self.wer_deep_with_grad(z, z0).map(|(v, _)| v)
    }

    fn pooled_distance(&self, a: &Mat<T>, b: &Mat<T>) -> f64 {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let av = tape.borrowed(a);
        let bv = tape.borrowed(b);
        let ea = self.embed_pooled(&mut tape, &p, av);
        let eb = self.embed_pooled(&mut tape, &p, bv);
        let d = cosine_distance(&mut tape, ea, eb);
        tape.scalar(d).as_f64()
    }
}

impl<T: Scalar> Trainable<T> for DeepLev<T> {
    fn param_set(&self) -> &ParamSet<T> {
        self.params()
    }

    fn param_set_mut(&mut self) -> &mut ParamSet<T> {
        self.params_mut()
    }
}

/// `(1 - cos(a, b)) / 2` for two row vectors.
pub(crate) fn cosine_distance<T: Scalar>(tape: &mut Tape<'_, T>, a: Var, b: Var) -> Var {
    let ab = tape.mul(a, b);
    let dot = tape.sum_all(ab);
    let aa = tape.mul(a, a);
    let aa = tape.sum_all(aa);
    let bb = tape.mul(b, b);
    let bb = tape.sum_all(bb);
    let na = tape.sqrt(aa);
    let nb = tape.sqrt(bb);
    let den = tape.mul(na, nb);
    let cos = tape.div(dot, den);
    tape.affine(cos, T::of(-0.5), T::of(0.5))
}

/// Pools the encoder states of every distinct sequence once.
struct PooledCache<T> {
    pooled: HashMap<Vec<TokenId>, Mat<T>>,
}

impl<T: Scalar> PooledCache<T> {
    fn build(pairs: &[PairExample], encoder: &Seq2Seq<T>, m: &MaskerSet) -> Self {
        let mut pooled = HashMap::new();
        for seq in pairs.iter().flat_map(|p| [&p.x, &p.y]) {
            pooled.entry(seq.ids().to_vec()).or_insert_with(|| {
                let z = encoder.encode(seq, m);
                let mut tape = Tape::new();
                let zv = tape.borrowed(z.matrix());
                let v = mean_max_pool(&mut tape, zv);
                tape.value(v).clone()
            });
        }
        Self { pooled }
    }

    fn get(&self, ids: &[TokenId]) -> &Mat<T> {
        &self.pooled[ids]
    }
}

/// Fits `M` by mean absolute error against the pair targets with the
/// encoder frozen. `heldout_fraction` of the pairs are held out.
pub fn train_deep_lev<T: Scalar>(
    pairs: &[PairExample],
    encoder: &Seq2Seq<T>,
    config: DeepLevConfig,
) -> Result<DeepLev<T>> {
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x1e7e_4a5e);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng);
    let n_heldout = ((pairs.len() as f64 * config.heldout_fraction).round() as usize).min(pairs.len() - 1);
    let mut heldout = order.split_off(pairs.len() - n_heldout);
    heldout.sort_unstable();
    let train = order;

    let cache = PooledCache::build(pairs, encoder, &config.masker);
    let mut model = DeepLev::<T>::new(config.clone(), encoder.state_width());
    let history = fit(
        &mut model,
        train.len(),
        config.epochs,
        config.batch_size,
        config.optimizer,
        "deep_lev",
        &mut rng,
        |model: &DeepLev<T>, i, _| {
            let pair = &pairs[train[i]];
            let mut tape = Tape::new();
            let p = model.params().bind(&mut tape);
            let a = tape.borrowed(cache.get(pair.x.ids()));
            let b = tape.borrowed(cache.get(pair.y.ids()));
            let ea = model.embed_pooled(&mut tape, &p, a);
            let eb = model.embed_pooled(&mut tape, &p, b);
            let d = cosine_distance(&mut tape, ea, eb);
            let target = tape.input(Mat::from_elem((1, 1), T::of(pair.target)));
            let diff = tape.sub(d, target);
            let loss = tape.abs(diff);
            let value = tape.scalar(loss).as_f64();
            let grads = tape.backward(loss);
            (value, model.params().collect_grads(&grads, &p))
        },
    )?;
    model.history = history;
    if !heldout.is_empty() {
        let total: f64 = heldout
            .iter()
            .map(|&i| {
                let pair = &pairs[i];
                (model.pooled_distance(cache.get(pair.x.ids()), cache.get(pair.y.ids())) - pair.target).abs()
            })
            .sum();
        model.heldout_mae = Some(total / heldout.len() as f64);
    }
    model.heldout = heldout;
    Ok(model)
}

/// Mean absolute error of `wer_deep` against the pair targets, encoding
/// every sequence afresh.
pub fn heldout_mae<T: Scalar>(model: &DeepLev<T>, encoder: &Seq2Seq<T>, pairs: &[PairExample]) -> Result<f64> {
    let m = &model.config().masker;
    let mut total = 0.0;
    for p in pairs {
        let d = model.wer_deep(&encoder.encode(&p.x, m), &encoder.encode(&p.y, m))?;
        total += (d - p.target).abs();
    }
    Ok(total / pairs.len().max(1) as f64)
}
