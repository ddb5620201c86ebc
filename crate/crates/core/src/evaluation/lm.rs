use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::{TokenId, TokenSequence, BOS, EOS, UNK};
use crate::error::{Error, Result};
use crate::nn::{fit, AdamConfig, Bound, GruCell, Linear, ParamId, ParamSet, Trainable};
use crate::scalar::Scalar;

/// Per-token fluency judge.
pub trait TokenLm {
    /// Mean negative log-likelihood per predicted token, `EOS` included.
    fn log_perplexity(&self, x: &TokenSequence) -> f64;
}

/// Uniform next-token distribution over `V` tokens.
#[derive(Debug, Clone, Copy)]
pub struct UniformLm {
    vocab_size: usize,
}

impl UniformLm {
    pub fn new(vocab_size: usize) -> Self {
        Self { vocab_size }
    }
}

impl TokenLm for UniformLm {
    fn log_perplexity(&self, _x: &TokenSequence) -> f64 {
        (self.vocab_size as f64).ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub d_emb: usize,
    pub d_hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub heldout_fraction: f64,
    pub seed: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            d_emb: 32,
            d_hidden: 64,
            epochs: 5,
            batch_size: 16,
            optimizer: AdamConfig {
                lr: 3e-3,
                ..AdamConfig::default()
            },
            heldout_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Layout {
    embedding: ParamId,
    cell: GruCell,
    output: Linear,
}

/// Left-to-right GRU next-token model.
#[derive(Debug, Clone)]
pub struct LanguageModel<T: Scalar> {
    config: LmConfig,
    vocab_size: usize,
    params: ParamSet<T>,
    layout: Layout,
    pub history: Vec<f64>,
    pub heldout_log_perplexity: Option<f64>,
}

impl<T: Scalar> LanguageModel<T> {
    pub fn new(config: LmConfig, vocab_size: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x1a9e_0de1);
        let mut params = ParamSet::new();
        let embedding = params.add_uniform("lm.embedding", (vocab_size, config.d_emb), 0.5, &mut rng);
        let cell = GruCell::new(&mut params, "lm.cell", config.d_emb, config.d_hidden, &mut rng);
        let output = Linear::new(&mut params, "lm.output", config.d_hidden, vocab_size, &mut rng);
        Self {
            config,
            vocab_size,
            params,
            layout: Layout { embedding, cell, output },
            history: Vec::new(),
            heldout_log_perplexity: None,
        }
    }

    pub fn config(&self) -> &LmConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn clamp(&self, t: TokenId) -> usize {
        if (t as usize) < self.vocab_size {
            t as usize
        } else {
            UNK as usize
        }
    }

    /// Mean next-token cross-entropy of `x` followed by `EOS`.
    fn loss_on_tape(&self, tape: &mut Tape<'_, T>, p: &Bound, x: &TokenSequence) -> Var {
        let inputs: Vec<usize> = std::iter::once(BOS as usize)
            .chain(x.ids().iter().map(|&t| self.clamp(t)))
            .collect();
        let targets: Vec<usize> = x
            .ids()
            .iter()
            .map(|&t| self.clamp(t))
            .chain(std::iter::once(EOS as usize))
            .collect();
        let emb = tape.gather_rows(p.get(self.layout.embedding), &inputs);
        let states = self.layout.cell.run(tape, p, emb, false);
        let h = tape.concat_rows(&states);
        let logits = self.layout.output.forward(tape, p, h);
        tape.nll(logits, &targets)
    }
}

impl<T: Scalar> TokenLm for LanguageModel<T> {
    fn log_perplexity(&self, x: &TokenSequence) -> f64 {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let loss = self.loss_on_tape(&mut tape, &p, x);
        tape.scalar(loss).as_f64()
    }
}

impl<T: Scalar> Trainable<T> for LanguageModel<T> {
    fn param_set(&self) -> &ParamSet<T> {
        self.params()
    }

    fn param_set_mut(&mut self) -> &mut ParamSet<T> {
        self.params_mut()
    }
}

/// Next-token cross-entropy training; reports the mean held-out
/// log-perplexity when `heldout_fraction` leaves any sequences out.
pub fn train_lm<T: Scalar>(corpus: &[TokenSequence], vocab_size: usize, config: &LmConfig) -> Result<LanguageModel<T>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x1a9e_0de1);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng);
    let n_heldout = ((corpus.len() as f64 * config.heldout_fraction).round() as usize).min(corpus.len() - 1);
    let heldout = order.split_off(corpus.len() - n_heldout);
    let mut model = LanguageModel::<T>::new(config.clone(), vocab_size);
    model.history = fit(
        &mut model,
        order.len(),
        config.epochs,
        config.batch_size,
        config.optimizer,
        "language_model",
        &mut rng,
        |model: &LanguageModel<T>, i, _| {
            let mut tape = Tape::new();
            let p = model.params().bind(&mut tape);
            let loss = model.loss_on_tape(&mut tape, &p, &corpus[order[i]]);
            let value = tape.scalar(loss).as_f64();
            let grads = tape.backward(loss);
            (value, model.params().collect_grads(&grads, &p))
        },
    )?;
    if !heldout.is_empty() {
        let total: f64 = heldout.iter().map(|&i| model.log_perplexity(&corpus[i])).sum();
        model.heldout_log_perplexity = Some(total / heldout.len() as f64);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::NUM_RESERVED;
    use rand::Rng;

    #[test]
    fn trained_lm_beats_uniform_and_prefers_real_sequences() {
        // ascending runs modulo the regular alphabet
        let n_regular = 10u32;
        let v = NUM_RESERVED + n_regular as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let corpus: Vec<TokenSequence> = (0..300)
            .map(|_| {
                let start = rng.gen_range(0..n_regular);
                let len = rng.gen_range(3..9);
                TokenSequence::new((0..len).map(|i| NUM_RESERVED as u32 + (start + i) % n_regular).collect()).unwrap()
            })
            .collect();
        let cfg = LmConfig {
            d_emb: 16,
            d_hidden: 24,
            epochs: 4,
            ..LmConfig::default()
        };
        let lm = train_lm::<f64>(&corpus, v, &cfg).unwrap();
        let heldout = lm.heldout_log_perplexity.unwrap();
        assert!(heldout < (v as f64).ln(), "{heldout}");
        assert!(lm.history[0] > *lm.history.last().unwrap());
        let again = train_lm::<f64>(&corpus, v, &cfg).unwrap();
        assert_eq!(again.params(), lm.params());

        let sample = &corpus[..100];
        let better = sample
            .iter()
            .filter(|x| {
                let random = TokenSequence::new(
                    (0..x.len()).map(|_| NUM_RESERVED as u32 + rng.gen_range(0..n_regular)).collect(),
                )
                .unwrap();
                lm.log_perplexity(x) <= lm.log_perplexity(&random)
            })
            .count();
        assert!(better >= 95, "{better}");
        assert!(train_lm::<f64>(&[], v, &cfg).is_err());
    }
}
