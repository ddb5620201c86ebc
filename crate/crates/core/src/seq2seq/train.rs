use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{corrupt, EmbeddedState, MaskerSet, Seq2Seq, Seq2SeqConfig};
use crate::autodiff::Tape;
use crate::data::{TokenSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::nn::{fit, ParamSet, Trainable};
use crate::scalar::Scalar;

impl<T: Scalar> Trainable<T> for Seq2Seq<T> {
    fn param_set(&self) -> &ParamSet<T> {
        self.params()
    }

    fn param_set_mut(&mut self) -> &mut ParamSet<T> {
        self.params_mut()
    }
}

/// Trains the denoising reconstruction objective: the encoder sees
/// `corrupt(x, m)` (with `m`'s control tokens), the decoder reproduces `x`.
pub fn train_seq2seq<T: Scalar>(
    corpus: &[TokenSequence],
    vocab: &Vocabulary,
    config: Seq2SeqConfig,
) -> Result<Seq2Seq<T>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if config.train_maskers.is_empty() {
        return Err(Error::Config("seq2seq needs at least one training masker".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5e25_e25e);
    let mut model = Seq2Seq::<T>::new(config.clone(), vocab);
    let regular = vocab.regular_ids();
    let history = fit(
        &mut model,
        corpus.len(),
        config.epochs,
        config.batch_size,
        config.optimizer,
        "seq2seq",
        &mut rng,
        |model: &Seq2Seq<T>, i, rng| {
            let m = &config.train_maskers[rng.gen_range(0..config.train_maskers.len())];
            let x = &corpus[i];
            let noisy = corrupt(x, m, config.corruption_rate, regular.clone(), rng);
            let mut tape = Tape::new();
            let p = model.params().bind(&mut tape);
            let loss = model.reconstruction_loss(&mut tape, &p, noisy.ids(), m, x.ids());
            let value = tape.scalar(loss).as_f64();
            let grads = tape.backward(loss);
            (value, model.params().collect_grads(&grads, &p))
        },
    )?;
    model.history = history;
    Ok(model)
}

impl<T: Scalar> Seq2Seq<T> {
    /// Mean teacher-forced loss of reconstructing each sequence from its
    /// clean encoding.
    pub fn clean_loss(&self, corpus: &[TokenSequence], m: &MaskerSet) -> f64 {
        let total: f64 = corpus
            .iter()
            .map(|x| {
                let mut tape = Tape::new();
                let p = self.params().bind(&mut tape);
                let loss = self.reconstruction_loss(&mut tape, &p, x.ids(), m, x.ids());
                tape.scalar(loss).as_f64()
            })
            .sum();
        total / corpus.len().max(1) as f64
    }

    /// Mean per-dimension standard deviation of encoder state entries,
    /// pooled over every row of every sequence.
    pub fn state_std(&self, corpus: &[TokenSequence], m: &MaskerSet) -> f64 {
        let d = self.state_width();
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        let mut n = 0usize;
        for x in corpus {
            let z: EmbeddedState<T> = self.encode(x, m);
            for row in z.matrix().rows() {
                for (j, v) in row.iter().enumerate() {
                    let v = v.as_f64();
                    sum[j] += v;
                    sq[j] += v * v;
                }
                n += 1;
            }
        }
        if n < 2 {
            return 0.0;
        }
        let n = n as f64;
        let total: f64 = (0..d)
            .map(|j| {
                let mean = sum[j] / n;
                (sq[j] / n - mean * mean).max(0.0).sqrt()
            })
            .sum();
        total / d as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructionStats {
    /// Position-wise matches over the longer length, pooled.
    pub token_accuracy: f64,
    pub exact_match: f64,
}

/// Decodes the clean encoding of every sequence with the given beam.
pub fn reconstruction_accuracy<T: Scalar>(
    model: &Seq2Seq<T>,
    corpus: &[TokenSequence],
    m: &MaskerSet,
    beam: usize,
) -> ReconstructionStats {
    let mut matched = 0usize;
    let mut total = 0usize;
    let mut exact = 0usize;
    for x in corpus {
        let y = model.reconstruct(&model.encode(x, m), beam);
        matched += x.ids().iter().zip(y.ids()).filter(|(a, b)| a == b).count();
        total += x.len().max(y.len());
        exact += usize::from(&y == x);
    }
    ReconstructionStats {
        token_accuracy: matched as f64 / total.max(1) as f64,
        exact_match: exact as f64 / corpus.len().max(1) as f64,
    }
}
