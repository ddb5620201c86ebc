use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, SequenceClassifier};
use crate::autodiff::{softmax_rows, Mat, Tape, Var};
use crate::data::{num_classes, LabeledExample, TokenId, TokenSequence, UNK};
use crate::error::{Error, Result};
use crate::nn::{fit, mean_max_pool, AdamConfig, BiGru, Bound, Linear, ParamId, ParamSet, Trainable};
use crate::scalar::Scalar;
use crate::seq2seq::{EmbeddedState, MaskerSet, Seq2Seq};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    pub d_emb: usize,
    pub d_hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Hidden width of the state head.
    pub state_hidden: usize,
    pub state_epochs: usize,
    pub state_optimizer: AdamConfig,
    /// Mass moved from the true class to the uniform distribution in the
    /// state head's training targets.
    pub state_label_smoothing: f64,
    /// Maskers under which training sequences are encoded for the state head.
    pub state_maskers: Vec<MaskerSet>,
    pub heldout_fraction: f64,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            d_emb: 32,
            d_hidden: 64,
            epochs: 6,
            batch_size: 16,
            optimizer: AdamConfig {
                lr: 2e-3,
                ..AdamConfig::default()
            },
            state_hidden: 64,
            state_epochs: 20,
            state_optimizer: AdamConfig {
                lr: 1e-3,
                weight_decay: 1e-4,
                ..AdamConfig::default()
            },
            state_label_smoothing: 0.1,
            state_maskers: MaskerSet::training_default(),
            heldout_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TokenLayout {
    embedding: ParamId,
    body: BiGru,
    head: Linear,
}

/// Bi-directional GRU over token embeddings, `[mean ‖ max]` pooling and a
/// linear head.
#[derive(Debug, Clone)]
pub struct TokenSurrogate<T: Scalar> {
    n_classes: usize,
    vocab_size: usize,
    params: ParamSet<T>,
    layout: TokenLayout,
    pub history: Vec<f64>,
}

impl<T: Scalar> TokenSurrogate<T> {
    pub fn new(config: &SurrogateConfig, vocab_size: usize, n_classes: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5a77_0c47);
        let mut params = ParamSet::new();
        let embedding = params.add_uniform("surrogate.embedding", (vocab_size, config.d_emb), 0.5, &mut rng);
        let body = BiGru::new(&mut params, "surrogate.body", config.d_emb, config.d_hidden, &mut rng);
        let head = Linear::new(&mut params, "surrogate.head", 2 * body.output_width(), n_classes, &mut rng);
        Self {
            n_classes,
            vocab_size,
            params,
            layout: TokenLayout { embedding, body, head },
            history: Vec::new(),
        }
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

    /// The token embedding table (`V x d_emb`).
    pub fn embedding_table(&self) -> &Mat<T> {
        self.params.get(self.layout.embedding)
    }

    fn clamp_ids(&self, x: &[TokenId]) -> Vec<usize> {
        x.iter()
            .map(|&t| if (t as usize) < self.vocab_size { t } else { UNK } as usize)
            .collect()
    }

    /// Logits from an `|x| x d_emb` matrix of input embeddings.
    pub fn logits_from_embeddings(&self, tape: &mut Tape<'_, T>, p: &Bound, emb: Var) -> Var {
        let h = self.layout.body.run(tape, p, emb);
        let pooled = mean_max_pool(tape, h);
        self.layout.head.forward(tape, p, pooled)
    }

    pub fn logits_on_tape(&self, tape: &mut Tape<'_, T>, p: &Bound, x: &[TokenId]) -> Var {
        let emb = tape.gather_rows(p.get(self.layout.embedding), &self.clamp_ids(x));
        self.logits_from_embeddings(tape, p, emb)
    }

    /// Cross-entropy of `class` and its gradient with respect to the input
    /// embeddings (`|x| x d_emb`).
    pub fn embedding_gradient(&self, x: &TokenSequence, class: usize) -> (f64, Mat<T>) {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let rows = self.clamp_ids(x.ids());
        let emb = tape.input(self.embedding_table().select(ndarray::Axis(0), &rows));
        let logits = self.logits_from_embeddings(&mut tape, &p, emb);
        let loss = tape.nll(logits, &[class]);
        let value = tape.scalar(loss).as_f64();
        let grad = tape.backward(loss).wrt_or_zeros(emb, tape.shape(emb));
        (value, grad)
    }

    fn loss_and_grads(&self, x: &TokenSequence, label: usize) -> (f64, Vec<Mat<T>>) {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let logits = self.logits_on_tape(&mut tape, &p, x.ids());
        let loss = tape.nll(logits, &[label]);
        let value = tape.scalar(loss).as_f64();
        let grads = tape.backward(loss);
        (value, self.params.collect_grads(&grads, &p))
    }
}

impl<T: Scalar> SequenceClassifier for TokenSurrogate<T> {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn predict_proba(&self, x: &TokenSequence) -> Vec<f64> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let logits = self.logits_on_tape(&mut tape, &p, x.ids());
        softmax_rows(tape.value(logits)).iter().map(|v| v.as_f64()).collect()
    }
}

impl<T: Scalar> Trainable<T> for TokenSurrogate<T> {
    fn param_set(&self) -> &ParamSet<T> {
        self.params()
    }

    fn param_set_mut(&mut self) -> &mut ParamSet<T> {
        self.params_mut()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StateLayout {
    hidden: Linear,
    output: Linear,
}

/// `C_s(z)`: an MLP on the `[mean ‖ max]` pooling of encoder states.
#[derive(Debug, Clone)]
pub struct StateHead<T: Scalar> {
    n_classes: usize,
    state_width: usize,
    params: ParamSet<T>,
    layout: StateLayout,
    pub history: Vec<f64>,
}

impl<T: Scalar> StateHead<T> {
    pub fn new(config: &SurrogateConfig, state_width: usize, n_classes: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x57a7_e4ead);
        let mut params = ParamSet::new();
        let hidden = Linear::new(&mut params, "state_head.hidden", 2 * state_width, config.state_hidden, &mut rng);
        let output = Linear::new(&mut params, "state_head.output", config.state_hidden, n_classes, &mut rng);
        Self {
            n_classes,
            state_width,
            params,
            layout: StateLayout { hidden, output },
            history: Vec::new(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
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

    fn logits_pooled(&self, tape: &mut Tape<'_, T>, p: &Bound, pooled: Var) -> Var {
        let h = self.layout.hidden.forward(tape, p, pooled);
        let h = tape.tanh(h);
        self.layout.output.forward(tape, p, h)
    }

    pub fn logits_on_tape(&self, tape: &mut Tape<'_, T>, p: &Bound, z: Var) -> Var {
        let pooled = mean_max_pool(tape, z);
        self.logits_pooled(tape, p, pooled)
    }

    /// Class probabilities (`1 x k`) on a tape.
    pub fn probs_on_tape(&self, tape: &mut Tape<'_, T>, p: &Bound, z: Var) -> Var {
        let logits = self.logits_on_tape(tape, p, z);
        tape.softmax(logits)
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

    pub fn surrogate_score(&self, z: &EmbeddedState<T>) -> Result<Vec<f64>> {
        self.check(z)?;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let zv = tape.borrowed(z.matrix());
        let probs = self.probs_on_tape(&mut tape, &p, zv);
        Ok(tape.value(probs).iter().map(|v| v.as_f64()).collect())
    }

    /// `C_s(z)[class]` and its gradient with respect to `z`.
    pub fn score_with_grad(&self, z: &EmbeddedState<T>, class: usize) -> Result<(f64, Mat<T>)> {
        self.check(z)?;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let zv = tape.borrowed(z.matrix());
        let probs = self.probs_on_tape(&mut tape, &p, zv);
        let picked = tape.slice_cols(probs, class, 1);
        let value = tape.scalar(picked).as_f64();
        let grad = tape.backward(picked).wrt_or_zeros(zv, z.matrix().dim());
        Ok((value, grad))
    }
}

impl<T: Scalar> Trainable<T> for StateHead<T> {
    fn param_set(&self) -> &ParamSet<T> {
        self.params()
    }

    fn param_set_mut(&mut self) -> &mut ParamSet<T> {
        self.params_mut()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SurrogateReport {
    pub token_heldout_accuracy: f64,
    pub state_heldout_accuracy: f64,
    pub n_train: usize,
    pub n_heldout: usize,
}

/// Token-level head for sequence guidance and HotFlip, state head for
/// gradients in the encoder space.
#[derive(Debug, Clone)]
pub struct Surrogate<T: Scalar> {
    pub token: TokenSurrogate<T>,
    pub state: StateHead<T>,
    pub report: SurrogateReport,
    pub config: SurrogateConfig,
}

/// Trains both heads by cross-entropy on the same split. The encoder is
/// frozen; the state head sees each training sequence encoded under every
/// masker in `config.state_maskers`.
pub fn train_surrogate<T: Scalar>(
    train: &[LabeledExample],
    encoder: &Seq2Seq<T>,
    config: &SurrogateConfig,
) -> Result<Surrogate<T>> {
    let k = num_classes(train);
    let mut present = vec![false; k];
    for e in train {
        present[e.label] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::SingleClass);
    }
    if config.state_maskers.is_empty() {
        return Err(Error::Config("surrogate needs at least one state masker".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5a77_0c47);
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);
    let n_heldout = ((train.len() as f64 * config.heldout_fraction).round() as usize).min(train.len() - 1);
    let heldout = order.split_off(train.len() - n_heldout);
    let fit_idx = order;

    let mut token = TokenSurrogate::<T>::new(config, encoder.vocab_size(), k);
    token.history = fit(
        &mut token,
        fit_idx.len(),
        config.epochs,
        config.batch_size,
        config.optimizer,
        "surrogate",
        &mut rng,
        |model: &TokenSurrogate<T>, i, _| {
            let e = &train[fit_idx[i]];
            model.loss_and_grads(&e.sequence, e.label)
        },
    )?;

    let pool = |i: usize, m: &MaskerSet| -> Mat<T> {
        let z = encoder.encode(&train[i].sequence, m);
        let mut tape = Tape::new();
        let zv = tape.borrowed(z.matrix());
        let v = mean_max_pool(&mut tape, zv);
        tape.value(v).clone()
    };
    let maskers = &config.state_maskers;
    let pooled: Vec<(Mat<T>, usize)> = fit_idx
        .iter()
        .flat_map(|&i| maskers.iter().map(move |m| (i, m)))
        .map(|(i, m)| (pool(i, m), train[i].label))
        .collect();
    let mut state = StateHead::<T>::new(config, encoder.state_width(), k);
    state.history = fit(
        &mut state,
        pooled.len(),
        config.state_epochs,
        config.batch_size,
        config.state_optimizer,
        "state_head",
        &mut rng,
        |model: &StateHead<T>, i, _| {
            let (x, label) = &pooled[i];
            let mut tape = Tape::new();
            let p = model.params().bind(&mut tape);
            let xv = tape.borrowed(x);
            let logits = model.logits_pooled(&mut tape, &p, xv);
            let loss = smoothed_nll(&mut tape, logits, *label, config.state_label_smoothing);
            let value = tape.scalar(loss).as_f64();
            let grads = tape.backward(loss);
            (value, model.params().collect_grads(&grads, &p))
        },
    )?;

    let mut report = SurrogateReport {
        n_train: fit_idx.len(),
        n_heldout: heldout.len(),
        ..SurrogateReport::default()
    };
    if !heldout.is_empty() {
        let mut tok_ok = 0;
        let mut state_ok = 0;
        for &i in &heldout {
            let e = &train[i];
            tok_ok += usize::from(token.classify(&e.sequence).1 == e.label);
            let m = &maskers[rng.gen_range(0..maskers.len())];
            let probs = state.surrogate_score(&encoder.encode(&e.sequence, m))?;
            state_ok += usize::from(argmax(&probs) == e.label);
        }
        report.token_heldout_accuracy = tok_ok as f64 / heldout.len() as f64;
        report.state_heldout_accuracy = state_ok as f64 / heldout.len() as f64;
    }
    Ok(Surrogate {
        token,
        state,
        report,
        config: config.clone(),
    })
}

/// Cross-entropy against `(1 - eps) * onehot(label) + eps / k`.
fn smoothed_nll<T: Scalar>(tape: &mut Tape<'_, T>, logits: Var, label: usize, eps: f64) -> Var {
    let hard = tape.nll(logits, &[label]);
    if eps <= 0.0 {
        return hard;
    }
    let k = tape.shape(logits).1 as f64;
    let lp = tape.log_softmax(logits);
    let total = tape.sum_all(lp);
    let uniform = tape.scale(total, T::of(-eps / k));
    let hard = tape.scale(hard, T::of(1.0 - eps));
    tape.add(hard, uniform)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand_distr::StandardNormal;

    #[test]
    fn state_head_simplex_gradient_and_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = SurrogateConfig {
            state_hidden: 8,
            ..SurrogateConfig::default()
        };
        let head = StateHead::<f64>::new(&cfg, 5, 3);
        for _ in 0..10 {
            let z = EmbeddedState::new(Array2::from_shape_fn((6, 5), |_| rng.sample::<f64, _>(StandardNormal)));
            let probs = head.surrogate_score(&z).unwrap();
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            for class in 0..3 {
                let (value, grad) = head.score_with_grad(&z, class).unwrap();
                assert!((value - probs[class]).abs() < 1e-15);
                let h = 1e-6;
                let mut worst: f64 = 0.0;
                for r in 0..6 {
                    for c in 0..5 {
                        let mut plus = z.clone();
                        plus.matrix_mut()[[r, c]] += h;
                        let mut minus = z.clone();
                        minus.matrix_mut()[[r, c]] -= h;
                        let fd = (head.surrogate_score(&plus).unwrap()[class]
                            - head.surrogate_score(&minus).unwrap()[class])
                            / (2.0 * h);
                        let g = grad[[r, c]];
                        worst = worst.max((fd - g).abs() / fd.abs().max(g.abs()).max(1e-6));
                    }
                }
                assert!(worst < 1e-4, "relative error {worst}");
            }
            let mut rows: Vec<usize> = (0..6).collect();
            rows.reverse();
            let permuted = EmbeddedState::new(z.matrix().select(ndarray::Axis(0), &rows));
            let again = head.surrogate_score(&permuted).unwrap();
            for (a, b) in probs.iter().zip(&again) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let wrong = EmbeddedState::new(Array2::<f64>::zeros((3, 4)));
        assert!(matches!(
            head.surrogate_score(&wrong),
            Err(Error::WidthMismatch { expected: 5, got: 4 })
        ));
    }

    #[test]
    fn smoothed_loss_matches_direct_formula() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.input(ndarray::array![[0.3, -1.2, 2.0]]);
        let loss = smoothed_nll(&mut tape, logits, 2, 0.1);
        let lp = crate::autodiff::log_softmax_rows(tape.value(logits));
        let expected = -(0.9 + 0.1 / 3.0) * lp[[0, 2]] - 0.1 / 3.0 * (lp[[0, 0]] + lp[[0, 1]]);
        assert!((tape.scalar(loss) - expected).abs() < 1e-12);
    }

    #[test]
    fn embedding_gradient_matches_finite_differences() {
        let cfg = SurrogateConfig {
            d_emb: 4,
            d_hidden: 5,
            ..SurrogateConfig::default()
        };
        let model = TokenSurrogate::<f64>::new(&cfg, 12, 2);
        let x = TokenSequence::new(vec![8, 9, 11]).unwrap();
        let (loss, grad) = model.embedding_gradient(&x, 1);
        assert!((loss + model.predict_proba(&x)[1].ln()).abs() < 1e-12);
        let emb = model.embedding_table().select(ndarray::Axis(0), &[8, 9, 11]);
        let loss_at = |e: &Mat<f64>| {
            let mut tape = Tape::new();
            let p = model.params().bind(&mut tape);
            let ev = tape.input(e.clone());
            let logits = model.logits_from_embeddings(&mut tape, &p, ev);
            let l = tape.nll(logits, &[1]);
            tape.scalar(l)
        };
        let h = 1e-6;
        for r in 0..3 {
            for c in 0..4 {
                let mut plus = emb.clone();
                plus[[r, c]] += h;
                let mut minus = emb.clone();
                minus[[r, c]] -= h;
                let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                assert!((fd - grad[[r, c]]).abs() < 1e-7 * (1.0 + fd.abs()));
            }
        }
    }
}
