//! Parameter storage, layers and the optimizer shared by all neural models.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Mat, Tape, Var};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamId(usize);

/// Named, ordered collection of parameter matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    values: Vec<Mat<T>>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat<T>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Uniform initialisation in `[-scale, scale]`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: (usize, usize),
        scale: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let value = Mat::from_shape_fn(shape, |_| T::of(rng.gen_range(-scale..=scale)));
        self.add(name, value)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: (usize, usize)) -> ParamId {
        self.add(name, Mat::zeros(shape))
    }

    pub fn get(&self, id: ParamId) -> &Mat<T> {
        &self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Mat<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Mat<T>] {
        &mut self.values
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Records every parameter as a borrowed leaf on `tape`.
    pub fn bind<'p>(&'p self, tape: &mut Tape<'p, T>) -> Bound {
        Bound(self.values.iter().map(|v| tape.borrowed(v)).collect())
    }

    /// Gradients for every parameter, zero where a parameter was unused.
    pub fn collect_grads(&self, grads: &Gradients<T>, bound: &Bound) -> Vec<Mat<T>> {
        self.values
            .iter()
            .zip(&bound.0)
            .map(|(v, &var)| grads.wrt_or_zeros(var, v.dim()))
            .collect()
    }

    /// Replaces all tensors, checking names and shapes against the current layout.
    pub fn load(&mut self, names: &[String], values: Vec<Mat<T>>) -> Result<(), String> {
        if names != self.names.as_slice() {
            return Err("parameter names do not match model layout".into());
        }
        for (cur, new) in self.values.iter().zip(&values) {
            if cur.dim() != new.dim() {
                return Err(format!("shape mismatch {:?} vs {:?}", cur.dim(), new.dim()));
            }
        }
        self.values = values;
        Ok(())
    }
}

/// Tape handles for a bound [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn get(&self, id: ParamId) -> Var {
        self.0[id.0]
    }
}

/// Sum of gradient lists, used to accumulate over a mini-batch.
pub fn add_grads<T: Scalar>(acc: &mut Option<Vec<Mat<T>>>, grads: Vec<Mat<T>>) {
    match acc {
        Some(a) => {
            for (x, g) in a.iter_mut().zip(grads) {
                *x += &g;
            }
        }
        None => *acc = Some(grads),
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let scale = 1.0 / (input as f64).sqrt();
        Self {
            w: params.add_uniform(format!("{name}.w"), (input, output), scale, rng),
            b: params.add_zeros(format!("{name}.b"), (1, output)),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, p: &Bound, x: Var) -> Var {
        let h = tape.matmul(x, p.get(self.w));
        tape.add_row(h, p.get(self.b))
    }
}

/// Gated recurrent unit cell. Gate order in the fused matrices is
/// reset, update, candidate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GruCell {
    pub wx: ParamId,
    pub wh: ParamId,
    pub bx: ParamId,
    pub bh: ParamId,
    pub hidden: usize,
}

impl GruCell {
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let scale = 1.0 / (hidden as f64).sqrt();
        Self {
            wx: params.add_uniform(format!("{name}.wx"), (input, 3 * hidden), scale, rng),
            wh: params.add_uniform(format!("{name}.wh"), (hidden, 3 * hidden), scale, rng),
            bx: params.add_uniform(format!("{name}.bx"), (1, 3 * hidden), scale, rng),
            bh: params.add_uniform(format!("{name}.bh"), (1, 3 * hidden), scale, rng),
            hidden,
        }
    }

    /// Input projection for a whole sequence at once (`T x 3h`).
    pub fn project_inputs<T: Scalar>(&self, tape: &mut Tape<'_, T>, p: &Bound, x: Var) -> Var {
        let gx = tape.matmul(x, p.get(self.wx));
        tape.add_row(gx, p.get(self.bx))
    }

    /// One step given the projected input `gx` (`n x 3h`) and state `h` (`n x h`).
    pub fn step_projected<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        p: &Bound,
        gx: Var,
        h: Var,
    ) -> Var {
        let hd = self.hidden;
        let gh = tape.matmul(h, p.get(self.wh));
        let gh = tape.add_row(gh, p.get(self.bh));
        let gx_ru = tape.slice_cols(gx, 0, 2 * hd);
        let gh_ru = tape.slice_cols(gh, 0, 2 * hd);
        let ru = tape.add(gx_ru, gh_ru);
        let ru = tape.sigmoid(ru);
        let r = tape.slice_cols(ru, 0, hd);
        let u = tape.slice_cols(ru, hd, hd);
        let gx_c = tape.slice_cols(gx, 2 * hd, hd);
        let gh_c = tape.slice_cols(gh, 2 * hd, hd);
        let rc = tape.mul(r, gh_c);
        let c = tape.add(gx_c, rc);
        let c = tape.tanh(c);
        // h' = c + u * (h - c)
        let diff = tape.sub(h, c);
        let gated = tape.mul(u, diff);
        tape.add(c, gated)
    }

    pub fn step<T: Scalar>(&self, tape: &mut Tape<'_, T>, p: &Bound, x: Var, h: Var) -> Var {
        let gx = self.project_inputs(tape, p, x);
        self.step_projected(tape, p, gx, h)
    }

    /// Runs over the rows of `x` (`T x in`), returning the `T` states in
    /// input order. `reverse` scans from the last row to the first.
    pub fn run<T: Scalar>(&self, tape: &mut Tape<'_, T>, p: &Bound, x: Var, reverse: bool) -> Vec<Var> {
        let steps = tape.shape(x).0;
        let gx = self.project_inputs(tape, p, x);
        let mut h = tape.zeros(1, self.hidden);
        let mut states = vec![h; steps];
        let order: Vec<usize> = if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        };
        for t in order {
            let gx_t = tape.row(gx, t);
            h = self.step_projected(tape, p, gx_t, h);
            states[t] = h;
        }
        states
    }
}

/// Bi-directional GRU producing `T x 2h` states (`[forward | backward]`).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BiGru {
    pub forward: GruCell,
    pub backward: GruCell,
}

impl BiGru {
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            forward: GruCell::new(params, &format!("{name}.fwd"), input, hidden, rng),
            backward: GruCell::new(params, &format!("{name}.bwd"), input, hidden, rng),
        }
    }

    pub fn output_width(&self) -> usize {
        self.forward.hidden + self.backward.hidden
    }

    pub fn run<T: Scalar>(&self, tape: &mut Tape<'_, T>, p: &Bound, x: Var) -> Var {
        let fwd = self.forward.run(tape, p, x, false);
        let bwd = self.backward.run(tape, p, x, true);
        let f = tape.concat_rows(&fwd);
        let b = tape.concat_rows(&bwd);
        tape.concat_cols(&[f, b])
    }
}

/// `[mean ‖ max]` pooling over the rows of `x`.
pub fn mean_max_pool<T: Scalar>(tape: &mut Tape<'_, T>, x: Var) -> Var {
    let mean = tape.mean_rows(x);
    let max = tape.max_rows(x);
    tape.concat_cols(&[mean, max])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; non-positive disables clipping.
    pub clip_norm: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 5.0,
            weight_decay: 0.0,
        }
    }
}

pub struct Adam<T> {
    cfg: AdamConfig,
    m: Vec<Mat<T>>,
    v: Vec<Mat<T>>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig, params: &ParamSet<T>) -> Self {
        let zeros = |v: &Mat<T>| Mat::zeros(v.dim());
        Self {
            cfg,
            m: params.values().iter().map(zeros).collect(),
            v: params.values().iter().map(zeros).collect(),
            t: 0,
        }
    }

    /// Applies one update. `grads` must follow the parameter order.
    pub fn step(&mut self, params: &mut ParamSet<T>, mut grads: Vec<Mat<T>>) {
        if self.cfg.clip_norm > 0.0 {
            let norm = grads
                .iter()
                .map(|g| g.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>())
                .sum::<f64>()
                .sqrt();
            if norm > self.cfg.clip_norm {
                let k = T::of(self.cfg.clip_norm / norm);
                for g in &mut grads {
                    g.mapv_inplace(|x| x * k);
                }
            }
        }
        self.t += 1;
        let b1 = T::of(self.cfg.beta1);
        let b2 = T::of(self.cfg.beta2);
        let one = T::one();
        let corr1 = one - b1.powi(self.t);
        let corr2 = one - b2.powi(self.t);
        let lr = T::of(self.cfg.lr);
        let eps = T::of(self.cfg.eps);
        let wd = T::of(self.cfg.weight_decay);
        for (((p, g), m), v) in params
            .values_mut()
            .iter_mut()
            .zip(&grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let mh = *m / corr1;
                    let vh = *v / corr2;
                    *p -= lr * (mh / (vh.sqrt() + eps) + wd * *p);
                });
        }
    }
}

/// Models whose parameters live in a single [`ParamSet`].
pub trait Trainable<T: Scalar> {
    fn param_set(&self) -> &ParamSet<T>;
    fn param_set_mut(&mut self) -> &mut ParamSet<T>;
}

/// Shared mini-batch loop: shuffles item indices each epoch, averages the
/// per-item gradients over a batch and takes one Adam step per batch.
/// Returns the mean item loss of every epoch.
pub fn fit<T, M, F>(
    model: &mut M,
    n_items: usize,
    epochs: usize,
    batch_size: usize,
    optimizer: AdamConfig,
    stage: &'static str,
    rng: &mut rand_chacha::ChaCha8Rng,
    mut item_loss: F,
) -> crate::Result<Vec<f64>>
where
    T: Scalar,
    M: Trainable<T>,
    F: FnMut(&M, usize, &mut rand_chacha::ChaCha8Rng) -> (f64, Vec<Mat<T>>),
{
    use rand::seq::SliceRandom;

    let mut opt = Adam::new(optimizer, model.param_set());
    let mut order: Vec<usize> = (0..n_items).collect();
    let mut history = Vec::with_capacity(epochs);
    let mut step = 0;
    for epoch in 0..epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for batch in order.chunks(batch_size.max(1)) {
            let mut acc = None;
            for &i in batch {
                let (loss, grads) = item_loss(model, i, rng);
                if !loss.is_finite() {
                    return Err(crate::Error::NonFiniteLoss { stage, step });
                }
                total += loss;
                add_grads(&mut acc, grads);
            }
            let mut grads = acc.expect("non-empty batch");
            let inv = T::of(1.0 / batch.len() as f64);
            for g in &mut grads {
                g.mapv_inplace(|x| x * inv);
            }
            opt.step(model.param_set_mut(), grads);
            step += 1;
        }
        let mean = total / n_items.max(1) as f64;
        log::debug!("{stage}: epoch {epoch} loss {mean:.5}");
        history.push(mean);
    }
    Ok(history)
}
