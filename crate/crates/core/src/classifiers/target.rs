use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SequenceClassifier;
use crate::autodiff::{softmax_rows, Mat};
use crate::data::{num_classes, LabeledExample, TokenId, TokenSequence, UNK};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, ParamSet};
use crate::scalar::Scalar;

/// Bag-of-tokens TF-IDF with raw counts, smoothed idf and L2 normalisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfIdf {
    /// `ln((1 + n) / (1 + df)) + 1`, indexed by token id.
    pub idf: Vec<f64>,
}

impl TfIdf {
    pub fn fit(corpus: &[&TokenSequence], vocab_size: usize) -> Self {
        let mut df = vec![0usize; vocab_size];
        for x in corpus {
            let mut seen: Vec<TokenId> = x.ids().iter().map(|&t| clamp(t, vocab_size)).collect();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                df[t as usize] += 1;
            }
        }
        let n = corpus.len() as f64;
        let idf = df.iter().map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0).collect();
        Self { idf }
    }

    pub fn len(&self) -> usize {
        self.idf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idf.is_empty()
    }

    /// Sparse feature vector sorted by token id.
    pub fn transform(&self, x: &TokenSequence) -> Vec<(usize, f64)> {
        let mut counts: BTreeMap<TokenId, usize> = BTreeMap::new();
        for &t in x.ids() {
            *counts.entry(clamp(t, self.idf.len())).or_default() += 1;
        }
        let mut feats: Vec<(usize, f64)> = counts
            .into_iter()
            .map(|(t, c)| (t as usize, c as f64 * self.idf[t as usize]))
            .collect();
        let norm = feats.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, v) in &mut feats {
                *v /= norm;
            }
        }
        feats
    }
}

fn clamp(t: TokenId, vocab_size: usize) -> TokenId {
    if (t as usize) < vocab_size {
        t
    } else {
        UNK
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TargetConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// L2 penalty on the weights (not the biases).
    pub l2: f64,
    pub seed: u64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            optimizer: AdamConfig {
                lr: 0.05,
                clip_norm: 0.0,
                ..AdamConfig::default()
            },
            l2: 1e-5,
            seed: 0,
        }
    }
}

/// Multinomial logistic regression on TF-IDF features.
#[derive(Debug, Clone)]
pub struct TargetClassifier<T: Scalar> {
    pub tfidf: TfIdf,
    /// `V x k` weights followed by the `1 x k` bias.
    params: ParamSet<T>,
    pub history: Vec<f64>,
}

impl<T: Scalar> TargetClassifier<T> {
    pub fn from_parts(tfidf: TfIdf, weights: Mat<T>, bias: Mat<T>) -> Result<Self> {
        if weights.nrows() != tfidf.len() || bias.dim() != (1, weights.ncols()) {
            return Err(Error::WidthMismatch {
                expected: tfidf.len(),
                got: weights.nrows(),
            });
        }
        let mut params = ParamSet::new();
        params.add("target.w", weights);
        params.add("target.b", bias);
        Ok(Self {
            tfidf,
            params,
            history: Vec::new(),
        })
    }

    pub fn weights(&self) -> &Mat<T> {
        &self.params.values()[0]
    }

    pub fn bias(&self) -> &Mat<T> {
        &self.params.values()[1]
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn logits(&self, feats: &[(usize, f64)]) -> Mat<T> {
        let mut z = self.bias().clone();
        let w = self.weights();
        for &(t, v) in feats {
            let v = T::of(v);
            for (zj, wj) in z.iter_mut().zip(w.row(t)) {
                *zj += v * *wj;
            }
        }
        z
    }
}

impl<T: Scalar> SequenceClassifier for TargetClassifier<T> {
    fn n_classes(&self) -> usize {
        self.bias().ncols()
    }

    fn predict_proba(&self, x: &TokenSequence) -> Vec<f64> {
        let p = softmax_rows(&self.logits(&self.tfidf.transform(x)));
        p.iter().map(|v| v.as_f64()).collect()
    }
}

/// Fits TF-IDF on the training tokens, then the logistic regression by
/// mini-batch Adam on cross-entropy plus an L2 weight penalty.
pub fn train_target<T: Scalar>(
    train: &[LabeledExample],
    vocab_size: usize,
    config: &TargetConfig,
) -> Result<TargetClassifier<T>> {
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let k = num_classes(train);
    let mut present = vec![false; k];
    for e in train {
        present[e.label] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::SingleClass);
    }
    let seqs: Vec<&TokenSequence> = train.iter().map(|e| &e.sequence).collect();
    let tfidf = TfIdf::fit(&seqs, vocab_size);
    let feats: Vec<Vec<(usize, f64)>> = seqs.iter().map(|x| tfidf.transform(x)).collect();
    let mut clf = TargetClassifier::<T>::from_parts(tfidf, Mat::zeros((vocab_size, k)), Mat::zeros((1, k)))?;
    let mut opt = Adam::new(config.optimizer, clf.params());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7a29_e7c1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (step, batch) in order.chunks(config.batch_size.max(1)).enumerate() {
            let mut gw = Mat::<T>::zeros((vocab_size, k));
            let mut gb = Mat::<T>::zeros((1, k));
            let inv = 1.0 / batch.len() as f64;
            for &i in batch {
                let p = softmax_rows(&clf.logits(&feats[i]));
                let y = train[i].label;
                let loss = -p[[0, y]].as_f64().max(1e-300).ln();
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { stage: "target", step });
                }
                total += loss;
                let mut d = p;
                d[[0, y]] -= T::one();
                d.mapv_inplace(|v| v * T::of(inv));
                for &(t, v) in &feats[i] {
                    let v = T::of(v);
                    for (g, dj) in gw.row_mut(t).iter_mut().zip(d.iter()) {
                        *g += v * *dj;
                    }
                }
                gb += &d;
            }
            if config.l2 > 0.0 {
                gw.scaled_add(T::of(config.l2), clf.weights());
            }
            opt.step(clf.params_mut(), vec![gw, gb]);
        }
        let mean = total / train.len() as f64;
        log::debug!("target: epoch {epoch} loss {mean:.5}");
        clf.history.push(mean);
    }
    Ok(clf)
}
