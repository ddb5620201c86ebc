//! The black-box target classifier and the attacker's surrogate.

mod surrogate;
mod target;

pub use surrogate::{
    train_surrogate, StateHead, Surrogate, SurrogateConfig, SurrogateReport, TokenSurrogate,
};
pub use target::{train_target, TargetClassifier, TargetConfig, TfIdf};

use crate::data::TokenSequence;

/// A classifier over token sequences.
pub trait SequenceClassifier {
    fn n_classes(&self) -> usize;

    /// Class probabilities `C(x)`.
    fn predict_proba(&self, x: &TokenSequence) -> Vec<f64>;

    /// `(C(x), c(x))` with `c(x) = argmax C(x)`.
    fn classify(&self, x: &TokenSequence) -> (Vec<f64>, usize) {
        let p = self.predict_proba(x);
        let c = argmax(&p);
        (p, c)
    }
}

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Fraction of examples whose predicted label equals the given one.
pub fn accuracy<C: SequenceClassifier + ?Sized>(clf: &C, examples: &[crate::data::LabeledExample]) -> f64 {
    let correct = examples
        .iter()
        .filter(|e| clf.classify(&e.sequence).1 == e.label)
        .count();
    correct as f64 / examples.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::argmax;

    #[test]
    fn argmax_ties_go_to_smallest() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.1, 0.2, 0.7]), 2);
    }
}
