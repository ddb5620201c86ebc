//! Attack-quality metrics against the target classifier.

mod lm;

use serde::{Deserialize, Serialize};

pub use lm::{train_lm, LanguageModel, LmConfig, TokenLm, UniformLm};

use crate::attacks::AttackResult;
use crate::classifiers::SequenceClassifier;
use crate::editdist::{wer, wer_norm};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub attack: String,
    pub config_hash: String,
    pub n_examples: usize,
    pub roc_auc_drop: f64,
    pub accuracy_drop: f64,
    pub probability_drop: f64,
    pub mean_wer: f64,
    pub normalized_wer: f64,
    pub log_perplexity: f64,
    pub nad: f64,
}

/// `(L - WER) / (L - 1)` clamped to `[0, 1]`, with `L = 1` giving 0.
fn closeness(x: &[u32], y: &[u32]) -> f64 {
    let l = x.len().max(y.len());
    if l <= 1 {
        return 0.0;
    }
    ((l as f64 - wer(x, y) as f64) / (l as f64 - 1.0)).clamp(0.0, 1.0)
}

/// Normalised accuracy drop over the examples the target gets right.
pub fn nad<C: SequenceClassifier + ?Sized>(results: &[AttackResult], target: &C, labels: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    let mut n_correct = 0usize;
    for (r, &y) in results.iter().zip(labels) {
        let c = target.classify(&r.original).1;
        if c != y {
            continue;
        }
        n_correct += 1;
        if target.classify(&r.adversarial).1 != c {
            total += closeness(r.original.ids(), r.adversarial.ids());
        }
    }
    if n_correct == 0 {
        return Err(Error::NoCorrectExamples);
    }
    Ok(total / n_correct as f64)
}

/// Macro one-vs-rest ROC AUC from rank statistics with averaged ties.
/// Classes without both positives and negatives are skipped; with none
/// left the AUC is 0.5.
pub fn roc_auc_macro(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
    let k = probs.first().map_or(0, Vec::len);
    let mut aucs = Vec::new();
    for class in 0..k {
        let n_pos = labels.iter().filter(|&&y| y == class).count();
        let n_neg = labels.len() - n_pos;
        if n_pos == 0 || n_neg == 0 {
            continue;
        }
        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.sort_by(|&a, &b| probs[a][class].total_cmp(&probs[b][class]));
        let mut rank_sum = 0.0;
        let mut i = 0;
        while i < order.len() {
            let mut j = i;
            while j + 1 < order.len() && probs[order[j + 1]][class] == probs[order[i]][class] {
                j += 1;
            }
            // ranks i+1..=j+1 share their mean
            let rank = (i + j + 2) as f64 / 2.0;
            rank_sum += rank * order[i..=j].iter().filter(|&&o| labels[o] == class).count() as f64;
            i = j + 1;
        }
        let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
        aucs.push(u / (n_pos * n_neg) as f64);
    }
    if aucs.is_empty() {
        0.5
    } else {
        aucs.iter().sum::<f64>() / aucs.len() as f64
    }
}

/// Every column of the report for one batch of results. `labels[i]` is
/// the ground-truth class of `results[i].original`.
pub fn metric_suite<C: SequenceClassifier + ?Sized, L: TokenLm + ?Sized>(
    results: &[AttackResult],
    target: &C,
    labels: &[usize],
    lm: &L,
) -> Result<MetricsReport> {
    if results.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if results.len() != labels.len() {
        return Err(Error::Config(format!("{} results but {} labels", results.len(), labels.len())));
    }
    let n = results.len() as f64;
    let before: Vec<(Vec<f64>, usize)> = results.iter().map(|r| target.classify(&r.original)).collect();
    let after: Vec<(Vec<f64>, usize)> = results.iter().map(|r| target.classify(&r.adversarial)).collect();
    let correct = |preds: &[(Vec<f64>, usize)]| preds.iter().zip(labels).filter(|((_, c), &y)| *c == y).count() as f64;
    let accuracy_drop = (correct(&before) - correct(&after)) / n;
    let p_before: Vec<Vec<f64>> = before.iter().map(|(p, _)| p.clone()).collect();
    let p_after: Vec<Vec<f64>> = after.iter().map(|(p, _)| p.clone()).collect();
    let roc_auc_drop = roc_auc_macro(&p_before, labels) - roc_auc_macro(&p_after, labels);

    let mut prob_total = 0.0;
    let mut n_correct = 0usize;
    for ((b, a), &y) in before.iter().zip(&after).zip(labels) {
        if b.1 == y {
            prob_total += b.0[y] - a.0[y];
            n_correct += 1;
        }
    }
    let probability_drop = if n_correct > 0 { prob_total / n_correct as f64 } else { 0.0 };

    let mean_wer = results
        .iter()
        .map(|r| wer(r.original.ids(), r.adversarial.ids()) as f64)
        .sum::<f64>()
        / n;
    let normalized_wer = results
        .iter()
        .map(|r| wer_norm(r.original.ids(), r.adversarial.ids()))
        .sum::<f64>()
        / n;
    let log_perplexity = results.iter().map(|r| lm.log_perplexity(&r.adversarial)).sum::<f64>() / n;
    Ok(MetricsReport {
        dataset: String::new(),
        attack: String::new(),
        config_hash: String::new(),
        n_examples: results.len(),
        roc_auc_drop,
        accuracy_drop,
        probability_drop,
        mean_wer,
        normalized_wer,
        log_perplexity,
        nad: nad(results, target, labels)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::{EditAudit, Method};
    use crate::data::TokenSequence;

    /// Label 1 iff token 9 is present, with probability 0.8.
    struct Marker;

    impl SequenceClassifier for Marker {
        fn n_classes(&self) -> usize {
            2
        }

        fn predict_proba(&self, x: &TokenSequence) -> Vec<f64> {
            if x.ids().contains(&9) {
                vec![0.2, 0.8]
            } else {
                vec![0.8, 0.2]
            }
        }
    }

    fn result(x: &[u32], y: &[u32]) -> AttackResult {
        let original = TokenSequence::new(x.to_vec()).unwrap();
        let adversarial = TokenSequence::new(y.to_vec()).unwrap();
        AttackResult {
            index: 0,
            method: Method::RandomWalk,
            label: 0,
            flipped: false,
            selected: None,
            wer: wer(x, y),
            audit: EditAudit::new(x, y),
            original,
            adversarial,
            trace: Vec::new(),
            wall_time: Default::default(),
        }
    }

    #[test]
    fn nad_hand_fixture() {
        // both correct; the first is flipped with one substitution at L = 5
        let results = [result(&[8, 8, 9, 8, 8], &[8, 8, 10, 8, 8]), result(&[8, 8, 8], &[8, 10, 8])];
        assert_eq!(nad(&results, &Marker, &[1, 0]).unwrap(), 0.5);
        let identity = [result(&[8, 9], &[8, 9]), result(&[8], &[8])];
        assert_eq!(nad(&identity, &Marker, &[1, 0]).unwrap(), 0.0);
        // fully rewritten flip contributes nothing
        let rewritten = [result(&[9, 9], &[8, 10])];
        assert_eq!(nad(&rewritten, &Marker, &[1]).unwrap(), 0.0);
        // single-token flip: 0/0 counts as 0
        assert_eq!(nad(&[result(&[9], &[8])], &Marker, &[1]).unwrap(), 0.0);
        assert!(matches!(nad(&results, &Marker, &[0, 1]), Err(Error::NoCorrectExamples)));
    }

    #[test]
    fn auc_matches_pair_counting() {
        let probs = vec![vec![0.9, 0.1], vec![0.4, 0.6], vec![0.4, 0.6], vec![0.2, 0.8], vec![0.6, 0.4]];
        let labels = [0, 1, 0, 1, 1];
        // class 1: positives {0.6, 0.8, 0.4}, negatives {0.1, 0.6}
        // pairs won: 0.6>0.1, 0.6=0.6 (half), 0.8>both, 0.4>0.1 -> 4.5 of 6
        let auc1 = 4.5 / 6.0;
        assert!((roc_auc_macro(&probs, &labels) - auc1).abs() < 1e-12);
        assert_eq!(roc_auc_macro(&probs, &[1; 5]), 0.5);
    }

    #[test]
    fn identity_attack_reports_zero() {
        let results = [result(&[8, 9], &[8, 9]), result(&[8, 8, 8], &[8, 8, 8]), result(&[9], &[9])];
        let r = metric_suite(&results, &Marker, &[1, 0, 0], &UniformLm::new(12)).unwrap();
        assert_eq!(r.accuracy_drop, 0.0);
        assert_eq!(r.probability_drop, 0.0);
        assert_eq!(r.roc_auc_drop, 0.0);
        assert_eq!(r.normalized_wer, 0.0);
        assert_eq!(r.nad, 0.0);
        assert!((r.log_perplexity - 12f64.ln()).abs() < 1e-12);
        assert_eq!(r, metric_suite(&results, &Marker, &[1, 0, 0], &UniformLm::new(12)).unwrap());
    }

    #[test]
    fn hand_computed_batch() {
        let results = [
            result(&[8, 9, 8, 8], &[8, 10, 8, 8]), // correct, flipped, wer 1, L 4
            result(&[8, 8], &[8, 9, 8]),           // correct, flipped, wer 1, L 3
            result(&[9, 9, 9], &[9, 9, 9]),        // wrong (label 0 predicted 1), unchanged
            result(&[8, 8, 8, 8], &[10, 10]),      // correct, unchanged label, wer 4
        ];
        let labels = [1, 0, 0, 0];
        let r = metric_suite(&results, &Marker, &labels, &UniformLm::new(20)).unwrap();
        // accuracy 3/4 -> 1/4
        assert!((r.accuracy_drop - 0.5).abs() < 1e-12);
        // true-class probability over Z: 0.8->0.2, 0.8->0.2, 0.8->0.8
        assert!((r.probability_drop - 1.2 / 3.0).abs() < 1e-12);
        assert!((r.mean_wer - 6.0 / 4.0).abs() < 1e-12);
        let nwer = (0.25 + 1.0 / 3.0 + 0.0 + 1.0) / 4.0;
        assert!((r.normalized_wer - nwer).abs() < 1e-12);
        let nad = ((4.0 - 1.0) / 3.0 + (3.0 - 1.0) / 2.0) / 3.0;
        assert!((r.nad - nad).abs() < 1e-12);
        // AUC on class-1 scores: before [0.8,0.2,0.8,0.2] vs labels [1,0,0,0]: 5/6... averaged with class 0
        let before = vec![vec![0.2, 0.8], vec![0.8, 0.2], vec![0.2, 0.8], vec![0.8, 0.2]];
        let after = vec![vec![0.8, 0.2], vec![0.2, 0.8], vec![0.2, 0.8], vec![0.8, 0.2]];
        let expected = roc_auc_macro(&before, &labels) - roc_auc_macro(&after, &labels);
        assert!((r.roc_auc_drop - expected).abs() < 1e-12);
        assert!((roc_auc_macro(&before, &labels) - (2.0 / 3.0 + 0.5 / 3.0)).abs() < 1e-12);
    }
}
