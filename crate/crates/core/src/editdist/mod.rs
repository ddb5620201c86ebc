//! Token-level edit distance and its differentiable surrogate.

mod deep;
mod pairs;

pub use deep::{heldout_mae, train_deep_lev, DeepLev, DeepLevConfig};
pub use pairs::{generate_pairs, read_pairs, write_pairs, PairExample};

use serde::{Deserialize, Serialize};

/// Levenshtein distance with unit insert/delete/substitute costs.
pub fn wer<A: PartialEq>(x: &[A], y: &[A]) -> usize {
    if x.len() < y.len() {
        return wer(y, x);
    }
    let mut row: Vec<usize> = (0..=y.len()).collect();
    for (i, a) in x.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, b) in y.iter().enumerate() {
            let sub = diag + usize::from(a != b);
            diag = row[j + 1];
            row[j + 1] = sub.min(row[j] + 1).min(diag + 1);
        }
    }
    row[y.len()]
}

/// `wer(x, y) / max(|x|, |y|)`; zero when both are empty.
pub fn wer_norm<A: PartialEq>(x: &[A], y: &[A]) -> f64 {
    let longest = x.len().max(y.len());
    if longest == 0 {
        return 0.0;
    }
    wer(x, y) as f64 / longest as f64
}

/// Edit kinds used by one minimal script turning `x` into `y`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub insertions: usize,
    pub deletions: usize,
    pub substitutions: usize,
}

impl EditCounts {
    pub fn total(&self) -> usize {
        self.insertions + self.deletions + self.substitutions
    }
}

/// Backtraces the full DP table. Among minimal scripts, prefers
/// substitutions, then deletions, then insertions.
pub fn edit_script<A: PartialEq>(x: &[A], y: &[A]) -> EditCounts {
    let (n, m) = (x.len(), y.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(x[i - 1] != y[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut counts = EditCounts::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + usize::from(x[i - 1] != y[j - 1]) {
            if x[i - 1] != y[j - 1] {
                counts.substitutions += 1;
            }
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            counts.deletions += 1;
            i -= 1;
        } else {
            counts.insertions += 1;
            j -= 1;
        }
    }
    counts
}
