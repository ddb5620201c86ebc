use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nine ascending amount boundaries splitting amounts into ten bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecileBinning {
    boundaries: [f64; 9],
}

impl DecileBinning {
    pub fn new(boundaries: [f64; 9]) -> Result<Self> {
        if boundaries.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::Config("decile boundaries must be non-decreasing".into()));
        }
        Ok(Self { boundaries })
    }

    /// Empirical 10%..90% quantiles with lower interpolation: the q-quantile
    /// is the sorted value at index `floor(q * (n - 1))`.
    pub fn fit(amounts: &[f64]) -> Result<Self> {
        if amounts.len() < 10 {
            return Err(Error::TooFewAmounts {
                need: 10,
                got: amounts.len(),
            });
        }
        let mut sorted = amounts.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mut boundaries = [0.0; 9];
        for (k, b) in boundaries.iter_mut().enumerate() {
            // floor((k+1)/10 * (n-1)) in integer arithmetic
            let idx = (k + 1) * (n - 1) / 10;
            *b = sorted[idx];
        }
        Self::new(boundaries)
    }

    pub fn boundaries(&self) -> &[f64; 9] {
        &self.boundaries
    }

    /// Number of boundaries strictly below `amount`; 0 is the cheapest bin.
    pub fn bin(&self, amount: f64) -> usize {
        self.boundaries.iter().take_while(|&&b| b < amount).count()
    }
}

/// Transaction token `"{mcc}_{type}_{bin}"`.
pub fn encode_transaction(tx_type: &str, mcc: &str, amount: f64, bins: &DecileBinning) -> String {
    format!("{mcc}_{tx_type}_{}", bins.bin(amount))
}
