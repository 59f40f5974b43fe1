use serde::{Deserialize, Serialize};

use super::NodeFeatureVector;
use crate::error::{Error, Result};

/// Building- and block-level columns; the remaining columns are indicators.
pub const NUM_NUMERICAL: usize = 20;

/// Per-column z-score statistics over the numerical features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub std: Vec<f64>,
}

impl NormalizationStats {
    pub fn fit<'a>(vectors: impl IntoIterator<Item = &'a NodeFeatureVector>) -> Result<NormalizationStats> {
        let rows: Vec<&NodeFeatureVector> = vectors.into_iter().collect();
        if rows.len() < 2 {
            return Err(Error::InvalidState(format!(
                "normalization needs at least 2 training nodes, got {}",
                rows.len()
            )));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; NUM_NUMERICAL];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(&r.0[..NUM_NUMERICAL]) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; NUM_NUMERICAL];
        for r in &rows {
            for c in 0..NUM_NUMERICAL {
                let d = r.0[c] - mean[c];
                var[c] += d * d;
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
        Ok(NormalizationStats { mean, std })
    }

    pub fn is_constant(&self, col: usize) -> bool {
        self.std[col] <= f64::EPSILON * self.mean[col].abs().max(1.0)
    }

    pub fn apply(&self, v: &NodeFeatureVector) -> NodeFeatureVector {
        let mut out = *v;
        for c in 0..NUM_NUMERICAL {
            out.0[c] = if self.is_constant(c) { 0.0 } else { (v.0[c] - self.mean[c]) / self.std[c] };
        }
        out
    }

    pub fn apply_row(&self, row: &mut [f64]) {
        for c in 0..NUM_NUMERICAL {
            row[c] = if self.is_constant(c) { 0.0 } else { (row[c] - self.mean[c]) / self.std[c] };
        }
    }
}
