//! Per-modality z-score statistics.

use serde::{Deserialize, Serialize};

use super::DataError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZScore {
    pub mean: f64,
    pub std: f64,
}

impl ZScore {
    pub const IDENTITY: Self = Self { mean: 0.0, std: 1.0 };

    /// Population mean and standard deviation.
    pub fn fit(values: &[f64]) -> Result<Self, DataError> {
        if values.is_empty() {
            return Err(DataError::ZeroVariance);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std > 0.0) || !std.is_finite() {
            return Err(DataError::ZeroVariance);
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }

    pub fn apply_all(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&v| self.apply(v)).collect()
    }

    pub fn invert_all(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&v| self.invert(v)).collect()
    }
}
