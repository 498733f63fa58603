//! Coordinate feature maps and the latent-query initializer.
//!
//! Both positional encoders share one feature map: given a frequency matrix
//! `B` (bands × input dims) a point `x` becomes `[cos(2πBx), sin(2πBx)]`.
//! [`GaussianFourierFeatures`] draws `B` from `N(0, σ²)`;
//! [`FixedSinusoidalFeatures`] uses log-stepped integer frequencies instead.

use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodingError {
    #[error("expected {expected} coordinate columns, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("model width must be even, got {0}")]
    OddWidth(usize),
    #[error("log-spacing base must exceed 1, got {0}")]
    InvalidBase(f64),
    #[error("scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("{0} must be at least 1")]
    Empty(&'static str),
}

/// Applies `[cos(2πBx); sin(2πBx)]` row by row.
fn fourier_map(freqs: &Tensor, coords: &Tensor) -> Result<Tensor, EncodingError> {
    let (bands, d_in) = (freqs.rows(), freqs.cols());
    let (points, cols) = match coords.shape() {
        &[p, c] => (p, c),
        other => {
            return Err(EncodingError::DimensionMismatch {
                expected: d_in,
                actual: other.last().copied().unwrap_or(0),
            })
        }
    };
    if cols != d_in {
        return Err(EncodingError::DimensionMismatch {
            expected: d_in,
            actual: cols,
        });
    }
    let mut out = vec![0.0; points * 2 * bands];
    for p in 0..points {
        let x = coords.row(p);
        let row = &mut out[p * 2 * bands..(p + 1) * 2 * bands];
        for b in 0..bands {
            let phase: f64 = freqs.row(b).iter().zip(x).map(|(f, x)| f * x).sum::<f64>() * TAU;
            row[b] = phase.cos();
            row[bands + b] = phase.sin();
        }
    }
    Ok(Tensor::from_parts(vec![points, 2 * bands], out))
}

/// Gaussian Fourier features with a fixed random frequency matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianFourierFeatures {
    input_dim: usize,
    n_bands: usize,
    scale: f64,
    seed: u64,
    freqs: Tensor,
}

impl GaussianFourierFeatures {
    pub fn new(input_dim: usize, n_bands: usize, scale: f64, seed: u64) -> Result<Self, EncodingError> {
        if input_dim == 0 {
            return Err(EncodingError::Empty("input_dim"));
        }
        if n_bands == 0 {
            return Err(EncodingError::Empty("n_bands"));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(EncodingError::InvalidScale(scale));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, scale).expect("scale validated above");
        let data = (0..n_bands * input_dim).map(|_| normal.sample(&mut rng)).collect();
        Ok(Self {
            input_dim,
            n_bands,
            scale,
            seed,
            freqs: Tensor::from_parts(vec![n_bands, input_dim], data),
        })
    }

    /// Rebuilds an encoder from a stored frequency matrix.
    pub fn from_matrix(freqs: Tensor, scale: f64, seed: u64) -> Result<Self, EncodingError> {
        let (n_bands, input_dim) = match freqs.shape() {
            &[b, d] => (b, d),
            other => {
                return Err(EncodingError::DimensionMismatch {
                    expected: 2,
                    actual: other.len(),
                })
            }
        };
        Ok(Self {
            input_dim,
            n_bands,
            scale,
            seed,
            freqs,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_bands(&self) -> usize {
        self.n_bands
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn width(&self) -> usize {
        2 * self.n_bands
    }

    pub fn matrix(&self) -> &Tensor {
        &self.freqs
    }

    /// points × input_dim → points × 2·n_bands; cosines first, then sines.
    pub fn encode(&self, coords: &Tensor) -> Result<Tensor, EncodingError> {
        fourier_map(&self.freqs, coords)
    }
}

/// Deterministic log-stepped integer frequencies, the GFF-off baseline.
///
/// Band `b` reads coordinate axis `b % input_dim`; along each axis the
/// frequencies step geometrically from 1 to `max_freq`, rounded to integers
/// and kept strictly increasing.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedSinusoidalFeatures {
    input_dim: usize,
    n_bands: usize,
    max_freq: f64,
    freqs: Tensor,
}

impl FixedSinusoidalFeatures {
    pub fn new(input_dim: usize, n_bands: usize, max_freq: f64) -> Result<Self, EncodingError> {
        if input_dim == 0 {
            return Err(EncodingError::Empty("input_dim"));
        }
        if n_bands == 0 {
            return Err(EncodingError::Empty("n_bands"));
        }
        if !(max_freq.is_finite() && max_freq >= 1.0) {
            return Err(EncodingError::InvalidScale(max_freq));
        }
        let per_axis = n_bands.div_ceil(input_dim);
        let ladder = integer_ladder(per_axis, max_freq);
        let mut data = vec![0.0; n_bands * input_dim];
        for b in 0..n_bands {
            let axis = b % input_dim;
            data[b * input_dim + axis] = ladder[b / input_dim];
        }
        Ok(Self {
            input_dim,
            n_bands,
            max_freq,
            freqs: Tensor::from_parts(vec![n_bands, input_dim], data),
        })
    }

    pub fn width(&self) -> usize {
        2 * self.n_bands
    }

    pub fn matrix(&self) -> &Tensor {
        &self.freqs
    }

    pub fn encode(&self, coords: &Tensor) -> Result<Tensor, EncodingError> {
        fourier_map(&self.freqs, coords)
    }
}

fn integer_ladder(n: usize, max_freq: f64) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(n);
    for j in 0..n {
        let raw = if n == 1 {
            1.0
        } else {
            max_freq.powf(j as f64 / (n - 1) as f64).round()
        };
        let floor = out.last().map_or(1.0, |prev| prev + 1.0);
        out.push(raw.max(floor));
    }
    out
}

/// Either positional encoder behind one interface.
#[derive(Clone, Debug, PartialEq)]
pub enum PositionalEncoder {
    Gaussian(GaussianFourierFeatures),
    Fixed(FixedSinusoidalFeatures),
}

impl PositionalEncoder {
    pub fn encode(&self, coords: &Tensor) -> Result<Tensor, EncodingError> {
        match self {
            Self::Gaussian(e) => e.encode(coords),
            Self::Fixed(e) => e.encode(coords),
        }
    }

    pub fn width(&self) -> usize {
        match self {
            Self::Gaussian(e) => e.width(),
            Self::Fixed(e) => e.width(),
        }
    }

    pub fn matrix(&self) -> &Tensor {
        match self {
            Self::Gaussian(e) => e.matrix(),
            Self::Fixed(e) => e.matrix(),
        }
    }
}

/// Multi-scale sinusoidal seed for a bank of learnable latent queries.
///
/// Row `m` is `s·[cos(2πνm); sin(2πνm)]` with `ν_k = base^(−k/d)`,
/// `d = width/2` and `s = d^(−1/2)`, so every row has unit norm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinusoidalQueryInit {
    pub queries: usize,
    pub width: usize,
    pub base: f64,
}

impl SinusoidalQueryInit {
    pub const DEFAULT_BASE: f64 = 10_000.0;

    pub fn new(queries: usize, width: usize) -> Self {
        Self {
            queries,
            width,
            base: Self::DEFAULT_BASE,
        }
    }

    fn validate(&self) -> Result<(), EncodingError> {
        if self.queries == 0 {
            return Err(EncodingError::Empty("queries"));
        }
        if self.width == 0 || self.width % 2 == 1 {
            return Err(EncodingError::OddWidth(self.width));
        }
        if !(self.base > 1.0 && self.base.is_finite()) {
            return Err(EncodingError::InvalidBase(self.base));
        }
        Ok(())
    }

    pub fn half_width(&self) -> usize {
        self.width / 2
    }

    pub fn scale(&self) -> f64 {
        (self.half_width() as f64).powf(-0.5)
    }

    pub fn frequencies(&self) -> Result<Vec<f64>, EncodingError> {
        self.validate()?;
        let d = self.half_width() as f64;
        Ok((0..self.half_width())
            .map(|k| self.base.powf(-(k as f64) / d))
            .collect())
    }

    pub fn build(&self) -> Result<Tensor, EncodingError> {
        let nu = self.frequencies()?;
        let d = nu.len();
        let s = self.scale();
        let mut data = vec![0.0; self.queries * self.width];
        for m in 0..self.queries {
            let row = &mut data[m * self.width..(m + 1) * self.width];
            for (k, f) in nu.iter().enumerate() {
                let phase = TAU * f * m as f64;
                row[k] = s * phase.cos();
                row[d + k] = s * phase.sin();
            }
        }
        Ok(Tensor::from_parts(vec![self.queries, self.width], data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn origin_maps_to_ones_then_zeros() {
        let enc = GaussianFourierFeatures::new(2, 32, 15.0, 7).unwrap();
        assert_eq!(enc.width(), 64);
        let out = enc.encode(&Tensor::zeros(&[1, 2])).unwrap();
        assert!(out.data()[..32].iter().all(|&v| v == 1.0));
        assert!(out.data()[32..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quarter_period() {
        let b = Tensor::from_rows(&[vec![1.0]]).unwrap();
        let enc = GaussianFourierFeatures::from_matrix(b, 1.0, 0).unwrap();
        let out = enc.encode(&Tensor::from_rows(&[vec![0.25]]).unwrap()).unwrap();
        assert!(out.data()[0].abs() < 1e-15);
        assert_eq!(out.data()[1], 1.0);
    }

    #[test]
    fn dimension_mismatch() {
        let enc = GaussianFourierFeatures::new(2, 4, 1.0, 0).unwrap();
        assert_eq!(
            enc.encode(&Tensor::zeros(&[3, 1])).unwrap_err(),
            EncodingError::DimensionMismatch { expected: 2, actual: 1 }
        );
        let fixed = FixedSinusoidalFeatures::new(1, 4, 8.0).unwrap();
        assert!(fixed.encode(&Tensor::zeros(&[3, 2])).is_err());
    }

    #[test]
    fn equal_seeds_give_identical_matrices() {
        let a = GaussianFourierFeatures::new(2, 16, 3.0, 42).unwrap();
        let b = GaussianFourierFeatures::new(2, 16, 3.0, 42).unwrap();
        let c = GaussianFourierFeatures::new(2, 16, 3.0, 43).unwrap();
        assert_eq!(a.matrix().data(), b.matrix().data());
        assert_ne!(a.matrix().data(), c.matrix().data());
    }

    #[test]
    fn frequency_spread_matches_scale() {
        let sigma = 15.0;
        let enc = GaussianFourierFeatures::new(1, 20_000, sigma, 3).unwrap();
        let v = enc.matrix().data();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((std - sigma).abs() / sigma < 0.05, "std {std}");
    }

    #[test]
    fn fixed_bands_start_at_one_and_increase() {
        let enc = FixedSinusoidalFeatures::new(1, 6, 32.0).unwrap();
        let f = enc.matrix().data();
        assert_eq!(f[0], 1.0);
        assert!(f.windows(2).all(|w| w[1] > w[0]));
        assert!(f.iter().all(|v| v.fract() == 0.0));
        let out = enc.encode(&Tensor::zeros(&[1, 1])).unwrap();
        assert_eq!(out.data(), &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn fixed_bands_cover_every_axis() {
        let enc = FixedSinusoidalFeatures::new(2, 5, 8.0).unwrap();
        assert_eq!(enc.width(), 10);
        let m = enc.matrix();
        assert_eq!(m.row(0), &[1.0, 0.0]);
        assert_eq!(m.row(1), &[0.0, 1.0]);
    }

    #[test]
    fn query_frequencies() {
        let init = SinusoidalQueryInit::new(3, 4);
        let nu = init.frequencies().unwrap();
        assert_eq!(nu[0], 1.0);
        assert!((nu[1] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn query_row_zero_and_norms() {
        let init = SinusoidalQueryInit::new(64, 256);
        let q = init.build().unwrap();
        let s = init.scale();
        assert!(q.row(0)[..128].iter().all(|&v| v == s));
        assert!(q.row(0)[128..].iter().all(|&v| v == 0.0));
        for m in 0..64 {
            let norm: f64 = q.row(m).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
        let nu = init.frequencies().unwrap();
        assert!(nu.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn query_init_rejects_bad_config() {
        assert_eq!(
            SinusoidalQueryInit::new(4, 5).build().unwrap_err(),
            EncodingError::OddWidth(5)
        );
        let bad = SinusoidalQueryInit {
            base: 1.0,
            ..SinusoidalQueryInit::new(4, 4)
        };
        assert_eq!(bad.build().unwrap_err(), EncodingError::InvalidBase(1.0));
    }

    #[test]
    fn query_rows_are_distinct() {
        let q = SinusoidalQueryInit::new(2000, 32).build().unwrap();
        for i in 0..2000 {
            for j in (i + 1)..2000 {
                let d = q
                    .row(i)
                    .iter()
                    .zip(q.row(j))
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(d > 1e-6, "rows {i} and {j} coincide");
            }
        }
    }

    proptest! {
        #[test]
        fn feature_norm_equals_band_count(x in -50.0f64..50.0, y in -50.0f64..50.0, seed in 0u64..1000) {
            let enc = GaussianFourierFeatures::new(2, 24, 15.0, seed).unwrap();
            let out = enc.encode(&Tensor::from_rows(&[vec![x, y]]).unwrap()).unwrap();
            let sq: f64 = out.data().iter().map(|v| v * v).sum();
            prop_assert!((sq - 24.0).abs() < 1e-10);
        }
    }
}
