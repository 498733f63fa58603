//! Centered 2-D magnitude spectra.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::EvalError;
use crate::tensor::Tensor;

fn fft_rows(data: &mut [Complex<f64>], rows: usize, cols: usize, planner: &mut FftPlanner<f64>) {
    let fft = planner.plan_fft_forward(cols);
    for r in 0..rows {
        fft.process(&mut data[r * cols..(r + 1) * cols]);
    }
}

fn transpose(data: &[Complex<f64>], rows: usize, cols: usize) -> Vec<Complex<f64>> {
    let mut out = vec![Complex::new(0.0, 0.0); data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

/// Moves the zero-frequency bin of each axis to index `n / 2`.
pub fn fftshift(values: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[((r + rows / 2) % rows) * cols + (c + cols / 2) % cols] = values[r * cols + c];
        }
    }
    out
}

/// `|fftshift(fft2(x))|` of a 2-D grid.
pub fn magnitude_spectrum(x: &Tensor) -> Result<Tensor, EvalError> {
    let (rows, cols) = x.dims2("magnitude_spectrum")?;
    let mut data: Vec<Complex<f64>> = x.data().iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    fft_rows(&mut data, rows, cols, &mut planner);
    let mut t = transpose(&data, rows, cols);
    fft_rows(&mut t, cols, rows, &mut planner);
    let data = transpose(&t, cols, rows);
    let mags: Vec<f64> = data.iter().map(|z| z.norm()).collect();
    Ok(Tensor::new(vec![rows, cols], fftshift(&mags, rows, cols))?)
}

/// `|spectrum(truth) − spectrum(pred)|` elementwise.
pub fn power_spectrum_delta(pred: &Tensor, truth: &Tensor) -> Result<Tensor, EvalError> {
    if pred.shape() != truth.shape() {
        return Err(EvalError::ShapeMismatch {
            pred: pred.shape().to_vec(),
            truth: truth.shape().to_vec(),
        });
    }
    let a = magnitude_spectrum(truth)?;
    let b = magnitude_spectrum(pred)?;
    let delta = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).collect();
    Ok(Tensor::new(a.shape().to_vec(), delta)?)
}
