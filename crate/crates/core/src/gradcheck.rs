//! Central finite-difference checks of tape gradients.

use crate::autodiff::{Tape, Var};
use crate::tensor::{Result, Tensor};

/// Maximum over all input entries of `|analytic - numeric| / max(1, |numeric|)`,
/// where `numeric` is the central difference with step `fd_step`.
///
/// `f` must build a scalar from the supplied leaves. Non-finite results are
/// reported as `f64::INFINITY`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], fd_step: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    grad_check_entries(f, inputs, fd_step, |_, _| true)
}

/// [`grad_check`] restricted to the entries `(input, index)` accepted by `select`.
pub fn grad_check_entries<F, S>(f: F, inputs: &[Tensor], fd_step: f64, select: S) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
    S: Fn(usize, usize) -> bool,
{
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let leaves: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = f(&tape, &leaves)?;
        let grads = tape.backward(loss)?;
        leaves.iter().map(|&v| grads.get_or_zeros(v)).collect()
    };

    let eval = |values: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let leaves: Vec<Var<'_>> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        Ok(f(&tape, &leaves)?.value().item())
    };

    let mut worst = 0.0_f64;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in (0..input.len()).filter(|&j| select(i, j)) {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + fd_step;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - fd_step;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * fd_step);
            let a = analytic[i].data()[j];
            let err = (a - numeric).abs() / numeric.abs().max(1.0);
            if !err.is_finite() {
                return Ok(f64::INFINITY);
            }
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
