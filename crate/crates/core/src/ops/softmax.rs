//! Softmax with an inverse-temperature knob.
//!
//! `beta = 0` produces the exact uniform distribution, finite `beta` the
//! max-subtracted stable softmax, and `beta = inf` a one-hot vector at the
//! argmax (first index on ties).
//!
//! Reductions over the softmax axis sum their terms in value-sorted order
//! (see [`sorted_sum`]), which makes the result invariant under permutations
//! of that axis.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sums a slice in ascending value order. The result depends only on the
/// multiset of values, not on their arrangement, so reductions built on it
/// commute exactly with axis permutations.
pub fn sorted_sum(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

/// Softmax along `axis` with inverse temperature `beta >= 0` (or infinity).
pub fn softmax_axis(input: &Tensor, axis: usize, beta: f64) -> Result<Tensor> {
    if axis >= input.rank() {
        return Err(Error::InvalidArgument(format!(
            "softmax axis {axis} out of range for rank {}",
            input.rank()
        )));
    }
    if beta.is_nan() || beta < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "softmax inverse temperature must be nonnegative, got {beta}"
        )));
    }
    input.ensure_finite("softmax_axis input")?;

    let n = input.dim(axis);
    let outer: usize = input.shape()[..axis].iter().product();
    let inner: usize = input.shape()[axis + 1..].iter().product();
    let x = input.data();
    let mut out = Tensor::zeros(input.shape());
    let y = out.data_mut();
    let mut row = vec![0.0; n];
    for o in 0..outer {
        for i in 0..inner {
            for j in 0..n {
                row[j] = x[(o * n + j) * inner + i];
            }
            softmax_row(&row, beta, &mut |j, v| y[(o * n + j) * inner + i] = v);
        }
    }
    Ok(out)
}

/// Softmax over the rows of the trailing axis, writing through `emit(j, v)`.
fn softmax_row(row: &[f64], beta: f64, emit: &mut dyn FnMut(usize, f64)) {
    let n = row.len();
    if beta == 0.0 {
        let u = 1.0 / n as f64;
        for j in 0..n {
            emit(j, u);
        }
        return;
    }
    if beta.is_infinite() {
        // Hard argmax; ties break toward the lowest index.
        let mut arg = 0;
        for j in 1..n {
            if row[j] > row[arg] {
                arg = j;
            }
        }
        for j in 0..n {
            emit(j, if j == arg { 1.0 } else { 0.0 });
        }
        return;
    }
    let mut max = f64::NEG_INFINITY;
    for &v in row {
        if v > max {
            max = v;
        }
    }
    let exps: Vec<f64> = row.iter().map(|&v| (beta * (v - max)).exp()).collect();
    let denom = sorted_sum(&exps);
    for (j, e) in exps.iter().enumerate() {
        emit(j, e / denom);
    }
}

/// Softmax over the last axis; the common case in the attention stack.
pub fn softmax_last_axis(input: &Tensor, beta: f64) -> Result<Tensor> {
    softmax_axis(input, input.rank() - 1, beta)
}

/// Backward of softmax over the last axis at inverse temperature `beta`:
/// given `alpha = softmax(beta * s)` and the upstream gradient w.r.t.
/// `alpha`, returns the gradient w.r.t. `s`:
/// `ds_j = beta * alpha_j * (dalpha_j - sum_k dalpha_k alpha_k)`.
pub fn softmax_last_axis_backward(
    alpha: &Tensor,
    grad_alpha: &Tensor,
    beta: f64,
) -> Result<Tensor> {
    if alpha.shape() != grad_alpha.shape() {
        return Err(Error::shape(
            "softmax_backward",
            format!("{:?} vs {:?}", alpha.shape(), grad_alpha.shape()),
        ));
    }
    let n = alpha.dim(alpha.rank() - 1);
    let rows = alpha.len() / n;
    let a = alpha.data();
    let da = grad_alpha.data();
    let mut out = Tensor::zeros(alpha.shape());
    let ds = out.data_mut();
    for r in 0..rows {
        let base = r * n;
        let mut dot = 0.0;
        for j in 0..n {
            dot += da[base + j] * a[base + j];
        }
        for j in 0..n {
            ds[base + j] = beta * a[base + j] * (da[base + j] - dot);
        }
    }
    Ok(out)
}
