//! Group and batch normalization.
//!
//! Both use biased (divide-by-n) variance and `eps = 1e-5` inside the square
//! root. Group statistics pool, per sample and time step, over the spatial
//! positions and the channels of the group.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NORM_EPS: f64 = 1e-5;

/// Group normalization over a `[B, T, ..., C]` tensor.
///
/// Channels are split into `groups` contiguous groups; for each
/// `(sample, time, group)` the mean and variance are taken over the group's
/// channels and any interior (spatial) axes, then the per-channel affine
/// `scale * xhat + shift` is applied.
pub fn group_norm(
    input: &Tensor,
    groups: usize,
    scale: &Tensor,
    shift: &Tensor,
) -> Result<Tensor> {
    if input.rank() < 3 {
        return Err(Error::shape(
            "group_norm",
            format!("input rank {}, expected at least [B,T,C]", input.rank()),
        ));
    }
    let c = input.dim(input.rank() - 1);
    if c % groups != 0 {
        return Err(Error::InvalidArgument(format!(
            "group_norm: {c} channels not divisible by {groups} groups"
        )));
    }
    if scale.shape() != [c] || shift.shape() != [c] {
        return Err(Error::shape(
            "group_norm",
            format!("scale/shift must be [{c}], got {:?}/{:?}", scale.shape(), shift.shape()),
        ));
    }
    let b = input.dim(0);
    let t = input.dim(1);
    // Collapse interior axes to one spatial axis S.
    let s: usize = input.shape()[2..input.rank() - 1].iter().product();
    let cg = c / groups;

    let x = input.data();
    let mut out = Tensor::zeros(input.shape());
    let y = out.data_mut();
    let n = (s * cg) as f64;
    for bt in 0..b * t {
        let base = bt * s * c;
        for g in 0..groups {
            let c0 = g * cg;
            let mut sum = 0.0;
            for is in 0..s {
                for ic in 0..cg {
                    sum += x[base + is * c + c0 + ic];
                }
            }
            let mean = sum / n;
            let mut sq = 0.0;
            for is in 0..s {
                for ic in 0..cg {
                    let d = x[base + is * c + c0 + ic] - mean;
                    sq += d * d;
                }
            }
            let ivar = 1.0 / (sq / n + NORM_EPS).sqrt();
            for is in 0..s {
                for ic in 0..cg {
                    let idx = base + is * c + c0 + ic;
                    let xhat = (x[idx] - mean) * ivar;
                    y[idx] = scale.data()[c0 + ic] * xhat + shift.data()[c0 + ic];
                }
            }
        }
    }
    Ok(out)
}

/// Running statistics for batch normalization.
///
/// `momentum = 0.99`: after each training batch,
/// `running = momentum * running + (1 - momentum) * batch_stat`.
#[derive(Debug, Clone)]
pub struct BatchNormState {
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub initialized: bool,
}

pub const BN_MOMENTUM: f64 = 0.99;

impl BatchNormState {
    pub fn new(channels: usize) -> BatchNormState {
        BatchNormState {
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0),
            momentum: BN_MOMENTUM,
            initialized: false,
        }
    }
}

/// Saved forward quantities needed by [`batch_norm_backward`].
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub xhat: Tensor,
    pub ivar: Vec<f64>,
}

/// Batch normalization in training mode on `[B, T, C]`: per channel,
/// normalize over the combined batch and time axes, apply the per-channel
/// affine, and update the running statistics.
pub fn batch_norm_train(
    input: &Tensor,
    scale: &Tensor,
    shift: &Tensor,
    state: &mut BatchNormState,
) -> Result<(Tensor, BatchNormCache)> {
    let (b, t, c) = check_bn_shapes(input, scale, shift)?;
    let n = b * t;
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "batch_norm train mode needs B*T >= 2, got {n}"
        )));
    }
    let x = input.data();
    let mut out = Tensor::zeros(input.shape());
    let mut xhat = Tensor::zeros(input.shape());
    let mut ivars = vec![0.0; c];
    for ic in 0..c {
        let mut sum = 0.0;
        for i in 0..n {
            sum += x[i * c + ic];
        }
        let mean = sum / n as f64;
        let mut sq = 0.0;
        for i in 0..n {
            let d = x[i * c + ic] - mean;
            sq += d * d;
        }
        let var = sq / n as f64;
        let ivar = 1.0 / (var + NORM_EPS).sqrt();
        ivars[ic] = ivar;
        for i in 0..n {
            let h = (x[i * c + ic] - mean) * ivar;
            xhat.data_mut()[i * c + ic] = h;
            out.data_mut()[i * c + ic] = scale.data()[ic] * h + shift.data()[ic];
        }
        let m = state.momentum;
        let rm = state.running_mean.data()[ic];
        let rv = state.running_var.data()[ic];
        state.running_mean.data_mut()[ic] = m * rm + (1.0 - m) * mean;
        state.running_var.data_mut()[ic] = m * rv + (1.0 - m) * var;
    }
    state.initialized = true;
    Ok((out, BatchNormCache { xhat, ivar: ivars }))
}

/// Batch normalization in inference mode, using the running statistics.
pub fn batch_norm_infer(
    input: &Tensor,
    scale: &Tensor,
    shift: &Tensor,
    state: &BatchNormState,
) -> Result<Tensor> {
    let (b, t, c) = check_bn_shapes(input, scale, shift)?;
    if !state.initialized {
        return Err(Error::InvalidArgument(
            "batch_norm infer mode with uninitialized running statistics".into(),
        ));
    }
    let x = input.data();
    let mut out = Tensor::zeros(input.shape());
    for i in 0..b * t {
        for ic in 0..c {
            let ivar = 1.0 / (state.running_var.data()[ic] + NORM_EPS).sqrt();
            let h = (x[i * c + ic] - state.running_mean.data()[ic]) * ivar;
            out.data_mut()[i * c + ic] = scale.data()[ic] * h + shift.data()[ic];
        }
    }
    Ok(out)
}

/// Backward of [`batch_norm_train`]. Returns `(grad_input, grad_scale,
/// grad_shift)`.
pub fn batch_norm_backward(
    cache: &BatchNormCache,
    scale: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    if grad_out.shape() != cache.xhat.shape() {
        return Err(Error::shape(
            "batch_norm_backward",
            format!("grad_out {:?} vs cache {:?}", grad_out.shape(), cache.xhat.shape()),
        ));
    }
    let c = grad_out.dim(grad_out.rank() - 1);
    let n = grad_out.len() / c;
    let dy = grad_out.data();
    let xh = cache.xhat.data();
    let mut dx = Tensor::zeros(grad_out.shape());
    let mut dscale = Tensor::zeros(&[c]);
    let mut dshift = Tensor::zeros(&[c]);
    for ic in 0..c {
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for i in 0..n {
            sum_dy += dy[i * c + ic];
            sum_dy_xhat += dy[i * c + ic] * xh[i * c + ic];
        }
        dscale.data_mut()[ic] = sum_dy_xhat;
        dshift.data_mut()[ic] = sum_dy;
        let g = scale.data()[ic] * cache.ivar[ic] / n as f64;
        for i in 0..n {
            dx.data_mut()[i * c + ic] =
                g * (n as f64 * dy[i * c + ic] - sum_dy - xh[i * c + ic] * sum_dy_xhat);
        }
    }
    Ok((dx, dscale, dshift))
}

fn check_bn_shapes(input: &Tensor, scale: &Tensor, shift: &Tensor) -> Result<(usize, usize, usize)> {
    if input.rank() != 3 {
        return Err(Error::shape(
            "batch_norm",
            format!("input rank {}, expected [B,T,C]", input.rank()),
        ));
    }
    let c = input.dim(2);
    if scale.shape() != [c] || shift.shape() != [c] {
        return Err(Error::shape(
            "batch_norm",
            format!("scale/shift must be [{c}]"),
        ));
    }
    Ok((input.dim(0), input.dim(1), c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::SeededRng;

    #[test]
    fn group_norm_zero_mean_unit_var() {
        let mut rng = SeededRng::new(3);
        let (b, t, c, groups) = (2, 3, 64, 32);
        let input = Tensor::randn(&[b, t, c], 1.0, &mut rng);
        let scale = Tensor::filled(&[c], 1.0);
        let shift = Tensor::zeros(&[c]);
        let out = group_norm(&input, groups, &scale, &shift).unwrap();
        let cg = c / groups;
        for bt in 0..b * t {
            for g in 0..groups {
                let vals: Vec<f64> = (0..cg)
                    .map(|i| out.data()[bt * c + g * cg + i])
                    .collect();
                let mean: f64 = vals.iter().sum::<f64>() / cg as f64;
                assert!(mean.abs() < 1e-9, "group mean {mean}");
                let var: f64 =
                    vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cg as f64;
                // Normalization leaves variance s^2 / (s^2 + eps), where s^2
                // is the group's input variance (noticeably below 1 only when
                // s^2 is tiny, which small groups do hit).
                let raw: Vec<f64> = (0..cg)
                    .map(|i| input.data()[bt * c + g * cg + i])
                    .collect();
                let rmean: f64 = raw.iter().sum::<f64>() / cg as f64;
                let rvar: f64 =
                    raw.iter().map(|v| (v - rmean) * (v - rmean)).sum::<f64>() / cg as f64;
                let expect = rvar / (rvar + NORM_EPS);
                assert!((var - expect).abs() < 1e-9, "group var {var} vs {expect}");
            }
        }
    }

    #[test]
    fn group_norm_constant_input_is_zero() {
        let input = Tensor::filled(&[1, 2, 8], 5.0);
        let scale = Tensor::filled(&[8], 1.0);
        let shift = Tensor::zeros(&[8]);
        let out = group_norm(&input, 4, &scale, &shift).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn group_norm_matches_loop_oracle() {
        // C=64, 32 groups -> group size 2; direct mean/var recomputation.
        let mut rng = SeededRng::new(11);
        let input = Tensor::randn(&[1, 2, 64], 1.0, &mut rng);
        let scale = Tensor::randn(&[64], 1.0, &mut rng);
        let shift = Tensor::randn(&[64], 1.0, &mut rng);
        let out = group_norm(&input, 32, &scale, &shift).unwrap();
        for bt in 0..2 {
            for g in 0..32 {
                let a = input.data()[bt * 64 + 2 * g];
                let b = input.data()[bt * 64 + 2 * g + 1];
                let mean = (a + b) / 2.0;
                let var = ((a - mean).powi(2) + (b - mean).powi(2)) / 2.0;
                let ivar = 1.0 / (var + NORM_EPS).sqrt();
                for (i, x) in [a, b].into_iter().enumerate() {
                    let expect = scale.data()[2 * g + i] * (x - mean) * ivar
                        + shift.data()[2 * g + i];
                    let got = out.data()[bt * 64 + 2 * g + i];
                    assert!((expect - got).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn group_norm_rejects_indivisible_channels() {
        let input = Tensor::zeros(&[1, 1, 10]);
        let scale = Tensor::filled(&[10], 1.0);
        let shift = Tensor::zeros(&[10]);
        assert!(group_norm(&input, 4, &scale, &shift).is_err());
    }

    #[test]
    fn batch_norm_train_normalizes() {
        let mut rng = SeededRng::new(5);
        let input = Tensor::randn(&[4, 6, 3], 2.0, &mut rng);
        let scale = Tensor::filled(&[3], 1.0);
        let shift = Tensor::zeros(&[3]);
        let mut state = BatchNormState::new(3);
        let (out, _) = batch_norm_train(&input, &scale, &shift, &mut state).unwrap();
        for ic in 0..3 {
            let vals: Vec<f64> = (0..24).map(|i| out.data()[i * 3 + ic]).collect();
            let mean: f64 = vals.iter().sum::<f64>() / 24.0;
            let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 24.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-3);
        }
        assert!(state.initialized);
    }

    #[test]
    fn batch_norm_infer_identity_with_unit_stats() {
        let input = Tensor::from_vec(&[1, 2, 2], vec![0.5, -1.0, 2.0, 0.0]).unwrap();
        let scale = Tensor::filled(&[2], 1.0);
        let shift = Tensor::zeros(&[2]);
        let mut state = BatchNormState::new(2);
        state.initialized = true;
        let out = batch_norm_infer(&input, &scale, &shift, &state).unwrap();
        for (a, b) in input.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn batch_norm_infer_rejects_uninitialized() {
        let input = Tensor::zeros(&[1, 2, 2]);
        let scale = Tensor::filled(&[2], 1.0);
        let shift = Tensor::zeros(&[2]);
        let state = BatchNormState::new(2);
        assert!(batch_norm_infer(&input, &scale, &shift, &state).is_err());
    }

    #[test]
    fn batch_norm_running_stats_hand_unrolled() {
        // Two training steps against a hand-computed momentum update.
        let scale = Tensor::filled(&[1], 1.0);
        let shift = Tensor::zeros(&[1]);
        let mut state = BatchNormState::new(1);

        let x1 = Tensor::from_vec(&[1, 4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        batch_norm_train(&x1, &scale, &shift, &mut state).unwrap();
        let m1 = 2.5;
        let v1 = 1.25;
        let rm1 = 0.99 * 0.0 + 0.01 * m1;
        let rv1 = 0.99 * 1.0 + 0.01 * v1;
        assert!((state.running_mean.data()[0] - rm1).abs() < 1e-12);
        assert!((state.running_var.data()[0] - rv1).abs() < 1e-12);

        let x2 = Tensor::from_vec(&[1, 4, 1], vec![0.0, 0.0, 2.0, 2.0]).unwrap();
        batch_norm_train(&x2, &scale, &shift, &mut state).unwrap();
        let rm2 = 0.99 * rm1 + 0.01 * 1.0;
        let rv2 = 0.99 * rv1 + 0.01 * 1.0;
        assert!((state.running_mean.data()[0] - rm2).abs() < 1e-12);
        assert!((state.running_var.data()[0] - rv2).abs() < 1e-12);
    }

    #[test]
    fn batch_norm_train_rejects_single_element() {
        let input = Tensor::zeros(&[1, 1, 2]);
        let scale = Tensor::filled(&[2], 1.0);
        let shift = Tensor::zeros(&[2]);
        let mut state = BatchNormState::new(2);
        assert!(batch_norm_train(&input, &scale, &shift, &mut state).is_err());
    }
}
