//! 1D and 3D convolutions and spatial max pooling.
//!
//! Floating-point summation order is part of the contract so that the naive
//! loop oracles in the test suite can match bit for bit: for every output
//! element the terms are accumulated kernel-position-major and input-channel
//! -minor, starting from the bias. Zero-padded positions contribute no term.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 1D convolution over the time axis, SAME zero padding.
///
/// `input` is `[B, T, Cin]`, `kernel` is `[K, Cin, Cout]` with `K` odd,
/// `bias` is `[Cout]`; the output is `[B, T, Cout]`.
///
/// Per output element `[b, t, co]` the accumulator starts at `bias[co]` and
/// receives `input[b, t + k - K/2, ci] * kernel[k, ci, co]` for
/// `k = 0..K` (outer) and `ci = 0..Cin` (inner).
pub fn conv1d(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (b, t, ci, k, co) = check_conv1d_shapes(input, kernel, bias)?;
    let pad = k / 2;

    let mut out = Tensor::zeros(&[b, t, co]);
    let x = input.data();
    let w = kernel.data();
    let y = out.data_mut();
    for ib in 0..b {
        for it in 0..t {
            let row = &mut y[(ib * t + it) * co..(ib * t + it + 1) * co];
            row.copy_from_slice(bias.data());
            for ik in 0..k {
                let xt = it as isize + ik as isize - pad as isize;
                if xt < 0 || xt >= t as isize {
                    continue;
                }
                let xrow = (ib * t + xt as usize) * ci;
                for ic in 0..ci {
                    let xv = x[xrow + ic];
                    let wrow = (ik * ci + ic) * co;
                    for oc in 0..co {
                        row[oc] += xv * w[wrow + oc];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv1d`] given the upstream gradient `grad_out` `[B,T,Cout]`.
///
/// Returns `(grad_input, grad_kernel, grad_bias)`.
pub fn conv1d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (b, t, ci, k, co) = check_conv1d_shapes(input, kernel, &Tensor::zeros(&[kernel.dim(2)]))?;
    if grad_out.shape() != [b, t, co] {
        return Err(Error::shape(
            "conv1d_backward",
            format!("grad_out {:?}, expected {:?}", grad_out.shape(), [b, t, co]),
        ));
    }
    let pad = k / 2;
    let x = input.data();
    let dy = grad_out.data();

    // Kernel transposed to [K, Cout, Cin] so the innermost loops below run
    // over contiguous memory.
    let w = kernel.data();
    let mut wt = vec![0.0; w.len()];
    for ik in 0..k {
        for ic in 0..ci {
            for oc in 0..co {
                wt[(ik * co + oc) * ci + ic] = w[(ik * ci + ic) * co + oc];
            }
        }
    }

    let mut dx = Tensor::zeros(input.shape());
    let mut dw = Tensor::zeros(kernel.shape());
    let mut db = Tensor::zeros(&[co]);
    {
        let dxd = dx.data_mut();
        let dwd = dw.data_mut();
        let dbd = db.data_mut();
        for ib in 0..b {
            for it in 0..t {
                let dyrow = &dy[(ib * t + it) * co..(ib * t + it + 1) * co];
                for oc in 0..co {
                    dbd[oc] += dyrow[oc];
                }
                for ik in 0..k {
                    let xt = it as isize + ik as isize - pad as isize;
                    if xt < 0 || xt >= t as isize {
                        continue;
                    }
                    let xrow = (ib * t + xt as usize) * ci;
                    for oc in 0..co {
                        let d = dyrow[oc];
                        let wtrow = (ik * co + oc) * ci;
                        for ic in 0..ci {
                            dxd[xrow + ic] += d * wt[wtrow + ic];
                        }
                    }
                    for ic in 0..ci {
                        let xv = x[xrow + ic];
                        let dwrow = (ik * ci + ic) * co;
                        for oc in 0..co {
                            dwd[dwrow + oc] += xv * dyrow[oc];
                        }
                    }
                }
            }
        }
    }
    Ok((dx, dw, db))
}

fn check_conv1d_shapes(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
) -> Result<(usize, usize, usize, usize, usize)> {
    if input.rank() != 3 {
        return Err(Error::shape(
            "conv1d",
            format!("input rank {} (shape {:?}), expected [B,T,Cin]", input.rank(), input.shape()),
        ));
    }
    if kernel.rank() != 3 {
        return Err(Error::shape(
            "conv1d",
            format!("kernel rank {}, expected [K,Cin,Cout]", kernel.rank()),
        ));
    }
    let (b, t, ci) = (input.dim(0), input.dim(1), input.dim(2));
    let (k, kci, co) = (kernel.dim(0), kernel.dim(1), kernel.dim(2));
    if k % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "conv1d kernel width must be odd, got {k}"
        )));
    }
    if kci != ci {
        return Err(Error::shape(
            "conv1d",
            format!("input channel dim is {ci} but kernel expects {kci}"),
        ));
    }
    if bias.shape() != [co] {
        return Err(Error::shape(
            "conv1d",
            format!("bias shape {:?}, expected [{co}]", bias.shape()),
        ));
    }
    Ok((b, t, ci, k, co))
}

/// 3D convolution: SAME zero padding in time, VALID in space, kernel 3x3x3.
///
/// `input` is `[B, T, H, W, Cin]`, `kernel` is `[3, 3, 3, Cin, Cout]`,
/// `stride` applies to the two spatial axes only (time stride is 1).
/// Output is `[B, T, H', W', Cout]` with `X' = (X - 3) / stride + 1`.
///
/// Summation order per output element: `kt` (time tap), `kh`, `kw` outer,
/// input channel inner, starting from the bias.
pub fn conv3d(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
    if input.rank() != 5 {
        return Err(Error::shape(
            "conv3d",
            format!("input rank {}, expected [B,T,H,W,Cin]", input.rank()),
        ));
    }
    if kernel.rank() != 5 || kernel.dim(0) != 3 || kernel.dim(1) != 3 || kernel.dim(2) != 3 {
        return Err(Error::shape(
            "conv3d",
            format!("kernel shape {:?}, expected [3,3,3,Cin,Cout]", kernel.shape()),
        ));
    }
    if stride != 1 && stride != 2 {
        return Err(Error::InvalidArgument(format!(
            "conv3d spatial stride must be 1 or 2, got {stride}"
        )));
    }
    let (b, t, h, w_dim, ci) = (
        input.dim(0),
        input.dim(1),
        input.dim(2),
        input.dim(3),
        input.dim(4),
    );
    if h < 3 || w_dim < 3 {
        return Err(Error::shape(
            "conv3d",
            format!("spatial dims {h}x{w_dim} smaller than the 3x3 kernel extent"),
        ));
    }
    if kernel.dim(3) != ci {
        return Err(Error::shape(
            "conv3d",
            format!("input channel dim is {ci} but kernel expects {}", kernel.dim(3)),
        ));
    }
    let co = kernel.dim(4);
    if bias.shape() != [co] {
        return Err(Error::shape(
            "conv3d",
            format!("bias shape {:?}, expected [{co}]", bias.shape()),
        ));
    }
    let oh = (h - 3) / stride + 1;
    let ow = (w_dim - 3) / stride + 1;

    let mut out = Tensor::zeros(&[b, t, oh, ow, co]);
    let x = input.data();
    let w = kernel.data();
    let y = out.data_mut();
    for ib in 0..b {
        for it in 0..t {
            for ioh in 0..oh {
                for iow in 0..ow {
                    let orow =
                        ((((ib * t + it) * oh + ioh) * ow) + iow) * co;
                    let row = &mut y[orow..orow + co];
                    row.copy_from_slice(bias.data());
                    for kt in 0..3usize {
                        let xt = it as isize + kt as isize - 1;
                        if xt < 0 || xt >= t as isize {
                            continue;
                        }
                        for kh in 0..3usize {
                            let xh = ioh * stride + kh;
                            for kw in 0..3usize {
                                let xw = iow * stride + kw;
                                let xrow =
                                    ((((ib * t + xt as usize) * h + xh) * w_dim) + xw) * ci;
                                for ic in 0..ci {
                                    let xv = x[xrow + ic];
                                    let wrow = (((kt * 3 + kh) * 3 + kw) * ci + ic) * co;
                                    for oc in 0..co {
                                        row[oc] += xv * w[wrow + oc];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// 2x2 spatial max pooling with stride 2 on a `[B, T, H, W, C]` tensor.
/// A trailing odd row or column is dropped.
pub fn maxpool_spatial(input: &Tensor) -> Result<Tensor> {
    if input.rank() != 5 {
        return Err(Error::shape(
            "maxpool_spatial",
            format!("input rank {}, expected [B,T,H,W,C]", input.rank()),
        ));
    }
    let (b, t, h, w, c) = (
        input.dim(0),
        input.dim(1),
        input.dim(2),
        input.dim(3),
        input.dim(4),
    );
    if h < 2 || w < 2 {
        return Err(Error::shape(
            "maxpool_spatial",
            format!("spatial dims {h}x{w} smaller than the 2x2 window"),
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[b, t, oh, ow, c]);
    let x = input.data();
    let y = out.data_mut();
    for ib in 0..b {
        for it in 0..t {
            for ioh in 0..oh {
                for iow in 0..ow {
                    for ic in 0..c {
                        let mut m = f64::NEG_INFINITY;
                        for dh in 0..2 {
                            for dw in 0..2 {
                                let v = x[((((ib * t + it) * h + 2 * ioh + dh) * w)
                                    + 2 * iow
                                    + dw)
                                    * c
                                    + ic];
                                if v > m {
                                    m = v;
                                }
                            }
                        }
                        y[((((ib * t + it) * oh + ioh) * ow) + iow) * c + ic] = m;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// ReLU, elementwise.
pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Backward of [`relu`]: passes the gradient where the forward input was
/// strictly positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.shape() != grad_out.shape() {
        return Err(Error::shape(
            "relu_backward",
            format!("{:?} vs {:?}", input.shape(), grad_out.shape()),
        ));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Ok(Tensor::from_vec(input.shape(), data).unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv1d_identity_kernel() {
        // K=1 kernel carrying the identity map leaves the input unchanged.
        let c = 3;
        let input = Tensor::from_vec(
            &[2, 4, c],
            (0..24).map(|i| i as f64 * 0.5 - 3.0).collect(),
        )
        .unwrap();
        let mut kernel = Tensor::zeros(&[1, c, c]);
        for i in 0..c {
            *kernel.at3_mut(0, i, i) = 1.0;
        }
        let bias = Tensor::zeros(&[c]);
        let out = conv1d(&input, &kernel, &bias).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn conv1d_hand_example() {
        // input [1,2,3], kernel [1,1,1], SAME zero pad -> [3,6,5]
        let input = Tensor::from_vec(&[1, 3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let kernel = Tensor::from_vec(&[3, 1, 1], vec![1.0, 1.0, 1.0]).unwrap();
        let bias = Tensor::zeros(&[1]);
        let out = conv1d(&input, &kernel, &bias).unwrap();
        assert_eq!(out.data(), &[3.0, 6.0, 5.0]);
    }

    #[test]
    fn conv1d_acoustic_shape() {
        let input = Tensor::zeros(&[2, 7, 240]);
        let kernel = Tensor::zeros(&[5, 240, 256]);
        let bias = Tensor::zeros(&[256]);
        let out = conv1d(&input, &kernel, &bias).unwrap();
        assert_eq!(out.shape(), &[2, 7, 256]);
    }

    #[test]
    fn conv1d_rejects_even_kernel() {
        let input = Tensor::zeros(&[1, 4, 2]);
        let kernel = Tensor::zeros(&[4, 2, 2]);
        let bias = Tensor::zeros(&[2]);
        assert!(conv1d(&input, &kernel, &bias).is_err());
    }

    #[test]
    fn conv1d_rejects_channel_mismatch() {
        let input = Tensor::zeros(&[1, 4, 3]);
        let kernel = Tensor::zeros(&[3, 2, 2]);
        let bias = Tensor::zeros(&[2]);
        let err = conv1d(&input, &kernel, &bias).unwrap_err();
        assert!(err.to_string().contains("channel"));
    }

    #[test]
    fn conv3d_valid_arithmetic() {
        let input = Tensor::zeros(&[1, 4, 5, 5, 3]);
        let kernel = Tensor::zeros(&[3, 3, 3, 3, 64]);
        let bias = Tensor::zeros(&[64]);
        let out = conv3d(&input, &kernel, &bias, 1).unwrap();
        assert_eq!(out.shape(), &[1, 4, 3, 3, 64]);
    }

    #[test]
    fn conv3d_stride2_spatial() {
        let input = Tensor::zeros(&[1, 1, 128, 128, 1]);
        let kernel = Tensor::zeros(&[3, 3, 3, 1, 1]);
        let bias = Tensor::zeros(&[1]);
        let out = conv3d(&input, &kernel, &bias, 2).unwrap();
        assert_eq!(out.shape(), &[1, 1, 63, 63, 1]);
    }

    #[test]
    fn conv3d_zero_kernel_zero_output() {
        let input = Tensor::filled(&[1, 2, 4, 4, 2], 1.5);
        let kernel = Tensor::zeros(&[3, 3, 3, 2, 3]);
        let bias = Tensor::zeros(&[3]);
        let out = conv3d(&input, &kernel, &bias, 1).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2, 2, 3]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv3d_rejects_small_spatial() {
        let input = Tensor::zeros(&[1, 1, 2, 4, 1]);
        let kernel = Tensor::zeros(&[3, 3, 3, 1, 1]);
        let bias = Tensor::zeros(&[1]);
        assert!(conv3d(&input, &kernel, &bias, 1).is_err());
    }

    #[test]
    fn maxpool_constant_and_window() {
        let c = Tensor::filled(&[1, 1, 4, 4, 1], 2.5);
        let out = maxpool_spatial(&c).unwrap();
        assert!(out.data().iter().all(|&v| v == 2.5));

        let w = Tensor::from_vec(&[1, 1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(maxpool_spatial(&w).unwrap().data(), &[4.0]);
    }

    #[test]
    fn maxpool_drops_odd_remainder() {
        let input = Tensor::zeros(&[1, 1, 63, 63, 1]);
        let out = maxpool_spatial(&input).unwrap();
        assert_eq!(out.shape(), &[1, 1, 31, 31, 1]);
    }
}
