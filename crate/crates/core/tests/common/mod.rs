//! Independent loop oracles shared by the oracle and acceptance suites.
//! These deliberately re-derive each quantity element by element, following
//! only the documented summation order, so a match is evidence rather than
//! tautology.

use num::{BigInt, BigRational};
use trackgate::tensor::Tensor;

/// Per-element 1D convolution: SAME zero padding, accumulator starting at
/// the bias, kernel-position-major / input-channel-minor term order.
pub fn naive_conv1d(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Tensor {
    let (b, t, ci) = (input.dim(0), input.dim(1), input.dim(2));
    let (k, co) = (kernel.dim(0), kernel.dim(2));
    let pad = (k / 2) as isize;
    let mut out = Tensor::zeros(&[b, t, co]);
    for ib in 0..b {
        for it in 0..t {
            for oc in 0..co {
                let mut acc = bias.data()[oc];
                for ik in 0..k {
                    let xt = it as isize + ik as isize - pad;
                    if xt < 0 || xt >= t as isize {
                        continue;
                    }
                    for ic in 0..ci {
                        acc += input.at3(ib, xt as usize, ic) * kernel.at3(ik, ic, oc);
                    }
                }
                *out.at3_mut(ib, it, oc) = acc;
            }
        }
    }
    out
}

/// Per-element 3D convolution: SAME in time, VALID in space, spatial stride.
pub fn naive_conv3d(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize) -> Tensor {
    let (b, t, h, w, ci) = (
        input.dim(0),
        input.dim(1),
        input.dim(2),
        input.dim(3),
        input.dim(4),
    );
    let co = kernel.dim(4);
    let oh = (h - 3) / stride + 1;
    let ow = (w - 3) / stride + 1;
    let at5 = |x: &Tensor, a: usize, b_: usize, c: usize, d: usize, e: usize| {
        x.data()[((((a * x.dim(1) + b_) * x.dim(2) + c) * x.dim(3)) + d) * x.dim(4) + e]
    };
    let mut out = Tensor::zeros(&[b, t, oh, ow, co]);
    for ib in 0..b {
        for it in 0..t {
            for ioh in 0..oh {
                for iow in 0..ow {
                    for oc in 0..co {
                        let mut acc = bias.data()[oc];
                        for kt in 0..3usize {
                            let xt = it as isize + kt as isize - 1;
                            if xt < 0 || xt >= t as isize {
                                continue;
                            }
                            for kh in 0..3 {
                                for kw in 0..3 {
                                    for ic in 0..ci {
                                        acc += at5(
                                            input,
                                            ib,
                                            xt as usize,
                                            ioh * stride + kh,
                                            iow * stride + kw,
                                            ic,
                                        ) * at5(kernel, kt, kh, kw, ic, oc);
                                    }
                                }
                            }
                        }
                        out.data_mut()
                            [((((ib * t + it) * oh + ioh) * ow) + iow) * co + oc] = acc;
                    }
                }
            }
        }
    }
    out
}

/// Per-element bilinear score: the inner projection sums over the visual
/// channel first, then the outer product over the query channel.
pub fn naive_bilinear(queries: &Tensor, w: &Tensor, visual: &Tensor) -> Tensor {
    let (b, t, dq) = (queries.dim(0), queries.dim(1), queries.dim(2));
    let (n, dv) = (visual.dim(0), visual.dim(2));
    let mut out = Tensor::zeros(&[b, t, n]);
    for ib in 0..b {
        for it in 0..t {
            for ik in 0..n {
                let mut acc = 0.0;
                for l in 0..dq {
                    let mut proj = 0.0;
                    for m in 0..dv {
                        proj += w.at2(l, m) * visual.at3(ik, it, m);
                    }
                    acc += queries.at3(ib, it, l) * proj;
                }
                *out.at3_mut(ib, it, ik) = acc;
            }
        }
    }
    out
}

/// Exact rational A/V synchronization oracle: the acoustic step `i` at rate
/// `a = a_num/a_den` maps to video frame `round(i * v / a)` with halves
/// rounding up, floored at frame 1.
pub fn rational_sync_index(i: usize, v: (u64, u64), a: (u64, u64)) -> usize {
    let numer = BigInt::from(i) * BigInt::from(v.0) * BigInt::from(a.1);
    let denom = BigInt::from(v.1) * BigInt::from(a.0);
    let r = BigRational::new(numer, denom) + BigRational::new(BigInt::from(1), BigInt::from(2));
    let rounded = r.floor().to_integer();
    let rounded: usize = rounded.try_into().expect("index fits in usize");
    rounded.max(1)
}
