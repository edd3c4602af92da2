//! Central finite-difference gradient oracle.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Central difference gradient of the scalar function `f` at `x`:
/// `(f(x + h e_i) - f(x - h e_i)) / 2h` per coordinate.
///
/// `f` must be deterministic and finite in the neighborhood of `x`.
pub fn finite_diff_grad(
    f: &mut dyn FnMut(&Tensor) -> Result<f64>,
    x: &Tensor,
    h: f64,
) -> Result<Tensor> {
    if h <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "finite_diff_grad step must be positive, got {h}"
        )));
    }
    let mut grad = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let fm = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite("finite_diff_grad evaluation".into()));
        }
        grad.data_mut()[i] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

/// Maximum relative error between an analytic gradient and its
/// finite-difference counterpart, with a unit floor on the denominator scale:
/// `|a - b| / max(1, |a|, |b|)` per coordinate.
pub fn max_rel_error(analytic: &Tensor, numeric: &Tensor) -> Result<f64> {
    if analytic.shape() != numeric.shape() {
        return Err(Error::shape(
            "max_rel_error",
            format!("{:?} vs {:?}", analytic.shape(), numeric.shape()),
        ));
    }
    let mut worst: f64 = 0.0;
    for (&a, &b) in analytic.data().iter().zip(numeric.data()) {
        let scale = a.abs().max(b.abs()).max(1.0);
        worst = worst.max((a - b).abs() / scale);
    }
    Ok(worst)
}

/// Result of an end-to-end gradient check over the attention stack.
#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub coordinates: usize,
}

/// Checks every trainable parameter of a small attention model against
/// central finite differences (`h = 1e-5`) on a composite scalar loss that
/// exercises both heads of the stack: the diagonal cross entropy and a fixed
/// random linear readout of the gated features.
pub fn attention_gradcheck(seed: u64, batch: usize, time_steps: usize) -> Result<GradcheckReport> {
    use crate::attention::{
        attention_weights, gate, gate_backward_alpha, AttentionModel, Mode,
        QueryNetConfig,
    };
    use crate::ops::softmax_last_axis_backward;
    use crate::tensor::SeededRng;
    use crate::train::{ce_loss, ce_score_grad};

    if batch < 2 || time_steps == 0 {
        return Err(Error::InvalidArgument(
            "gradcheck needs batch >= 2 and time_steps >= 1".into(),
        ));
    }
    const H: f64 = 1e-5;
    let (din, dq, dv) = (6, 4, 5);
    let root = SeededRng::new(seed);
    let mut drng = root.derive("gradcheck-data");
    let acoustic = Tensor::randn(&[batch, time_steps, din], 1.0, &mut drng);
    let visual = Tensor::randn(&[batch, time_steps, dv], 1.0, &mut drng);
    let readout = Tensor::randn(&[batch, time_steps, dv], 1.0, &mut drng);
    let mut model = AttentionModel::init(QueryNetConfig::tiny(din, dq), dv, seed)?;

    let loss_of = |model: &mut AttentionModel| -> Result<f64> {
        let (scores, _) = model.forward_scores(&acoustic, &visual, Mode::Train)?;
        let alpha = attention_weights(&scores, 1.0)?;
        let gated = gate(&alpha, &visual)?;
        let mut dot = 0.0;
        for (g, r) in gated.data().iter().zip(readout.data()) {
            dot += g * r;
        }
        Ok(ce_loss(&alpha)? + dot / gated.len() as f64)
    };

    // Analytic gradients.
    model.zero_grads();
    let (scores, cache) = model.forward_scores(&acoustic, &visual, Mode::Train)?;
    let alpha = attention_weights(&scores, 1.0)?;
    let gated_len = (batch * time_steps * dv) as f64;
    let grad_gated = readout.scale(1.0 / gated_len);
    let grad_alpha = gate_backward_alpha(&visual, &grad_gated)?;
    let mut grad_scores = ce_score_grad(&alpha)?;
    grad_scores = grad_scores.add(&softmax_last_axis_backward(&alpha.data, &grad_alpha, 1.0)?)?;
    model.backward(&cache, &visual, &grad_scores)?;
    let analytic: Vec<Tensor> = model.params().iter().map(|p| p.grad.clone()).collect();

    // Finite differences, coordinate by coordinate.
    let mut worst: f64 = 0.0;
    let mut coordinates = 0;
    let n_params = analytic.len();
    for pi in 0..n_params {
        for i in 0..analytic[pi].len() {
            let orig = model.params()[pi].value.data()[i];
            model.params_mut()[pi].value.data_mut()[i] = orig + H;
            let fp = loss_of(&mut model)?;
            model.params_mut()[pi].value.data_mut()[i] = orig - H;
            let fm = loss_of(&mut model)?;
            model.params_mut()[pi].value.data_mut()[i] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::NonFinite("gradcheck loss evaluation".into()));
            }
            let numeric = (fp - fm) / (2.0 * H);
            let a = analytic[pi].data()[i];
            let scale = a.abs().max(numeric.abs()).max(1.0);
            worst = worst.max((a - numeric).abs() / scale);
            coordinates += 1;
        }
    }
    Ok(GradcheckReport {
        max_rel_err: worst,
        coordinates,
    })
}
