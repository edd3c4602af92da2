//! Adam optimizer and the three-stage learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Parameter, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.98;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment estimates for one parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamSlot {
    pub m: Tensor,
    pub v: Tensor,
}

/// Optimizer state: one slot per parameter, in registration order, plus the
/// shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub slots: Vec<AdamSlot>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &[&Parameter]) -> AdamState {
        let slots = params
            .iter()
            .map(|p| AdamSlot {
                m: Tensor::zeros(p.value.shape()),
                v: Tensor::zeros(p.value.shape()),
            })
            .collect();
        AdamState {
            slots,
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }

    /// One Adam update with bias correction over all registered parameters.
    /// Gradients must be populated; a NaN gradient aborts the run.
    pub fn step(&mut self, params: &mut [&mut Parameter], lr: f64) -> Result<()> {
        if params.len() != self.slots.len() {
            return Err(Error::InvalidArgument(format!(
                "adam_step: {} parameters but {} state slots",
                params.len(),
                self.slots.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (p, slot) in params.iter_mut().zip(self.slots.iter_mut()) {
            for g in p.grad.data() {
                if g.is_nan() {
                    return Err(Error::Numerical(format!(
                        "NaN gradient for parameter '{}' at step {}",
                        p.name, self.step
                    )));
                }
            }
            let m = slot.m.data_mut();
            let v = slot.v.data_mut();
            let g = p.grad.data();
            let x = p.value.data_mut();
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                x[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Three-stage schedule: linear warmup to `peak`, constant hold, then
/// exponential decay reaching `peak / 100` at `end_step`.
///
/// The paper-scale step counts (32k / 60k / 200k) are divided by `scale` for
/// desk-scale runs; the default `scale = 100` gives 320 / 600 / 2000.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: u64,
    pub hold_until: u64,
    pub end_step: u64,
}

impl LrSchedule {
    pub const PAPER_WARMUP: u64 = 32_000;
    pub const PAPER_HOLD: u64 = 60_000;
    pub const PAPER_END: u64 = 200_000;
    /// Decay endpoint as a fraction of the peak rate.
    pub const END_FRACTION: f64 = 0.01;

    pub fn scaled(scale: u64) -> Result<LrSchedule> {
        if scale == 0 {
            return Err(Error::InvalidArgument("schedule scale must be positive".into()));
        }
        let s = LrSchedule {
            peak: 0.001,
            warmup_steps: Self::PAPER_WARMUP / scale,
            hold_until: Self::PAPER_HOLD / scale,
            end_step: Self::PAPER_END / scale,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.warmup_steps < self.hold_until && self.hold_until < self.end_step) {
            return Err(Error::InvalidArgument(format!(
                "schedule stages must satisfy warmup < hold < end, got {}/{}/{}",
                self.warmup_steps, self.hold_until, self.end_step
            )));
        }
        Ok(())
    }

    /// Learning rate at `step` (0-based).
    pub fn lr_at(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            self.peak * step as f64 / self.warmup_steps as f64
        } else if step <= self.hold_until {
            self.peak
        } else {
            // Continuous at both junctions; reaches peak * END_FRACTION at
            // end_step and stays there.
            let span = (self.end_step - self.hold_until) as f64;
            let progress = ((step - self.hold_until) as f64 / span).min(1.0);
            self.peak * Self::END_FRACTION.powf(progress)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Parameter;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = Parameter::new("w", Tensor::filled(&[3], 1.5));
        let mut state = AdamState::new(&[&p]);
        state.step(&mut [&mut p], 0.01).unwrap();
        assert!(p.value.data().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn unit_gradient_first_step_magnitude() {
        // With g = 1 at step 1, bias-corrected mhat/sqrt(vhat) = 1 so the
        // update is ~lr (up to eps).
        let mut p = Parameter::new("w", Tensor::filled(&[1], 0.0));
        p.grad = Tensor::filled(&[1], 1.0);
        let mut state = AdamState::new(&[&p]);
        state.step(&mut [&mut p], 0.01).unwrap();
        assert!((p.value.data()[0] + 0.01).abs() < 1e-6);
    }

    #[test]
    fn nan_gradient_aborts() {
        let mut p = Parameter::new("w", Tensor::filled(&[1], 0.0));
        p.grad = Tensor::filled(&[1], f64::NAN);
        let mut state = AdamState::new(&[&p]);
        let err = state.step(&mut [&mut p], 0.01).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut p = Parameter::new("w", Tensor::filled(&[4], 0.3));
            let mut state = AdamState::new(&[&p]);
            for i in 0..50 {
                for (j, g) in p.grad.data_mut().iter_mut().enumerate() {
                    *g = ((i * 7 + j) % 5) as f64 - 2.0;
                }
                state.step(&mut [&mut p], 0.003).unwrap();
            }
            p.value.data().to_vec()
        };
        let a = run();
        let b = run();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn schedule_shape() {
        let s = LrSchedule {
            peak: 0.001,
            warmup_steps: 32_000,
            hold_until: 60_000,
            end_step: 200_000,
        };
        assert_eq!(s.lr_at(0), 0.0);
        assert_eq!(s.lr_at(32_000), 0.001);
        assert_eq!(s.lr_at(46_000), 0.001);
        // Continuity at the decay junction.
        assert!((s.lr_at(60_000) - 0.001).abs() < 1e-15);
        // Endpoint at peak / 100.
        assert!((s.lr_at(200_000) - 1e-5).abs() < 1e-12);
        assert!((s.lr_at(300_000) - 1e-5).abs() < 1e-12);
        // Monotone decay in between.
        assert!(s.lr_at(100_000) < 0.001);
        assert!(s.lr_at(150_000) < s.lr_at(100_000));
    }

    #[test]
    fn scaled_schedule() {
        let s = LrSchedule::scaled(100).unwrap();
        assert_eq!(
            (s.warmup_steps, s.hold_until, s.end_step),
            (320, 600, 2000)
        );
        assert!(LrSchedule::scaled(0).is_err());
    }
}
