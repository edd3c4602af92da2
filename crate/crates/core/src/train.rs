//! Cross-entropy training of the attention stack: minibatch elements act as
//! mutually competing tracks and the softmax diagonal is the ground truth.

use serde::{Deserialize, Serialize};

use crate::attention::{attention_weights, AttentionModel, AttentionWeights, Mode};
use crate::error::{Error, Result};
use crate::frontend::latent_map;
use crate::optim::{AdamState, LrSchedule};
use crate::tensor::{SeededRng, Tensor};

/// Floor applied inside the log of the loss.
pub const CE_LOG_FLOOR: f64 = 1e-30;

/// Maximum source sequence length honored as a cap on T.
pub const MAX_SOURCE_LEN: usize = 360;

/// Cross-entropy over the diagonal of `[B, T, B]` attention weights:
/// `L = (1/BT) sum_b sum_t -log alpha[b,t,b]`.
pub fn ce_loss(alpha: &AttentionWeights) -> Result<f64> {
    let a = &alpha.data;
    if a.rank() != 3 || a.dim(0) != a.dim(2) {
        return Err(Error::shape(
            "ce_loss",
            format!("alpha shape {:?}, expected square track axis [B,T,B]", a.shape()),
        ));
    }
    let (b, t) = (a.dim(0), a.dim(1));
    if b < 2 {
        return Err(Error::InvalidArgument(
            "cross entropy over competing tracks needs B >= 2".into(),
        ));
    }
    a.ensure_finite("ce_loss alpha")?;
    let mut sum = 0.0;
    for ib in 0..b {
        for it in 0..t {
            sum -= a.at3(ib, it, ib).max(CE_LOG_FLOOR).ln();
        }
    }
    Ok(sum / (b * t) as f64)
}

/// Gradient of [`ce_loss`] w.r.t. the scores (softmax and loss combined):
/// `(alpha[b,t,k] - [k == b]) / (B T)`.
pub fn ce_score_grad(alpha: &AttentionWeights) -> Result<Tensor> {
    let a = &alpha.data;
    if a.rank() != 3 || a.dim(0) != a.dim(2) {
        return Err(Error::shape(
            "ce_score_grad",
            format!("alpha shape {:?}", a.shape()),
        ));
    }
    let (b, t) = (a.dim(0), a.dim(1));
    let scale = 1.0 / (b * t) as f64;
    let mut out = a.scale(scale);
    for ib in 0..b {
        for it in 0..t {
            *out.at3_mut(ib, it, ib) -= scale;
        }
    }
    Ok(out)
}

/// Yields matched (acoustic, visual) feature minibatches.
pub trait PairSource {
    fn acoustic_dim(&self) -> usize;
    fn visual_dim(&self) -> usize;
    /// Minibatch for a training step: acoustic `[B, T, Da]` and the matched
    /// visual features `[B, T, Dv]`. Must be deterministic in
    /// `(step, batch, time_steps)`.
    fn minibatch(&self, step: u64, batch: usize, time_steps: usize) -> Result<(Tensor, Tensor)>;
}

/// Separable synthetic pairs: a shared latent stream mapped into both
/// modalities by fixed random linear maps, with optional Gaussian noise on
/// the visual side. With zero noise, the latent (and hence the matching
/// track) is exactly recoverable from the acoustic features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticPairConfig {
    pub latent_dim: usize,
    pub noise_sigma: f64,
    pub acoustic_dim: usize,
    pub visual_dim: usize,
    pub seed: u64,
}

impl Default for SyntheticPairConfig {
    fn default() -> SyntheticPairConfig {
        SyntheticPairConfig {
            latent_dim: 16,
            noise_sigma: 0.0,
            acoustic_dim: crate::attention::ACOUSTIC_DIM,
            visual_dim: crate::frontend::VISUAL_DIM,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticPairSource {
    pub config: SyntheticPairConfig,
    map_acoustic: Tensor,
    map_visual: Tensor,
}

impl SyntheticPairSource {
    pub fn new(config: SyntheticPairConfig) -> Result<SyntheticPairSource> {
        if config.latent_dim == 0 {
            return Err(Error::InvalidArgument("latent_dim must be positive".into()));
        }
        if config.noise_sigma < 0.0 {
            return Err(Error::InvalidArgument("noise_sigma must be nonnegative".into()));
        }
        let root = SeededRng::new(config.seed);
        let mut arng = root.derive("acoustic-map");
        let map_acoustic = Tensor::randn(
            &[config.latent_dim, config.acoustic_dim],
            (1.0 / config.latent_dim as f64).sqrt(),
            &mut arng,
        );
        // Same construction as the synthetic track generator so datasets and
        // training batches share the latent-to-visual map for a given seed.
        let map_visual = if config.visual_dim == crate::frontend::VISUAL_DIM {
            latent_map(config.latent_dim, config.seed)
        } else {
            let mut vrng = root.derive("latent-map");
            Tensor::randn(
                &[config.latent_dim, config.visual_dim],
                (1.0 / config.latent_dim as f64).sqrt(),
                &mut vrng,
            )
        };
        Ok(SyntheticPairSource {
            config,
            map_acoustic,
            map_visual,
        })
    }

    /// One matched pair (`[T, Da]`, `[T, Dv]`) for a dataset sample index.
    pub fn sample(&self, index: u64, time_steps: usize) -> Result<(Tensor, Tensor)> {
        let (_, a, v) = self.sample_with_latent(index, time_steps)?;
        Ok((a, v))
    }

    /// Like [`SyntheticPairSource::sample`] but also exposes the underlying
    /// latent `[1, T, L]`, for generating distractor tracks tied to it.
    pub fn sample_with_latent(
        &self,
        index: u64,
        time_steps: usize,
    ) -> Result<(Tensor, Tensor, Tensor)> {
        let (latent, a, v) = self.latent_pair_batch(&format!("sample-{index}"), 1, time_steps)?;
        let da = self.config.acoustic_dim;
        let dv = self.config.visual_dim;
        Ok((
            latent,
            a.reshape(&[time_steps, da])?,
            v.reshape(&[time_steps, dv])?,
        ))
    }

    fn pair_batch(&self, purpose: &str, batch: usize, time_steps: usize) -> Result<(Tensor, Tensor)> {
        let (_, a, v) = self.latent_pair_batch(purpose, batch, time_steps)?;
        Ok((a, v))
    }

    fn latent_pair_batch(
        &self,
        purpose: &str,
        batch: usize,
        time_steps: usize,
    ) -> Result<(Tensor, Tensor, Tensor)> {
        let root = SeededRng::new(self.config.seed);
        let mut lrng = root.derive(&format!("latent-{purpose}"));
        let latent = Tensor::randn(&[batch, time_steps, self.config.latent_dim], 1.0, &mut lrng);
        let acoustic = matmul_last(&latent, &self.map_acoustic);
        let mut visual = matmul_last(&latent, &self.map_visual);
        if self.config.noise_sigma > 0.0 {
            let mut nrng = root.derive(&format!("noise-{purpose}"));
            for v in visual.data_mut() {
                *v += self.config.noise_sigma * nrng.normal();
            }
        }
        Ok((latent, acoustic, visual))
    }
}

impl PairSource for SyntheticPairSource {
    fn acoustic_dim(&self) -> usize {
        self.config.acoustic_dim
    }

    fn visual_dim(&self) -> usize {
        self.config.visual_dim
    }

    fn minibatch(&self, step: u64, batch: usize, time_steps: usize) -> Result<(Tensor, Tensor)> {
        self.pair_batch(&format!("step-{step}"), batch, time_steps)
    }
}

/// `[B, T, L] x [L, D] -> [B, T, D]`.
fn matmul_last(x: &Tensor, m: &Tensor) -> Tensor {
    let (b, t, l) = (x.dim(0), x.dim(1), x.dim(2));
    let d = m.dim(1);
    let mut out = Tensor::zeros(&[b, t, d]);
    for bt in 0..b * t {
        for k in 0..d {
            let mut acc = 0.0;
            for i in 0..l {
                acc += x.data()[bt * l + i] * m.data()[i * d + k];
            }
            out.data_mut()[bt * d + k] = acc;
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch: usize,
    pub steps: u64,
    pub time_steps: usize,
    pub seed: u64,
    pub schedule_scale: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            batch: 8,
            steps: 2000,
            time_steps: 16,
            seed: 0,
            schedule_scale: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch < 2 {
            return Err(Error::InvalidArgument(format!(
                "batch must be at least 2 (competing tracks), got {}",
                self.batch
            )));
        }
        if self.time_steps == 0 || self.time_steps > MAX_SOURCE_LEN {
            return Err(Error::InvalidArgument(format!(
                "time_steps must be in 1..={MAX_SOURCE_LEN}, got {}",
                self.time_steps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StepRow {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub diag_accuracy: f64,
    pub mean_entropy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub rows: Vec<StepRow>,
    pub final_accuracy: f64,
    pub final_loss: f64,
    pub param_checksum: String,
}

/// Fraction of `(b, t)` positions whose best-scoring track is the matched
/// one (ties toward the lowest index).
pub fn diag_accuracy(scores: &Tensor) -> f64 {
    let (b, t, n) = (scores.dim(0), scores.dim(1), scores.dim(2));
    let mut hits = 0usize;
    for ib in 0..b {
        for it in 0..t {
            let mut arg = 0;
            for k in 1..n {
                if scores.at3(ib, it, k) > scores.at3(ib, it, arg) {
                    arg = k;
                }
            }
            if arg == ib {
                hits += 1;
            }
        }
    }
    hits as f64 / (b * t) as f64
}

/// Runs CE training of the attention stack, starting at `start_step`
/// (nonzero when resuming). Per-step minibatches come from per-step derived
/// seeds, so a resumed run reproduces the uninterrupted trace.
pub fn train_attention(
    config: &TrainConfig,
    source: &dyn PairSource,
    model: &mut AttentionModel,
    adam: &mut AdamState,
    start_step: u64,
) -> Result<TrainReport> {
    config.validate()?;
    let sched = LrSchedule::scaled(config.schedule_scale)?;
    let mut rows = Vec::new();
    let mut final_accuracy = 0.0;
    let mut final_loss = f64::NAN;
    for step in start_step..config.steps {
        let (acoustic, visual) = source.minibatch(step, config.batch, config.time_steps)?;
        model.zero_grads();
        let (scores, cache) = model.forward_scores(&acoustic, &visual, Mode::Train)?;
        let alpha = attention_weights(&scores, 1.0)?;
        let loss = ce_loss(&alpha)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "loss became non-finite at step {step}"
            )));
        }
        let acc = diag_accuracy(&scores);
        let entropy = crate::attention::attention_entropy(&alpha);
        let mean_entropy = entropy.data().iter().sum::<f64>() / entropy.len() as f64;
        let grad_scores = ce_score_grad(&alpha)?;
        model.backward(&cache, &visual, &grad_scores)?;
        let lr = sched.lr_at(step);
        {
            let mut params = model.params_mut();
            adam.step(&mut params, lr)?;
        }
        rows.push(StepRow {
            step,
            lr,
            loss,
            diag_accuracy: acc,
            mean_entropy,
        });
        final_accuracy = acc;
        final_loss = loss;
    }
    let param_checksum = model_checksum(model);
    Ok(TrainReport {
        rows,
        final_accuracy,
        final_loss,
        param_checksum,
    })
}

/// Checksum over every trainable parameter value, in parameter order.
pub fn model_checksum(model: &AttentionModel) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for p in model.params() {
        hasher.update(crate::tensorio::tensor_checksum(&p.value).as_bytes());
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
