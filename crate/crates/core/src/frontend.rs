//! Visual frontend: the VGG-style 3D ConvNet forward pass (frozen) and a
//! synthetic track generator for controlled selection experiments.
//!
//! The ConvNet path validates architecture arithmetic (shapes, time
//! preservation, receptive field); no pretrained weights exist at this scale,
//! so selection experiments run on synthetic features by default.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{conv3d, group_norm, maxpool_spatial, relu};
use crate::tensor::{SeededRng, Tensor};

pub const VISUAL_DIM: usize = 512;

/// Architecture of the 3D ConvNet stack.
///
/// `channels` lists input channels followed by each layer's output channels,
/// so `channels.len() - 1` layers. Layer numbering below is 1-based.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Vgg3dConfig {
    pub channels: Vec<usize>,
    /// Spatial stride of layer 1; all other layers use stride 1.
    pub layer1_stride: usize,
    /// 1-based layers followed by 2x2 spatial max pooling.
    pub pool_layers: BTreeSet<usize>,
    /// Group-norm group count; must divide every layer's output channels.
    pub groups: usize,
    /// Input spatial side length.
    pub input_size: usize,
}

impl Vgg3dConfig {
    /// The full-scale configuration: channels [3,64,128,256,512,512],
    /// stride 2 on layer 1, pooling after layers 1, 2, 3 and 5, 32 groups,
    /// 128x128 input. Spatial sizes run
    /// 128 -> 63 -> 31 -> 29 -> 14 -> 12 -> 6 -> 4 -> 2 -> 1.
    pub fn paper() -> Vgg3dConfig {
        Vgg3dConfig {
            channels: vec![3, 64, 128, 256, 512, 512],
            layer1_stride: 2,
            pool_layers: [1, 2, 3, 5].into_iter().collect(),
            groups: 32,
            input_size: 128,
        }
    }

    /// Small configuration that still terminates at 1x1: 32x32 input,
    /// stride 1, pooling after layers 2, 3 and 5, channel list ending at
    /// the full 512 feature width, 4 norm groups.
    pub fn desk() -> Vgg3dConfig {
        Vgg3dConfig {
            channels: vec![3, 8, 16, 32, 64, VISUAL_DIM],
            layer1_stride: 1,
            pool_layers: [2, 3, 5].into_iter().collect(),
            groups: 4,
            input_size: 32,
        }
    }

    pub fn layers(&self) -> usize {
        self.channels.len() - 1
    }

    pub fn feature_dim(&self) -> usize {
        *self.channels.last().unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.len() < 2 {
            return Err(Error::InvalidArgument(
                "vgg3d config needs at least one layer".into(),
            ));
        }
        for (i, &c) in self.channels[1..].iter().enumerate() {
            if c % self.groups != 0 {
                return Err(Error::InvalidArgument(format!(
                    "layer {} output channels {} not divisible by {} norm groups",
                    i + 1,
                    c,
                    self.groups
                )));
            }
        }
        if self.layer1_stride != 1 && self.layer1_stride != 2 {
            return Err(Error::InvalidArgument(format!(
                "layer 1 stride must be 1 or 2, got {}",
                self.layer1_stride
            )));
        }
        Ok(())
    }
}

/// Per-layer spatial side lengths, starting from the input size: after each
/// convolution `(X - 3) / s + 1` and, on pooling layers, `X / 2`.
///
/// Rejects any configuration where an intermediate size drops below the 3x3
/// kernel extent before a convolution.
pub fn spatial_plan(config: &Vgg3dConfig) -> Result<Vec<usize>> {
    config.validate()?;
    let mut sizes = vec![config.input_size];
    let mut x = config.input_size;
    for layer in 1..=config.layers() {
        if x < 3 {
            return Err(Error::InvalidArgument(format!(
                "spatial size {x} before layer {layer} is smaller than the kernel"
            )));
        }
        let s = if layer == 1 { config.layer1_stride } else { 1 };
        x = (x - 3) / s + 1;
        sizes.push(x);
        if config.pool_layers.contains(&layer) {
            if x < 2 {
                return Err(Error::InvalidArgument(format!(
                    "spatial size {x} after layer {layer} is too small to pool"
                )));
            }
            x /= 2;
            sizes.push(x);
        }
    }
    Ok(sizes)
}

/// Frozen weights of the 3D ConvNet: per layer a kernel, bias and group-norm
/// affine. Plain tensors; nothing here ever receives gradients.
#[derive(Debug, Clone)]
pub struct Vgg3dWeights {
    pub kernels: Vec<Tensor>,
    pub biases: Vec<Tensor>,
    pub gn_scales: Vec<Tensor>,
    pub gn_shifts: Vec<Tensor>,
}

impl Vgg3dWeights {
    /// He-style random initialization: kernel entries drawn from
    /// `N(0, sqrt(2 / fan_in))` with `fan_in = 27 * Cin`, biases zero,
    /// norm scales one, shifts zero.
    pub fn init(config: &Vgg3dConfig, rng: &mut SeededRng) -> Result<Vgg3dWeights> {
        config.validate()?;
        let mut w = Vgg3dWeights {
            kernels: Vec::new(),
            biases: Vec::new(),
            gn_scales: Vec::new(),
            gn_shifts: Vec::new(),
        };
        for layer in 0..config.layers() {
            let ci = config.channels[layer];
            let co = config.channels[layer + 1];
            let sigma = (2.0 / (27 * ci) as f64).sqrt();
            w.kernels.push(Tensor::randn(&[3, 3, 3, ci, co], sigma, rng));
            w.biases.push(Tensor::zeros(&[co]));
            w.gn_scales.push(Tensor::filled(&[co], 1.0));
            w.gn_shifts.push(Tensor::zeros(&[co]));
        }
        Ok(w)
    }

    /// Checksum over every weight tensor, for frozen-weight assertions.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for group in [&self.kernels, &self.biases, &self.gn_scales, &self.gn_shifts] {
            for t in group {
                hasher.update(crate::tensorio::tensor_checksum(t).as_bytes());
            }
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Forward pass of the 3D ConvNet over `[B, T, H, W, 3]` video, producing
/// per-step features `[B, T, D]`.
///
/// Per layer: 3D convolution, ReLU (skipped on the last layer), group
/// normalization, then spatial max pooling on configured layers. Time is
/// SAME-padded throughout, so the output keeps the input's step count.
pub fn vgg3d_forward(
    video: &Tensor,
    weights: &Vgg3dWeights,
    config: &Vgg3dConfig,
) -> Result<Tensor> {
    let plan = spatial_plan(config)?;
    let final_size = *plan.last().unwrap();
    if final_size != 1 {
        return Err(Error::InvalidArgument(format!(
            "spatial plan terminates at {final_size}, not 1; config cannot produce flat features"
        )));
    }
    if video.rank() != 5 {
        return Err(Error::shape(
            "vgg3d_forward",
            format!("video rank {}, expected [B,T,H,W,3]", video.rank()),
        ));
    }
    if video.dim(2) != config.input_size || video.dim(3) != config.input_size {
        return Err(Error::shape(
            "vgg3d_forward",
            format!(
                "video spatial {}x{} does not match configured input size {}",
                video.dim(2),
                video.dim(3),
                config.input_size
            ),
        ));
    }
    let layers = config.layers();
    let mut x = video.clone();
    for layer in 1..=layers {
        let stride = if layer == 1 { config.layer1_stride } else { 1 };
        x = conv3d(&x, &weights.kernels[layer - 1], &weights.biases[layer - 1], stride)?;
        if layer != layers {
            x = relu(&x);
        }
        x = group_norm(
            &x,
            config.groups,
            &weights.gn_scales[layer - 1],
            &weights.gn_shifts[layer - 1],
        )?;
        if config.pool_layers.contains(&layer) {
            x = maxpool_spatial(&x)?;
        }
    }
    let (b, t, d) = (x.dim(0), x.dim(1), x.dim(4));
    x.reshape(&[b, t, d])
}

/// How to fabricate competing feature tracks from a shared latent stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistractorMode {
    /// Distractors come from independently drawn latents.
    Independent,
    /// Distractors are the true latent circularly shifted in time by at
    /// least one second (34 steps at the 100/3 Hz feature rate, or half the
    /// sequence when it is shorter). Harder: every track is "speaking".
    TimeShifted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticTrackSpec {
    pub latent_dim: usize,
    pub noise_sigma: f64,
    pub distractor_mode: DistractorMode,
    pub seed: u64,
}

impl SyntheticTrackSpec {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::InvalidArgument("latent_dim must be positive".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "noise_sigma must be nonnegative, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// One second at the 100/3 Hz acoustic step rate, rounded up.
pub const SHIFT_STEPS: usize = 34;

/// Synthetic visual features: the matching track is a fixed random linear
/// map of the acoustic latent plus Gaussian noise; distractors apply the same
/// map to independent (or time-shifted) latents.
#[derive(Debug, Clone)]
pub struct SynthTracks {
    pub matching: Tensor,
    pub distractors: Vec<Tensor>,
}

pub fn synth_tracks(
    spec: &SyntheticTrackSpec,
    acoustic_latent: &Tensor,
    n_distractors: usize,
) -> Result<SynthTracks> {
    spec.validate()?;
    if acoustic_latent.rank() != 3 || acoustic_latent.dim(2) != spec.latent_dim {
        return Err(Error::shape(
            "synth_tracks",
            format!(
                "latent shape {:?}, expected [B,T,{}]",
                acoustic_latent.shape(),
                spec.latent_dim
            ),
        ));
    }
    let root = SeededRng::new(spec.seed);
    let map = latent_map(spec.latent_dim, spec.seed);
    let mut noise_rng = root.derive("track-noise");
    let matching = apply_map_noisy(acoustic_latent, &map, spec.noise_sigma, &mut noise_rng);

    let (b, t, l) = (
        acoustic_latent.dim(0),
        acoustic_latent.dim(1),
        acoustic_latent.dim(2),
    );
    let mut distractors = Vec::with_capacity(n_distractors);
    for d in 0..n_distractors {
        let latent = match spec.distractor_mode {
            DistractorMode::Independent => {
                let mut rng = root.derive(&format!("distractor-latent-{d}"));
                Tensor::randn(&[b, t, l], 1.0, &mut rng)
            }
            DistractorMode::TimeShifted => {
                let shift = if t > SHIFT_STEPS { SHIFT_STEPS } else { (t / 2).max(1) };
                let rotate_by = (shift * (d + 1)) % t.max(1);
                circular_shift_time(acoustic_latent, rotate_by)
            }
        };
        distractors.push(apply_map_noisy(&latent, &map, spec.noise_sigma, &mut noise_rng));
    }
    Ok(SynthTracks {
        matching,
        distractors,
    })
}

/// The fixed random linear map `[latent_dim, VISUAL_DIM]` shared by every
/// track generated from the same seed.
pub fn latent_map(latent_dim: usize, seed: u64) -> Tensor {
    let mut rng = SeededRng::new(seed).derive("latent-map");
    Tensor::randn(&[latent_dim, VISUAL_DIM], (1.0 / latent_dim as f64).sqrt(), &mut rng)
}

fn apply_map_noisy(latent: &Tensor, map: &Tensor, sigma: f64, rng: &mut SeededRng) -> Tensor {
    let (b, t, l) = (latent.dim(0), latent.dim(1), latent.dim(2));
    let d = map.dim(1);
    let mut out = Tensor::zeros(&[b, t, d]);
    for bt in 0..b * t {
        for k in 0..d {
            let mut acc = 0.0;
            for i in 0..l {
                acc += latent.data()[bt * l + i] * map.data()[i * d + k];
            }
            if sigma > 0.0 {
                acc += sigma * rng.normal();
            }
            out.data_mut()[bt * d + k] = acc;
        }
    }
    out
}

fn circular_shift_time(x: &Tensor, shift: usize) -> Tensor {
    let (b, t, d) = (x.dim(0), x.dim(1), x.dim(2));
    let mut out = Tensor::zeros(x.shape());
    for ib in 0..b {
        for it in 0..t {
            let src = (it + shift) % t;
            for k in 0..d {
                out.data_mut()[(ib * t + it) * d + k] = x.data()[(ib * t + src) * d + k];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_plan_sequence() {
        let plan = spatial_plan(&Vgg3dConfig::paper()).unwrap();
        assert_eq!(plan, vec![128, 63, 31, 29, 14, 12, 6, 4, 2, 1]);
    }

    #[test]
    fn desk_plan_terminates_at_one() {
        let plan = spatial_plan(&Vgg3dConfig::desk()).unwrap();
        assert_eq!(plan, vec![32, 30, 28, 14, 12, 6, 4, 2, 1]);
    }

    #[test]
    fn paper_plan_input_64_is_rejected() {
        // 64 -> 31 -> 15 -> 13 -> 6 -> 4 -> 2 -> pool? conv on 2 fails.
        let mut cfg = Vgg3dConfig::paper();
        cfg.input_size = 64;
        assert!(spatial_plan(&cfg).is_err());
    }

    #[test]
    fn single_layer_input_3_plan() {
        let cfg = Vgg3dConfig {
            channels: vec![3, 4],
            layer1_stride: 1,
            pool_layers: BTreeSet::new(),
            groups: 1,
            input_size: 3,
        };
        assert_eq!(spatial_plan(&cfg).unwrap(), vec![3, 1]);
    }

    #[test]
    fn zero_weights_give_zero_features() {
        let cfg = Vgg3dConfig {
            channels: vec![3, 4],
            layer1_stride: 1,
            pool_layers: BTreeSet::new(),
            groups: 1,
            input_size: 3,
        };
        let mut rng = SeededRng::new(0);
        let mut w = Vgg3dWeights::init(&cfg, &mut rng).unwrap();
        for k in &mut w.kernels {
            *k = Tensor::zeros(k.shape());
        }
        let video = Tensor::filled(&[2, 3, 3, 3, 3], 0.5);
        let out = vgg3d_forward(&video, &w, &cfg).unwrap();
        assert_eq!(out.shape(), &[2, 3, 4]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn time_steps_preserved_on_tiny_config() {
        let cfg = Vgg3dConfig {
            channels: vec![3, 4, 4, 4, 8],
            layer1_stride: 1,
            pool_layers: [1].into_iter().collect(),
            groups: 2,
            input_size: 16,
        };
        // 16 -> 14 -> 7 -> 5 -> 3 -> 1
        assert_eq!(spatial_plan(&cfg).unwrap(), vec![16, 14, 7, 5, 3, 1]);
        let mut rng = SeededRng::new(9);
        let w = Vgg3dWeights::init(&cfg, &mut rng).unwrap();
        for t in [1usize, 3, 7] {
            let video = Tensor::randn(&[1, t, 16, 16, 3], 0.3, &mut rng).map(|v| v.clamp(-1.0, 1.0));
            let out = vgg3d_forward(&video, &w, &cfg).unwrap();
            assert_eq!(out.shape(), &[1, t, 8]);
        }
    }

    #[test]
    fn synth_same_seed_identical() {
        let spec = SyntheticTrackSpec {
            latent_dim: 4,
            noise_sigma: 0.1,
            distractor_mode: DistractorMode::Independent,
            seed: 5,
        };
        let mut rng = SeededRng::new(77);
        let latent = Tensor::randn(&[2, 6, 4], 1.0, &mut rng);
        let a = synth_tracks(&spec, &latent, 2).unwrap();
        let b = synth_tracks(&spec, &latent, 2).unwrap();
        assert_eq!(a.matching, b.matching);
        assert_eq!(a.distractors, b.distractors);
    }

    #[test]
    fn noiseless_matching_is_deterministic_in_latent() {
        let spec = SyntheticTrackSpec {
            latent_dim: 4,
            noise_sigma: 0.0,
            distractor_mode: DistractorMode::Independent,
            seed: 5,
        };
        let mut rng = SeededRng::new(78);
        let latent = Tensor::randn(&[1, 3, 4], 1.0, &mut rng);
        let out = synth_tracks(&spec, &latent, 1).unwrap();
        // Recompute by hand from the fixed map.
        let map = latent_map(4, 5);
        for t in 0..3 {
            for k in 0..VISUAL_DIM {
                let mut acc = 0.0;
                for i in 0..4 {
                    acc += latent.at3(0, t, i) * map.at2(i, k);
                }
                assert_eq!(acc, out.matching.at3(0, t, k));
            }
        }
    }

    #[test]
    fn matching_track_correlates_with_latent_more_than_distractors() {
        let spec = SyntheticTrackSpec {
            latent_dim: 8,
            noise_sigma: 0.3,
            distractor_mode: DistractorMode::Independent,
            seed: 13,
        };
        let mut rng = SeededRng::new(99);
        let mut match_corr = 0.0;
        let mut dist_corr = 0.0;
        for _ in 0..100 {
            let latent = Tensor::randn(&[1, 4, 8], 1.0, &mut rng);
            let out = synth_tracks(&spec, &latent, 1).unwrap();
            let proj = |track: &Tensor| {
                // Correlation proxy: dot of the track with the noiseless image
                // of the latent.
                let clean = synth_tracks(
                    &SyntheticTrackSpec {
                        noise_sigma: 0.0,
                        ..spec.clone()
                    },
                    &latent,
                    0,
                )
                .unwrap()
                .matching;
                track
                    .data()
                    .iter()
                    .zip(clean.data())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            };
            match_corr += proj(&out.matching);
            dist_corr += proj(&out.distractors[0]);
        }
        assert!(match_corr / 100.0 > dist_corr / 100.0);
    }
}
