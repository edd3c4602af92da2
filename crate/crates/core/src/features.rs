//! Acoustic feature pipeline and audio/video time alignment.
//!
//! 16 kHz audio is framed with 25 ms Hann windows every 10 ms, turned into
//! 80 log-mel energies per frame, and every 3 consecutive frames are folded
//! into one 240-dim vector at one step per 30 ms. Video frames are aligned to
//! those steps by nearest-neighbor rounding of the rate ratio.
//!
//! The paper-silent constants live in [`MelConfig`]: mel band 125-7500 Hz,
//! 512-point DFT, log floor 1e-10.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SAMPLE_RATE: u32 = 16_000;
pub const WINDOW_SAMPLES: usize = 400; // 25 ms
pub const HOP_SAMPLES: usize = 160; // 10 ms
pub const MEL_CHANNELS: usize = 80;
pub const STACKED_DIM: usize = 3 * MEL_CHANNELS;

/// Mono waveform at 16 kHz with samples in [-1, 1].
#[derive(Debug, Clone)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Waveform> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::InvalidArgument(format!(
                "waveform sample rate must be {SAMPLE_RATE} Hz, got {sample_rate}"
            )));
        }
        if samples.iter().any(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(Error::InvalidArgument(
                "waveform samples must be finite and within [-1, 1]".into(),
            ));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Reads a mono 16-bit PCM WAV file at 16 kHz.
    pub fn read_wav(path: &std::path::Path) -> Result<Waveform> {
        let reader = hound::WavReader::open(path).map_err(|e| Error::Format {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        let spec = reader.spec();
        if spec.channels != 1
            || spec.bits_per_sample != 16
            || spec.sample_format != hound::SampleFormat::Int
        {
            return Err(Error::Format {
                path: path.display().to_string(),
                detail: format!(
                    "expected mono 16-bit PCM, got {} ch / {} bit",
                    spec.channels, spec.bits_per_sample
                ),
            });
        }
        let samples: Vec<f64> = reader
            .into_samples::<i16>()
            .map(|s| {
                s.map(|v| v as f64 / 32768.0).map_err(|e| Error::Format {
                    path: path.display().to_string(),
                    detail: e.to_string(),
                })
            })
            .collect::<Result<_>>()?;
        Waveform::new(samples, spec.sample_rate)
    }
}

/// Periodic Hann window of length `n`: `0.5 * (1 - cos(2 pi i / n))`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
        .collect()
}

/// Slices the waveform into Hann-windowed frames of 400 samples with a hop
/// of 160. Output is `[T', 400]` with `T' = 1 + (L - 400) / 160`.
pub fn frame_signal(wave: &Waveform) -> Result<Tensor> {
    let len = wave.samples().len();
    if len < WINDOW_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "waveform of {len} samples is shorter than one {WINDOW_SAMPLES}-sample window"
        )));
    }
    let frames = 1 + (len - WINDOW_SAMPLES) / HOP_SAMPLES;
    let window = hann_window(WINDOW_SAMPLES);
    let mut out = Tensor::zeros(&[frames, WINDOW_SAMPLES]);
    for f in 0..frames {
        let start = f * HOP_SAMPLES;
        for i in 0..WINDOW_SAMPLES {
            out.data_mut()[f * WINDOW_SAMPLES + i] = wave.samples()[start + i] * window[i];
        }
    }
    Ok(out)
}

/// Constants the paper leaves unstated; overridable via configuration.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
pub struct MelConfig {
    pub n_fft: usize,
    pub n_mels: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> MelConfig {
        MelConfig {
            n_fft: 512,
            n_mels: MEL_CHANNELS,
            fmin_hz: 125.0,
            fmax_hz: 7500.0,
            log_floor: 1e-10,
        }
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank over the one-sided power spectrum.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    pub config: MelConfig,
    /// `[n_mels, n_fft/2 + 1]` filter weights, nonnegative, each row a
    /// contiguous triangular band.
    pub weights: Tensor,
}

impl MelFilterbank {
    pub fn new(config: MelConfig) -> MelFilterbank {
        let bins = config.n_fft / 2 + 1;
        let lo = hz_to_mel(config.fmin_hz);
        let hi = hz_to_mel(config.fmax_hz);
        // n_mels + 2 band edges, equally spaced on the mel scale.
        let edges: Vec<f64> = (0..config.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (config.n_mels + 1) as f64))
            .collect();
        let mut weights = Tensor::zeros(&[config.n_mels, bins]);
        for m in 0..config.n_mels {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..bins {
                let f = k as f64 * SAMPLE_RATE as f64 / config.n_fft as f64;
                let w = if f >= left && f <= center {
                    (f - left) / (center - left)
                } else if f > center && f <= right {
                    (right - f) / (right - center)
                } else {
                    0.0
                };
                if w > 0.0 {
                    *weights.at2_mut(m, k) = w;
                }
            }
        }
        MelFilterbank { config, weights }
    }

    /// Center frequency of filter `m` in Hz.
    pub fn center_hz(&self, m: usize) -> f64 {
        let lo = hz_to_mel(self.config.fmin_hz);
        let hi = hz_to_mel(self.config.fmax_hz);
        mel_to_hz(lo + (hi - lo) * (m + 1) as f64 / (self.config.n_mels + 1) as f64)
    }

    /// Log mel energies for windowed frames `[T', 400]` -> `[T', n_mels]`.
    ///
    /// Each frame is zero-padded to `n_fft`, transformed, and the one-sided
    /// magnitude-squared spectrum is pushed through the filterbank; energies
    /// are floored before the log.
    pub fn log_mel(&self, frames: &Tensor) -> Result<Tensor> {
        if frames.rank() != 2 {
            return Err(Error::shape(
                "log_mel",
                format!("frames rank {}, expected [T',window]", frames.rank()),
            ));
        }
        frames.ensure_finite("log_mel input")?;
        let t = frames.dim(0);
        let w = frames.dim(1);
        let n_fft = self.config.n_fft;
        if w > n_fft {
            return Err(Error::shape(
                "log_mel",
                format!("window {w} longer than FFT size {n_fft}"),
            ));
        }
        let bins = n_fft / 2 + 1;
        let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
        let mut out = Tensor::zeros(&[t, self.config.n_mels]);
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        for ti in 0..t {
            for (i, c) in buf.iter_mut().enumerate() {
                *c = Complex::new(if i < w { frames.at2(ti, i) } else { 0.0 }, 0.0);
            }
            fft.process(&mut buf);
            for m in 0..self.config.n_mels {
                let mut e = 0.0;
                for k in 0..bins {
                    let wt = self.weights.at2(m, k);
                    if wt > 0.0 {
                        e += wt * buf[k].norm_sqr();
                    }
                }
                *out.at2_mut(ti, m) = e.max(self.config.log_floor).ln();
            }
        }
        Ok(out)
    }
}

/// Folds every 3 consecutive feature rows into one; a trailing remainder of
/// fewer than 3 rows is dropped. `[T', D] -> [T'/3, 3D]`.
pub fn stack3(feats: &Tensor) -> Result<Tensor> {
    if feats.rank() != 2 {
        return Err(Error::shape(
            "stack3",
            format!("input rank {}, expected [T',D]", feats.rank()),
        ));
    }
    let t = feats.dim(0);
    let d = feats.dim(1);
    if t < 3 {
        return Err(Error::InvalidArgument(format!(
            "stack3 needs at least 3 rows, got {t}"
        )));
    }
    let steps = t / 3;
    let mut out = Tensor::zeros(&[steps, 3 * d]);
    for s in 0..steps {
        for j in 0..3 {
            for k in 0..d {
                out.data_mut()[s * 3 * d + j * d + k] = feats.at2(3 * s + j, k);
            }
        }
    }
    Ok(out)
}

/// Full pipeline: waveform -> stacked 240-dim acoustic features `[T, 240]`.
pub fn acoustic_features(wave: &Waveform, bank: &MelFilterbank) -> Result<Tensor> {
    stack3(&bank.log_mel(&frame_signal(wave)?)?)
}

/// An exact frame rate as a ratio of integers.
///
/// Eq.-style index arithmetic is done in integer arithmetic so rounding is
/// well defined; `from_f64` interprets a float rate with millihertz
/// precision (e.g. 29.97 -> 29970/1000).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Fps {
    pub num: u64,
    pub den: u64,
}

/// The acoustic feature rate: one step per 30 ms, exactly 100/3 Hz.
pub const ACOUSTIC_FPS: Fps = Fps { num: 100, den: 3 };

impl Fps {
    pub fn new(num: u64, den: u64) -> Result<Fps> {
        if num == 0 || den == 0 {
            return Err(Error::InvalidArgument(format!(
                "frame rate must be positive, got {num}/{den}"
            )));
        }
        Ok(Fps { num, den })
    }

    pub fn from_f64(rate: f64) -> Result<Fps> {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "frame rate must be positive and finite, got {rate}"
            )));
        }
        Fps::new((rate * 1000.0).round() as u64, 1000)
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// Nearest video frame for acoustic step `i_a` (1-based):
/// `round(i_a * v_fps / a_fps)` with round-half-up, floored at 1.
///
/// The upper clamp to the track length happens where the length is known, in
/// [`resample_track`].
pub fn sync_index(i_a: usize, v_fps: Fps, a_fps: Fps) -> usize {
    // i_a * (v_num/v_den) / (a_num/a_den) = p / q in integers.
    let p = i_a as u128 * v_fps.num as u128 * a_fps.den as u128;
    let q = v_fps.den as u128 * a_fps.num as u128;
    // round-half-up(p/q) = floor((2p + q) / 2q)
    let rounded = (2 * p + q) / (2 * q);
    (rounded as usize).max(1)
}

/// A face track: frames `[F, H, W, 3]` with channels in [-1, 1], at `fps`.
#[derive(Debug, Clone)]
pub struct VideoTrack {
    pub frames: Tensor,
    pub fps: Fps,
}

impl VideoTrack {
    pub fn new(frames: Tensor, fps: Fps) -> Result<VideoTrack> {
        if frames.rank() != 4 || frames.dim(3) != 3 {
            return Err(Error::shape(
                "VideoTrack",
                format!("frames shape {:?}, expected [F,H,W,3]", frames.shape()),
            ));
        }
        if frames.data().iter().any(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(Error::InvalidArgument(
                "video channel values must be finite and within [-1, 1]".into(),
            ));
        }
        Ok(VideoTrack { frames, fps })
    }
}

/// Nearest-neighbor resampling of a track onto `t_steps` acoustic steps.
/// Output step `i` (1-based) is track frame `sync_index(i, fps, a_fps)`
/// clamped to `[1, F]`.
pub fn resample_track(track: &VideoTrack, t_steps: usize, a_fps: Fps) -> Result<Tensor> {
    let f = track.frames.dim(0);
    if f == 0 {
        return Err(Error::InvalidArgument("cannot resample an empty track".into()));
    }
    let (h, w) = (track.frames.dim(1), track.frames.dim(2));
    let frame_len = h * w * 3;
    let mut out = Tensor::zeros(&[t_steps, h, w, 3]);
    for i in 1..=t_steps {
        let src = sync_index(i, track.fps, a_fps).min(f);
        let src_off = (src - 1) * frame_len;
        let dst_off = (i - 1) * frame_len;
        out.data_mut()[dst_off..dst_off + frame_len]
            .copy_from_slice(&track.frames.data()[src_off..src_off + frame_len]);
    }
    Ok(out)
}
