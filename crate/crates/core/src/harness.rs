//! Multi-track evaluation: each probe pairs one acoustic stream with N
//! candidate visual tracks (the matching one plus distractors drawn from
//! other samples), and the attention weights select among them.

use serde::Serialize;

use crate::attention::{attention_entropy, attention_weights, AttentionModel, Mode};
use crate::error::{Error, Result};
use crate::tensor::{SeededRng, Tensor};
use crate::train::CE_LOG_FLOOR;

/// One evaluation probe: acoustic features `[T, Da]`, candidate tracks
/// `[N, T, Dv]`, and the index of the matching track.
#[derive(Debug, Clone)]
pub struct MultiTrackSample {
    pub acoustic: Tensor,
    pub tracks: Tensor,
    pub truth_index: usize,
}

#[derive(Debug, Clone)]
pub struct MultiTrackDataset {
    pub samples: Vec<MultiTrackSample>,
}

impl MultiTrackDataset {
    pub fn n_tracks(&self) -> usize {
        self.samples.first().map_or(0, |s| s.tracks.dim(0))
    }
}

/// Crops a `[T, D]` sequence to `t_steps`, looping it cyclically when it is
/// shorter.
fn fit_length(x: &Tensor, t_steps: usize) -> Tensor {
    let (t, d) = (x.dim(0), x.dim(1));
    let mut out = Tensor::zeros(&[t_steps, d]);
    for it in 0..t_steps {
        let src = it % t;
        out.data_mut()[it * d..(it + 1) * d].copy_from_slice(&x.data()[src * d..(src + 1) * d]);
    }
    out
}

/// Builds probes from matched `(acoustic [T_i, Da], visual [T_i, Dv])`
/// pairs. Each probe takes its own visual track plus `n_tracks - 1` distinct
/// distractors from *other* pairs; the matching track's position is
/// randomized. All sequences are cropped or looped to `t_steps`.
pub fn build_multitrack(
    pairs: &[(Tensor, Tensor)],
    n_tracks: usize,
    t_steps: usize,
    seed: u64,
) -> Result<MultiTrackDataset> {
    if n_tracks == 0 || t_steps == 0 {
        return Err(Error::InvalidArgument(
            "n_tracks and t_steps must be positive".into(),
        ));
    }
    if pairs.len() < n_tracks {
        return Err(Error::InvalidArgument(format!(
            "{} tracks requested but only {} pairs available for distractors",
            n_tracks,
            pairs.len()
        )));
    }
    for (i, (a, v)) in pairs.iter().enumerate() {
        if a.rank() != 2 || v.rank() != 2 || a.dim(0) != v.dim(0) || a.dim(0) == 0 {
            return Err(Error::shape(
                "build_multitrack",
                format!(
                    "pair {i}: acoustic {:?} and visual {:?} must be nonempty [T,D] with equal T",
                    a.shape(),
                    v.shape()
                ),
            ));
        }
    }
    let root = SeededRng::new(seed);
    let dv = pairs[0].1.dim(1);
    let mut samples = Vec::with_capacity(pairs.len());
    for (i, (acoustic, own)) in pairs.iter().enumerate() {
        let mut rng = root.derive(&format!("probe-{i}"));
        // Sample distinct distractor sources, never the probe's own pair.
        let mut others: Vec<usize> = (0..pairs.len()).filter(|&j| j != i).collect();
        let mut distractors = Vec::with_capacity(n_tracks - 1);
        for _ in 0..n_tracks - 1 {
            let pick = rng.below(others.len());
            distractors.push(others.swap_remove(pick));
        }
        let truth_index = rng.below(n_tracks);
        let mut tracks = Tensor::zeros(&[n_tracks, t_steps, dv]);
        let mut next = distractors.into_iter();
        for slot in 0..n_tracks {
            let source = if slot == truth_index {
                own
            } else {
                &pairs[next.next().unwrap()].1
            };
            let fitted = fit_length(source, t_steps);
            tracks.data_mut()[slot * t_steps * dv..(slot + 1) * t_steps * dv]
                .copy_from_slice(fitted.data());
        }
        samples.push(MultiTrackSample {
            acoustic: fit_length(acoustic, t_steps),
            tracks,
            truth_index,
        });
    }
    Ok(MultiTrackDataset { samples })
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleEval {
    pub truth_index: usize,
    /// Majority-vote selection over frames (ties toward the lower index).
    pub selected: usize,
    pub frame_accuracy: f64,
    pub mean_entropy: f64,
    pub mean_ce: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub beta: f64,
    pub n_tracks: usize,
    pub samples: usize,
    /// Fraction of frames whose highest-weight track is the matching one.
    pub frame_accuracy: f64,
    /// Fraction of probes whose majority-vote selection is correct.
    pub utterance_accuracy: f64,
    pub mean_entropy: f64,
    pub mean_ce: f64,
}

/// Per-frame argmax with ties toward the lowest index.
pub fn argmax_row(row: &[f64]) -> usize {
    let mut arg = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[arg] {
            arg = i;
        }
    }
    arg
}

/// Scores every probe with a single-stream query (`B = 1`) against its `N`
/// tracks, using running batch-norm statistics.
pub fn evaluate_selection(
    model: &mut AttentionModel,
    dataset: &MultiTrackDataset,
    beta: f64,
) -> Result<(EvalReport, Vec<SampleEval>)> {
    if dataset.samples.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation dataset".into()));
    }
    let mut per_sample = Vec::with_capacity(dataset.samples.len());
    let (mut frame_hits, mut frames) = (0usize, 0usize);
    let (mut entropy_sum, mut ce_sum) = (0.0, 0.0);
    let mut utter_hits = 0usize;
    for sample in &dataset.samples {
        let t = sample.acoustic.dim(0);
        let da = sample.acoustic.dim(1);
        let n = sample.tracks.dim(0);
        let a = sample.acoustic.clone().reshape(&[1, t, da])?;
        let (scores, _) = model.forward_scores(&a, &sample.tracks, Mode::Infer)?;
        let alpha = attention_weights(&scores, beta)?;
        let mut votes = vec![0usize; n];
        let mut hits = 0usize;
        let mut ce = 0.0;
        for it in 0..t {
            let row = &alpha.data.data()[it * n..(it + 1) * n];
            let arg = argmax_row(row);
            votes[arg] += 1;
            if arg == sample.truth_index {
                hits += 1;
            }
            ce -= row[sample.truth_index].max(CE_LOG_FLOOR).ln();
        }
        let selected = argmax_row(&votes.iter().map(|&v| v as f64).collect::<Vec<_>>());
        let entropy = attention_entropy(&alpha);
        let sample_entropy = entropy.data().iter().sum::<f64>() / t as f64;
        per_sample.push(SampleEval {
            truth_index: sample.truth_index,
            selected,
            frame_accuracy: hits as f64 / t as f64,
            mean_entropy: sample_entropy,
            mean_ce: ce / t as f64,
        });
        frame_hits += hits;
        frames += t;
        entropy_sum += sample_entropy;
        ce_sum += ce / t as f64;
        if selected == sample.truth_index {
            utter_hits += 1;
        }
    }
    let ns = dataset.samples.len();
    Ok((
        EvalReport {
            beta,
            n_tracks: dataset.n_tracks(),
            samples: ns,
            frame_accuracy: frame_hits as f64 / frames as f64,
            utterance_accuracy: utter_hits as f64 / ns as f64,
            mean_entropy: entropy_sum / ns as f64,
            mean_ce: ce_sum / ns as f64,
        },
        per_sample,
    ))
}

/// Evaluates the same dataset at each inverse temperature.
pub fn sweep_beta(
    model: &mut AttentionModel,
    dataset: &MultiTrackDataset,
    betas: &[f64],
) -> Result<Vec<EvalReport>> {
    betas
        .iter()
        .map(|&b| evaluate_selection(model, dataset, b).map(|(r, _)| r))
        .collect()
}

/// Attention weights `[1, T, N]` for one probe as CSV: a `# config` comment,
/// a header, then one row per frame whose weights sum to one.
pub fn attention_csv(alpha: &Tensor, config_line: &str) -> Result<String> {
    if alpha.rank() != 3 || alpha.dim(0) != 1 {
        return Err(Error::shape(
            "attention_csv",
            format!("expected [1,T,N], got {:?}", alpha.shape()),
        ));
    }
    let (t, n) = (alpha.dim(1), alpha.dim(2));
    let mut out = String::new();
    out.push_str(&format!("# config {config_line}\n"));
    out.push_str("frame");
    for k in 0..n {
        out.push_str(&format!(",track{k}"));
    }
    out.push('\n');
    for it in 0..t {
        out.push_str(&it.to_string());
        for k in 0..n {
            out.push_str(&format!(",{:.12e}", alpha.at3(0, it, k)));
        }
        out.push('\n');
    }
    Ok(out)
}

/// The same weights as a binary (P5) PGM heat map, `N` columns by `T` rows,
/// pixel value `round(alpha * 255)` with halves rounding up.
pub fn attention_pgm(alpha: &Tensor, config_line: &str) -> Result<Vec<u8>> {
    if alpha.rank() != 3 || alpha.dim(0) != 1 {
        return Err(Error::shape(
            "attention_pgm",
            format!("expected [1,T,N], got {:?}", alpha.shape()),
        ));
    }
    let (t, n) = (alpha.dim(1), alpha.dim(2));
    let mut out = Vec::new();
    out.extend_from_slice(b"P5\n");
    out.extend_from_slice(format!("# config {config_line}\n").as_bytes());
    out.extend_from_slice(format!("{n} {t}\n255\n").as_bytes());
    for it in 0..t {
        for k in 0..n {
            let v = (alpha.at3(0, it, k).clamp(0.0, 1.0) * 255.0 + 0.5).floor();
            out.push(v.min(255.0) as u8);
        }
    }
    Ok(out)
}

/// On-disk dataset layout: this manifest plus `acoustic` `[S, T, Da]` and
/// `tracks` `[S, N, T, Dv]` tensor files.
#[derive(Debug, serde::Deserialize, Serialize)]
pub struct DatasetManifest {
    pub count: usize,
    pub n_tracks: usize,
    pub t_steps: usize,
    pub acoustic_dim: usize,
    pub visual_dim: usize,
    pub truth_indices: Vec<usize>,
    /// The resolved configuration that produced the dataset.
    pub config: String,
}

pub const DATASET_MANIFEST: &str = "dataset.json";

/// Writes the dataset into `dir` and returns a checksum over its tensors.
pub fn save_dataset(dir: &std::path::Path, ds: &MultiTrackDataset, config: &str) -> Result<String> {
    use crate::tensorio::{save_tensor, tensor_checksum};
    if ds.samples.is_empty() {
        return Err(Error::InvalidArgument("refusing to save an empty dataset".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let s = ds.samples.len();
    let (t, da) = (ds.samples[0].acoustic.dim(0), ds.samples[0].acoustic.dim(1));
    let (n, dv) = (ds.samples[0].tracks.dim(0), ds.samples[0].tracks.dim(2));
    let mut acoustic = Tensor::zeros(&[s, t, da]);
    let mut tracks = Tensor::zeros(&[s, n, t, dv]);
    let mut truth_indices = Vec::with_capacity(s);
    for (i, sample) in ds.samples.iter().enumerate() {
        if sample.acoustic.shape() != [t, da] || sample.tracks.shape() != [n, t, dv] {
            return Err(Error::shape(
                "save_dataset",
                format!("sample {i} shape differs from sample 0"),
            ));
        }
        acoustic.data_mut()[i * t * da..(i + 1) * t * da].copy_from_slice(sample.acoustic.data());
        tracks.data_mut()[i * n * t * dv..(i + 1) * n * t * dv]
            .copy_from_slice(sample.tracks.data());
        truth_indices.push(sample.truth_index);
    }
    save_tensor(&dir.join("acoustic"), &acoustic)?;
    save_tensor(&dir.join("tracks"), &tracks)?;
    let manifest = DatasetManifest {
        count: s,
        n_tracks: n,
        t_steps: t,
        acoustic_dim: da,
        visual_dim: dv,
        truth_indices,
        config: config.to_string(),
    };
    let mp = dir.join(DATASET_MANIFEST);
    std::fs::write(&mp, serde_json::to_string_pretty(&manifest).unwrap())
        .map_err(|e| Error::io(mp.display().to_string(), e))?;
    use sha2::Digest;
    let mut hasher = sha2::Sha256::new();
    hasher.update(tensor_checksum(&acoustic).as_bytes());
    hasher.update(tensor_checksum(&tracks).as_bytes());
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

pub fn load_dataset(dir: &std::path::Path) -> Result<MultiTrackDataset> {
    use crate::tensorio::load_tensor;
    let mp = dir.join(DATASET_MANIFEST);
    let text =
        std::fs::read_to_string(&mp).map_err(|e| Error::io(mp.display().to_string(), e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: mp.display().to_string(),
        detail: e.to_string(),
    })?;
    let acoustic = load_tensor(&dir.join("acoustic"))?;
    let tracks = load_tensor(&dir.join("tracks"))?;
    let (s, t, da) = (manifest.count, manifest.t_steps, manifest.acoustic_dim);
    let (n, dv) = (manifest.n_tracks, manifest.visual_dim);
    if acoustic.shape() != [s, t, da] || tracks.shape() != [s, n, t, dv] {
        return Err(Error::Format {
            path: mp.display().to_string(),
            detail: format!(
                "tensor shapes {:?}/{:?} disagree with the manifest",
                acoustic.shape(),
                tracks.shape()
            ),
        });
    }
    if manifest.truth_indices.len() != s || manifest.truth_indices.iter().any(|&x| x >= n) {
        return Err(Error::Format {
            path: mp.display().to_string(),
            detail: "invalid truth indices".into(),
        });
    }
    let mut samples = Vec::with_capacity(s);
    for i in 0..s {
        let a = Tensor::from_vec(&[t, da], acoustic.data()[i * t * da..(i + 1) * t * da].to_vec())?;
        let tr = Tensor::from_vec(
            &[n, t, dv],
            tracks.data()[i * n * t * dv..(i + 1) * n * t * dv].to_vec(),
        )?;
        samples.push(MultiTrackSample {
            acoustic: a,
            tracks: tr,
            truth_index: manifest.truth_indices[i],
        });
    }
    Ok(MultiTrackDataset { samples })
}
