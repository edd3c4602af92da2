//! Command-line entry point: dataset generation, training, evaluation,
//! temperature sweeps, attention export, and gradient checking.
//!
//! Every subcommand reads an optional JSON config file (unknown keys are
//! rejected) with individual flags taking precedence, and embeds the fully
//! resolved config in the header of every file it writes. Exit codes:
//! 0 success, 2 usage or validation failure, 3 numerical failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use trackgate::attention::{attention_weights, AttentionModel, Mode, QueryNetConfig, ACOUSTIC_DIM};
use trackgate::checkpoint::{load_checkpoint, save_checkpoint};
use trackgate::error::{Error, Result};
use trackgate::frontend::{synth_tracks, DistractorMode, SyntheticTrackSpec, VISUAL_DIM};
use trackgate::gradcheck::attention_gradcheck;
use trackgate::harness::{
    build_multitrack, evaluate_selection, load_dataset, save_dataset, sweep_beta, attention_csv,
    attention_pgm, MultiTrackDataset, MultiTrackSample,
};
use trackgate::optim::AdamState;
use trackgate::tensor::{derive_seed, SeededRng, Tensor};
use trackgate::train::{
    train_attention, SyntheticPairConfig, SyntheticPairSource, TrainConfig,
};

#[derive(Parser)]
#[command(name = "trackgate", version, about = "Audio-visual track selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-track evaluation dataset.
    GenData(GenDataArgs),
    /// Train the attention stack on synthetic matched pairs.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a multi-track dataset.
    Eval(EvalArgs),
    /// Evaluate the same dataset across inverse temperatures.
    Sweep(SweepArgs),
    /// Export one probe's attention weights as CSV and PGM.
    Export(ExportArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Export(a) => cmd_export(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        let code = match e {
            Error::Numerical(_) | Error::NonFinite(_) => 3,
            _ => 2,
        };
        std::process::exit(code);
    }
}

fn load_config<T: serde::de::DeserializeOwned>(path: &Option<PathBuf>) -> Result<Option<T>> {
    let Some(path) = path else { return Ok(None) };
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let cfg = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    Ok(Some(cfg))
}

fn require_path(opt: &Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    opt.clone()
        .ok_or_else(|| Error::InvalidArgument(format!("{flag} is required")))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

// ---------------------------------------------------------------- gen-data

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum GenMode {
    /// Distractors are other samples' matched tracks.
    Dataset,
    /// Distractors come from independently drawn latents.
    Independent,
    /// Distractors are the probe's own latent, circularly time-shifted.
    TimeShifted,
}

#[derive(Args)]
struct GenDataArgs {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for the dataset.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Tracks per sample.
    #[arg(long)]
    n: Option<usize>,
    /// Number of samples.
    #[arg(long)]
    count: Option<usize>,
    /// Time steps per sample.
    #[arg(long)]
    t_steps: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Distractor source.
    #[arg(long, value_enum)]
    mode: Option<GenMode>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct GenDataConfig {
    out: Option<PathBuf>,
    n: usize,
    count: usize,
    t_steps: usize,
    latent_dim: usize,
    noise_sigma: f64,
    mode: GenMode,
    seed: u64,
}

impl Default for GenDataConfig {
    fn default() -> GenDataConfig {
        GenDataConfig {
            out: None,
            n: 4,
            count: 32,
            t_steps: 32,
            latent_dim: 16,
            noise_sigma: 0.0,
            mode: GenMode::Dataset,
            seed: 0,
        }
    }
}

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    let mut cfg: GenDataConfig = load_config(&args.config)?.unwrap_or_default();
    if args.out.is_some() {
        cfg.out = args.out.clone();
    }
    if let Some(v) = args.n {
        cfg.n = v;
    }
    if let Some(v) = args.count {
        cfg.count = v;
    }
    if let Some(v) = args.t_steps {
        cfg.t_steps = v;
    }
    if let Some(v) = args.latent_dim {
        cfg.latent_dim = v;
    }
    if let Some(v) = args.noise_sigma {
        cfg.noise_sigma = v;
    }
    if let Some(v) = args.mode {
        cfg.mode = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    let out = require_path(&cfg.out, "--out")?;
    if cfg.n == 0 {
        return Err(Error::InvalidArgument("--n must be at least 1".into()));
    }
    if cfg.count == 0 {
        return Err(Error::InvalidArgument("--count must be at least 1".into()));
    }
    if cfg.t_steps == 0 {
        return Err(Error::InvalidArgument("--t-steps must be at least 1".into()));
    }
    if cfg.mode == GenMode::Dataset && cfg.count < cfg.n {
        return Err(Error::InvalidArgument(format!(
            "--count {} is too small for --n {} tracks with dataset-mode distractors",
            cfg.count, cfg.n
        )));
    }

    let source = SyntheticPairSource::new(SyntheticPairConfig {
        latent_dim: cfg.latent_dim,
        noise_sigma: cfg.noise_sigma,
        acoustic_dim: ACOUSTIC_DIM,
        visual_dim: VISUAL_DIM,
        seed: cfg.seed,
    })?;
    let ds = match cfg.mode {
        GenMode::Dataset => {
            let mut pairs = Vec::with_capacity(cfg.count);
            for i in 0..cfg.count {
                pairs.push(source.sample(i as u64, cfg.t_steps)?);
            }
            build_multitrack(&pairs, cfg.n, cfg.t_steps, derive_seed(cfg.seed, "multitrack"))?
        }
        GenMode::Independent | GenMode::TimeShifted => {
            let distractor_mode = match cfg.mode {
                GenMode::Independent => DistractorMode::Independent,
                _ => DistractorMode::TimeShifted,
            };
            let root = SeededRng::new(cfg.seed);
            let mut samples = Vec::with_capacity(cfg.count);
            for i in 0..cfg.count {
                let (latent, acoustic, own) =
                    source.sample_with_latent(i as u64, cfg.t_steps)?;
                let spec = SyntheticTrackSpec {
                    latent_dim: cfg.latent_dim,
                    noise_sigma: cfg.noise_sigma,
                    distractor_mode,
                    seed: derive_seed(cfg.seed, &format!("distractors-{i}")),
                };
                let synth = synth_tracks(&spec, &latent, cfg.n - 1)?;
                let mut rng = root.derive(&format!("probe-{i}"));
                let truth_index = rng.below(cfg.n);
                let mut tracks = Tensor::zeros(&[cfg.n, cfg.t_steps, VISUAL_DIM]);
                let stride = cfg.t_steps * VISUAL_DIM;
                let mut next = synth.distractors.into_iter();
                for slot in 0..cfg.n {
                    let row: Tensor;
                    let src = if slot == truth_index {
                        &own
                    } else {
                        row = next.next().unwrap().reshape(&[cfg.t_steps, VISUAL_DIM])?;
                        &row
                    };
                    tracks.data_mut()[slot * stride..(slot + 1) * stride]
                        .copy_from_slice(src.data());
                }
                samples.push(MultiTrackSample {
                    acoustic,
                    tracks,
                    truth_index,
                });
            }
            MultiTrackDataset { samples }
        }
    };
    let resolved = serde_json::to_string(&cfg).unwrap();
    let checksum = save_dataset(&out, &ds, &resolved)?;
    println!(
        "gen-data: n={} count={} t_steps={} checksum={checksum}",
        cfg.n, cfg.count, cfg.t_steps
    );
    Ok(())
}

// ------------------------------------------------------------------- train

#[derive(Args)]
struct TrainArgs {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint directory (created if needed).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training-log CSV path (default: <out>/train_log.csv).
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    t_steps: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Divisor applied to the reference learning-rate schedule steps.
    #[arg(long)]
    schedule_scale: Option<u64>,
    /// Resume from the checkpoint already in --out.
    #[arg(long)]
    resume: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TrainCliConfig {
    out: Option<PathBuf>,
    log: Option<PathBuf>,
    steps: u64,
    batch: usize,
    t_steps: usize,
    latent_dim: usize,
    noise_sigma: f64,
    seed: u64,
    schedule_scale: u64,
    resume: bool,
    /// Query-net channel widths, input first.
    query_channels: Vec<usize>,
}

impl Default for TrainCliConfig {
    fn default() -> TrainCliConfig {
        let q = QueryNetConfig::default();
        TrainCliConfig {
            out: None,
            log: None,
            steps: 2000,
            batch: 8,
            t_steps: 16,
            latent_dim: 16,
            noise_sigma: 0.0,
            seed: 0,
            schedule_scale: 100,
            resume: false,
            query_channels: q.channels,
        }
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg: TrainCliConfig = load_config(&args.config)?.unwrap_or_default();
    if args.out.is_some() {
        cfg.out = args.out.clone();
    }
    if args.log.is_some() {
        cfg.log = args.log.clone();
    }
    if let Some(v) = args.steps {
        cfg.steps = v;
    }
    if let Some(v) = args.batch {
        cfg.batch = v;
    }
    if let Some(v) = args.t_steps {
        cfg.t_steps = v;
    }
    if let Some(v) = args.latent_dim {
        cfg.latent_dim = v;
    }
    if let Some(v) = args.noise_sigma {
        cfg.noise_sigma = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.schedule_scale {
        cfg.schedule_scale = v;
    }
    if args.resume {
        cfg.resume = true;
    }
    let out = require_path(&cfg.out, "--out")?;
    let log_path = cfg.log.clone().unwrap_or_else(|| out.join("train_log.csv"));

    let qcfg = QueryNetConfig {
        channels: cfg.query_channels.clone(),
        kernel: 5,
    };
    qcfg.validate()?;
    let train_cfg = TrainConfig {
        batch: cfg.batch,
        steps: cfg.steps,
        time_steps: cfg.t_steps,
        seed: cfg.seed,
        schedule_scale: cfg.schedule_scale,
    };
    train_cfg.validate()?;
    let source = SyntheticPairSource::new(SyntheticPairConfig {
        latent_dim: cfg.latent_dim,
        noise_sigma: cfg.noise_sigma,
        acoustic_dim: qcfg.channels[0],
        visual_dim: VISUAL_DIM,
        seed: cfg.seed,
    })?;

    let (mut model, mut adam, start) = if cfg.resume {
        load_checkpoint(&out)?
    } else {
        let model = AttentionModel::init(qcfg, VISUAL_DIM, cfg.seed)?;
        let adam = AdamState::new(&model.params());
        (model, adam, 0)
    };
    if start > cfg.steps {
        return Err(Error::InvalidArgument(format!(
            "checkpoint is at step {start}, beyond --steps {}",
            cfg.steps
        )));
    }
    // The pre-training state is the last-good checkpoint should a later
    // step abort numerically.
    save_checkpoint(&out, &model, &adam, start)?;

    let report = train_attention(&train_cfg, &source, &mut model, &mut adam, start)?;
    save_checkpoint(&out, &model, &adam, cfg.steps)?;

    let resolved = serde_json::to_string(&cfg).unwrap();
    let mut log = String::new();
    writeln!(log, "# config {resolved}").unwrap();
    writeln!(log, "step,lr,loss,diag_accuracy,mean_entropy").unwrap();
    for row in &report.rows {
        writeln!(
            log,
            "{},{},{},{},{}",
            row.step, row.lr, row.loss, row.diag_accuracy, row.mean_entropy
        )
        .unwrap();
    }
    write_file(&log_path, log.as_bytes())?;
    if report.rows.is_empty() {
        println!("train: steps=0, checkpoint written at initialization");
    } else {
        println!(
            "train: steps={} final_loss={:.6} final_accuracy={:.4} checksum={}",
            cfg.steps, report.final_loss, report.final_accuracy, report.param_checksum
        );
    }
    Ok(())
}

// -------------------------------------------------------------- eval/sweep

#[derive(Args)]
struct EvalArgs {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint directory.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Inverse temperature ("inf" for hard selection).
    #[arg(long)]
    beta: Option<f64>,
    /// Report CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct EvalConfig {
    checkpoint: Option<PathBuf>,
    data: Option<PathBuf>,
    beta: f64,
    out: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> EvalConfig {
        EvalConfig {
            checkpoint: None,
            data: None,
            beta: 1.0,
            out: None,
        }
    }
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let mut cfg: EvalConfig = load_config(&args.config)?.unwrap_or_default();
    if args.checkpoint.is_some() {
        cfg.checkpoint = args.checkpoint.clone();
    }
    if args.data.is_some() {
        cfg.data = args.data.clone();
    }
    if let Some(v) = args.beta {
        cfg.beta = v;
    }
    if args.out.is_some() {
        cfg.out = args.out.clone();
    }
    let checkpoint = require_path(&cfg.checkpoint, "--checkpoint")?;
    let data = require_path(&cfg.data, "--data")?;
    let out = require_path(&cfg.out, "--out")?;

    let (mut model, _, _) = load_checkpoint(&checkpoint)?;
    let ds = load_dataset(&data)?;
    let (report, per_sample) = evaluate_selection(&mut model, &ds, cfg.beta)?;

    let resolved = serde_json::to_string(&cfg).unwrap();
    let mut csv = String::new();
    writeln!(csv, "# config {resolved}").unwrap();
    writeln!(
        csv,
        "# summary beta={} n_tracks={} samples={} frame_accuracy={} utterance_accuracy={} mean_entropy={} mean_ce={}",
        report.beta,
        report.n_tracks,
        report.samples,
        report.frame_accuracy,
        report.utterance_accuracy,
        report.mean_entropy,
        report.mean_ce
    )
    .unwrap();
    writeln!(csv, "sample,truth_index,selected,frame_accuracy,mean_entropy,mean_ce").unwrap();
    for (i, s) in per_sample.iter().enumerate() {
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            i, s.truth_index, s.selected, s.frame_accuracy, s.mean_entropy, s.mean_ce
        )
        .unwrap();
    }
    write_file(&out, csv.as_bytes())?;
    println!(
        "eval: n={} samples={} frame_accuracy={:.4} utterance_accuracy={:.4} mean_entropy={:.4}",
        report.n_tracks, report.samples, report.frame_accuracy, report.utterance_accuracy,
        report.mean_entropy
    );
    Ok(())
}

#[derive(Args)]
struct SweepArgs {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated inverse temperatures; "inf" allowed.
    #[arg(long)]
    betas: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SweepConfig {
    checkpoint: Option<PathBuf>,
    data: Option<PathBuf>,
    betas: String,
    out: Option<PathBuf>,
}

impl Default for SweepConfig {
    fn default() -> SweepConfig {
        SweepConfig {
            checkpoint: None,
            data: None,
            betas: "0,0.5,1,2,inf".into(),
            out: None,
        }
    }
}

fn parse_betas(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        let beta = if part.eq_ignore_ascii_case("inf") {
            f64::INFINITY
        } else {
            part.parse::<f64>().map_err(|_| {
                Error::InvalidArgument(format!("--betas entry {part:?} is not a number"))
            })?
        };
        if beta.is_nan() || beta < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "--betas entries must be nonnegative, got {part}"
            )));
        }
        out.push(beta);
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("--betas must list at least one value".into()));
    }
    Ok(out)
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let mut cfg: SweepConfig = load_config(&args.config)?.unwrap_or_default();
    if args.checkpoint.is_some() {
        cfg.checkpoint = args.checkpoint.clone();
    }
    if args.data.is_some() {
        cfg.data = args.data.clone();
    }
    if let Some(v) = args.betas {
        cfg.betas = v;
    }
    if args.out.is_some() {
        cfg.out = args.out.clone();
    }
    let checkpoint = require_path(&cfg.checkpoint, "--checkpoint")?;
    let data = require_path(&cfg.data, "--data")?;
    let out = require_path(&cfg.out, "--out")?;
    let betas = parse_betas(&cfg.betas)?;

    let (mut model, _, _) = load_checkpoint(&checkpoint)?;
    let ds = load_dataset(&data)?;
    let reports = sweep_beta(&mut model, &ds, &betas)?;

    let resolved = serde_json::to_string(&cfg).unwrap();
    let mut csv = String::new();
    writeln!(csv, "# config {resolved}").unwrap();
    writeln!(csv, "beta,frame_accuracy,utterance_accuracy,mean_entropy,mean_ce").unwrap();
    for r in &reports {
        writeln!(
            csv,
            "{},{},{},{},{}",
            r.beta, r.frame_accuracy, r.utterance_accuracy, r.mean_entropy, r.mean_ce
        )
        .unwrap();
    }
    write_file(&out, csv.as_bytes())?;
    println!("sweep: {} betas over {} samples -> {}", betas.len(), ds.samples.len(), out.display());
    Ok(())
}

// ------------------------------------------------------------------ export

#[derive(Args)]
struct ExportArgs {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Probe index within the dataset.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    /// Output base path; writes <out>.csv and <out>.pgm.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ExportConfig {
    checkpoint: Option<PathBuf>,
    data: Option<PathBuf>,
    sample: usize,
    beta: f64,
    out: Option<PathBuf>,
}

impl Default for ExportConfig {
    fn default() -> ExportConfig {
        ExportConfig {
            checkpoint: None,
            data: None,
            sample: 0,
            beta: 1.0,
            out: None,
        }
    }
}

fn cmd_export(args: ExportArgs) -> Result<()> {
    let mut cfg: ExportConfig = load_config(&args.config)?.unwrap_or_default();
    if args.checkpoint.is_some() {
        cfg.checkpoint = args.checkpoint.clone();
    }
    if args.data.is_some() {
        cfg.data = args.data.clone();
    }
    if let Some(v) = args.sample {
        cfg.sample = v;
    }
    if let Some(v) = args.beta {
        cfg.beta = v;
    }
    if args.out.is_some() {
        cfg.out = args.out.clone();
    }
    let checkpoint = require_path(&cfg.checkpoint, "--checkpoint")?;
    let data = require_path(&cfg.data, "--data")?;
    let out = require_path(&cfg.out, "--out")?;

    let (mut model, _, _) = load_checkpoint(&checkpoint)?;
    let ds = load_dataset(&data)?;
    let Some(sample) = ds.samples.get(cfg.sample) else {
        return Err(Error::InvalidArgument(format!(
            "--sample {} is out of range for a dataset of {}",
            cfg.sample,
            ds.samples.len()
        )));
    };
    let t = sample.acoustic.dim(0);
    let da = sample.acoustic.dim(1);
    let a = sample.acoustic.clone().reshape(&[1, t, da])?;
    let (scores, _) = model.forward_scores(&a, &sample.tracks, Mode::Infer)?;
    let alpha = attention_weights(&scores, cfg.beta)?;

    let resolved = serde_json::to_string(&cfg).unwrap();
    let csv = attention_csv(&alpha.data, &resolved)?;
    let pgm = attention_pgm(&alpha.data, &resolved)?;
    write_file(&out.with_extension("csv"), csv.as_bytes())?;
    write_file(&out.with_extension("pgm"), &pgm)?;
    println!(
        "export: sample={} truth={} beta={} -> {}.{{csv,pgm}}",
        cfg.sample,
        sample.truth_index,
        cfg.beta,
        out.display()
    );
    Ok(())
}

// --------------------------------------------------------------- gradcheck

#[derive(Args)]
struct GradcheckArgs {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Batch size (also the number of competing tracks).
    #[arg(long)]
    b: Option<usize>,
    /// Time steps.
    #[arg(long)]
    t: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct GradcheckConfig {
    seed: u64,
    b: usize,
    t: usize,
}

impl Default for GradcheckConfig {
    fn default() -> GradcheckConfig {
        GradcheckConfig { seed: 1, b: 3, t: 4 }
    }
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<()> {
    let mut cfg: GradcheckConfig = load_config(&args.config)?.unwrap_or_default();
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.b {
        cfg.b = v;
    }
    if let Some(v) = args.t {
        cfg.t = v;
    }
    let report = attention_gradcheck(cfg.seed, cfg.b, cfg.t)?;
    let verdict = if report.max_rel_err < 1e-4 { "<" } else { ">=" };
    println!(
        "gradcheck: max_rel_err={:.3e} {verdict} 1e-4 over {} coordinates",
        report.max_rel_err, report.coordinates
    );
    if report.max_rel_err >= 1e-4 {
        return Err(Error::Numerical(format!(
            "gradient check failed: max relative error {:.3e}",
            report.max_rel_err
        )));
    }
    Ok(())
}
