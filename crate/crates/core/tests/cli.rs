//! Black-box tests of the command-line interface: exit codes, validation
//! messages, determinism, and file contracts.

use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_trackgate");

/// Small query net so CLI runs stay fast; the input width must match the
/// 240-dim acoustic features that gen-data writes.
const TINY_TRAIN_CONFIG: &str = r#"{"query_channels": [240, 8, 8, 16], "batch": 2, "t_steps": 8, "steps": 3, "schedule_scale": 1000}"#;

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn trackgate")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn gen_small(dir: &Path, n: usize, count: usize, seed: u64) -> String {
    let out = dir.join(format!("ds{n}")).display().to_string();
    let r = run(&[
        "gen-data",
        "--out",
        &out,
        "--n",
        &n.to_string(),
        "--count",
        &count.to_string(),
        "--t-steps",
        "8",
        "--latent-dim",
        "4",
        "--seed",
        &seed.to_string(),
    ]);
    assert_eq!(code(&r), 0, "gen-data failed: {}", stderr(&r));
    out
}

fn train_small(dir: &Path, config: &str, extra: &[&str]) -> String {
    let cfg = write_config(dir, config);
    let out = dir.join("ckpt").display().to_string();
    let mut args = vec!["train", "--config", &cfg, "--out", &out];
    args.extend_from_slice(extra);
    let r = run(&args);
    assert_eq!(code(&r), 0, "train failed: {}", stderr(&r));
    out
}

#[test]
fn zero_tracks_exits_2_naming_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ds").display().to_string();
    let r = run(&["gen-data", "--out", &out, "--n", "0"]);
    assert_eq!(code(&r), 2);
    assert!(stderr(&r).contains("--n"), "stderr: {}", stderr(&r));
}

#[test]
fn missing_checkpoint_exits_2_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_small(dir.path(), 2, 3, 1);
    let missing = dir.path().join("no-such-checkpoint").display().to_string();
    let out = dir.path().join("eval.csv").display().to_string();
    let r = run(&["eval", "--checkpoint", &missing, "--data", &ds, "--out", &out]);
    assert_eq!(code(&r), 2);
    assert!(stderr(&r).contains("no-such-checkpoint"), "stderr: {}", stderr(&r));
}

#[test]
fn unknown_config_key_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"bogus_key": 1}"#);
    let r = run(&["gradcheck", "--config", &cfg]);
    assert_eq!(code(&r), 2);
    assert!(stderr(&r).contains("bogus_key"), "stderr: {}", stderr(&r));
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a").display().to_string();
    let b = dir.path().join("b").display().to_string();
    let args = |out: &str| {
        vec![
            "gen-data".to_string(),
            "--out".into(),
            out.into(),
            "--n".into(),
            "3".into(),
            "--count".into(),
            "5".into(),
            "--t-steps".into(),
            "8".into(),
            "--latent-dim".into(),
            "4".into(),
            "--seed".into(),
            "9".into(),
        ]
    };
    let ra = Command::new(BIN).args(args(&a)).output().unwrap();
    let rb = Command::new(BIN).args(args(&b)).output().unwrap();
    assert_eq!(code(&ra), 0);
    assert_eq!(ra.stdout, rb.stdout, "summary lines (with checksums) differ");
    for f in ["acoustic.bin", "tracks.bin"] {
        let fa = std::fs::read(Path::new(&a).join(f)).unwrap();
        let fb = std::fs::read(Path::new(&b).join(f)).unwrap();
        assert_eq!(fa, fb, "{f} differs between identical runs");
    }
}

#[test]
fn train_zero_steps_writes_init_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ck = train_small(dir.path(), TINY_TRAIN_CONFIG, &["--steps", "0"]);
    let manifest = std::fs::read_to_string(Path::new(&ck).join("manifest.json")).unwrap();
    assert!(manifest.contains("\"step\": 0"));

    // A second 0-step run with the same seed reproduces the weights exactly.
    let dir2 = tempfile::tempdir().unwrap();
    let ck2 = train_small(dir2.path(), TINY_TRAIN_CONFIG, &["--steps", "0"]);
    let p1 = std::fs::read(Path::new(&ck).join("param0.bin")).unwrap();
    let p2 = std::fs::read(Path::new(&ck2).join("param0.bin")).unwrap();
    assert_eq!(p1, p2);
}

#[test]
fn nan_checkpoint_aborts_with_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let ck = train_small(dir.path(), TINY_TRAIN_CONFIG, &["--steps", "0"]);
    // Poison the bilinear matrix (the last parameter) with NaNs, keeping the
    // byte length intact. Earlier parameters are masked by downstream ReLUs,
    // but this one feeds the scores directly.
    let last = (0..)
        .take_while(|i| Path::new(&ck).join(format!("param{i}.bin")).exists())
        .last()
        .unwrap();
    let param = Path::new(&ck).join(format!("param{last}.bin"));
    let len = std::fs::metadata(&param).unwrap().len() as usize;
    let nan = f64::NAN.to_le_bytes();
    let bytes: Vec<u8> = std::iter::repeat(nan).flatten().take(len).collect();
    std::fs::write(&param, bytes).unwrap();

    let cfg = write_config(dir.path(), TINY_TRAIN_CONFIG);
    let r = run(&["train", "--config", &cfg, "--out", &ck, "--resume", "--steps", "1"]);
    assert_eq!(code(&r), 3, "stderr: {}", stderr(&r));
    // The checkpoint directory survives the abort.
    assert!(Path::new(&ck).join("manifest.json").exists());
}

#[test]
fn eval_single_track_accuracy_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_small(dir.path(), 1, 3, 2);
    let ck = train_small(dir.path(), TINY_TRAIN_CONFIG, &[]);
    let out = dir.path().join("eval.csv").display().to_string();
    let r = run(&["eval", "--checkpoint", &ck, "--data", &ds, "--out", &out]);
    assert_eq!(code(&r), 0, "stderr: {}", stderr(&r));
    let csv = std::fs::read_to_string(&out).unwrap();
    let mut data_rows = 0;
    for line in csv.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[3], "1", "frame accuracy not 1.0 in: {line}");
        assert_eq!(cells[4], "0", "entropy not 0 in: {line}");
        data_rows += 1;
    }
    assert_eq!(data_rows, 3);
}

#[test]
fn sweep_writes_one_row_per_beta() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_small(dir.path(), 3, 5, 3);
    let ck = train_small(dir.path(), TINY_TRAIN_CONFIG, &[]);
    let out = dir.path().join("sweep.csv").display().to_string();
    let r = run(&[
        "sweep",
        "--checkpoint",
        &ck,
        "--data",
        &ds,
        "--betas",
        "0,0.5,1,2,inf",
        "--out",
        &out,
    ]);
    assert_eq!(code(&r), 0, "stderr: {}", stderr(&r));
    let csv = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 5);
    assert!(rows[0].starts_with("0,"));
    assert!(rows[4].starts_with("inf,"));
    // beta=0 rows are uniform: entropy is exactly ln 3.
    let cells: Vec<&str> = rows[0].split(',').collect();
    let entropy: f64 = cells[3].parse().unwrap();
    assert!((entropy - 3f64.ln()).abs() < 1e-12);
}

#[test]
fn export_writes_csv_and_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_small(dir.path(), 4, 6, 4);
    let ck = train_small(dir.path(), TINY_TRAIN_CONFIG, &[]);
    let base = dir.path().join("att").display().to_string();
    let r = run(&[
        "export", "--checkpoint", &ck, "--data", &ds, "--sample", "2", "--out", &base,
    ]);
    assert_eq!(code(&r), 0, "stderr: {}", stderr(&r));
    let csv = std::fs::read_to_string(format!("{base}.csv")).unwrap();
    assert!(csv.starts_with("# config "));
    for line in csv.lines().skip(2) {
        let sum: f64 = line
            .split(',')
            .skip(1)
            .map(|c| c.parse::<f64>().unwrap())
            .sum();
        assert!((sum - 1.0).abs() < 1e-9, "row sum {sum}");
    }
    let pgm = std::fs::read(format!("{base}.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n"));
    // Width 4 (tracks), height 8 (steps), 32 payload bytes.
    let header_end = pgm.len() - 32;
    let header = std::str::from_utf8(&pgm[..header_end]).unwrap();
    assert!(header.ends_with("4 8\n255\n"), "header: {header:?}");

    let r2 = run(&[
        "export", "--checkpoint", &ck, "--data", &ds, "--sample", "99", "--out", &base,
    ]);
    assert_eq!(code(&r2), 2);
}

#[test]
fn gradcheck_passes_and_prints_error() {
    let r = run(&["gradcheck", "--seed", "1", "--b", "3", "--t", "4"]);
    assert_eq!(code(&r), 0, "stderr: {}", stderr(&r));
    let out = String::from_utf8_lossy(&r.stdout);
    assert!(out.contains("max_rel_err="), "stdout: {out}");
    assert!(out.contains("< 1e-4"), "stdout: {out}");
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    // Config says 3 tracks; the flag forces 2.
    let cfg = write_config(
        dir.path(),
        r#"{"n": 3, "count": 4, "t_steps": 8, "latent_dim": 4, "seed": 5}"#,
    );
    let out = dir.path().join("ds").display().to_string();
    let r = run(&["gen-data", "--config", &cfg, "--out", &out, "--n", "2"]);
    assert_eq!(code(&r), 0, "stderr: {}", stderr(&r));
    let manifest = std::fs::read_to_string(Path::new(&out).join("dataset.json")).unwrap();
    assert!(manifest.contains("\"n_tracks\": 2"), "{manifest}");
}
