//! End-to-end command tests against the compiled binary, on a small
//! synthetic dataset produced by the `synth` subcommand.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_molcnp")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Tiny-scale base config against a synthetic dataset written to `data.tsv`.
fn write_fixture(dir: &Path, n_molecules: usize, n_functions: usize) -> PathBuf {
    let config_path = dir.join("config.toml");
    let body = format!(
        r#"seed = 11
output_dir = "out"

[dataset]
path = "data.tsv"

[fingerprint]
radius = 0
nbits = 32

[splits]
n_dtrain = {half}
n_dtest = {half}
ftest = ["f{last:03}"]

[model]
encoder_hidden = [8, 8]
repr_dim = 4
decoder_hidden = [8, 8]

[training]
epochs = 2
c_min = 2
c_max = 5
t_min = 5
t_max = 5

[synth]
n_functions = {n_functions}
n_molecules = {n_molecules}
nbits = 32
latent_dim = 2
noise_sd = 0.1
out = "data.tsv"
"#,
        half = n_molecules / 2,
        last = n_functions - 1,
    );
    fs::write(&config_path, body).unwrap();
    let out = run_in(dir, &["--config", "config.toml", "synth"]);
    assert_success(&out);
    config_path
}

fn single_subdir(dir: &Path) -> PathBuf {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    entries.sort();
    assert_eq!(entries.len(), 1, "expected one hash dir in {}", dir.display());
    entries.pop().unwrap()
}

#[test]
fn fingerprint_cache_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), 10, 3);
    // restrict the table to 5 molecules for the cache fixture
    let text = fs::read_to_string(dir.path().join("data.tsv")).unwrap();
    let five: Vec<&str> = text.lines().take(6).collect();
    fs::write(dir.path().join("data.tsv"), five.join("\n") + "\n").unwrap();

    let args = [
        "--config",
        "config.toml",
        "--set",
        "fingerprint.cache=\"cache.tsv\"",
        "fingerprint",
    ];
    let out = run_in(dir.path(), &args);
    assert_success(&out);
    let cache = fs::read_to_string(dir.path().join("cache.tsv")).unwrap();
    assert_eq!(cache.lines().count(), 6); // header + 5 records
    assert!(cache.starts_with("#ecfp radius=0 nbits=32 hash="));

    // rerun over an up-to-date cache: no-op, success
    let before = fs::metadata(dir.path().join("cache.tsv")).unwrap().modified().unwrap();
    let out = run_in(dir.path(), &args);
    assert_success(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("up to date"));
    let after = fs::metadata(dir.path().join("cache.tsv")).unwrap().modified().unwrap();
    assert_eq!(before, after);

    // corrupt header: data error naming the file
    fs::write(dir.path().join("cache.tsv"), "#wrong header\nx\tff\n").unwrap();
    let out = run_in(dir.path(), &args);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cache.tsv"));
}

#[test]
fn train_writes_checkpoint_and_log_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), 30, 3);
    let args = [
        "--config",
        "config.toml",
        "--set",
        "training.epochs=1",
        "train",
    ];
    let out = run_in(dir.path(), &args);
    assert_success(&out);
    let train_dir = single_subdir(&dir.path().join("out/train"));
    let ckpt = train_dir.join("checkpoint_1.json");
    assert!(ckpt.exists());
    let log = fs::read_to_string(train_dir.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 2); // header + one epoch
    assert!(log.starts_with("epoch,split,metric,value\n"));
    assert!(train_dir.join("manifest.json").exists());
    assert!(train_dir.join("dtrain.txt").exists());

    // identical config: byte-identical checkpoint
    let first = fs::read(&ckpt).unwrap();
    let out = run_in(dir.path(), &args);
    assert_success(&out);
    assert_eq!(fs::read(&ckpt).unwrap(), first);
}

#[test]
fn bo_on_ten_molecule_pool_exhausts_to_minimum() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), 10, 3);
    let out = run_in(
        dir.path(),
        &[
            "--config",
            "config.toml",
            "--set",
            "training.c_min=1",
            "--set",
            "training.c_max=2",
            "--set",
            "training.t_min=2",
            "--set",
            "training.t_max=3",
            "train",
        ],
    );
    assert_success(&out);
    let ckpt = single_subdir(&dir.path().join("out/train")).join("checkpoint_2.json");
    let ckpt_str = ckpt.to_str().unwrap().replace('\\', "/");

    let out = run_in(
        dir.path(),
        &[
            "--config",
            "config.toml",
            "--set",
            &format!("bo.checkpoint=\"{ckpt_str}\""),
            "--set",
            "bo.objective=\"f002\"",
            "--set",
            "bo.strategies=[\"random\"]",
            "--set",
            "bo.n_init=5",
            "--set",
            "bo.n_iterations=5",
            "--set",
            "bo.seeds=[0]",
            "bo",
        ],
    );
    assert_success(&out);
    let trace_path = single_subdir(&dir.path().join("out/bo")).join("trace.csv");
    let trace = fs::read_to_string(trace_path).unwrap();
    let rows: Vec<&str> = trace.lines().skip(1).collect();
    assert_eq!(rows.len(), 10);
    // the last best_so_far equals the minimum of all true scores
    let scores: Vec<f64> = rows
        .iter()
        .map(|r| r.split(',').nth(4).unwrap().parse().unwrap())
        .collect();
    let min = scores.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let last_best: f64 = rows.last().unwrap().split(',').nth(5).unwrap().parse().unwrap();
    assert_eq!(last_best, min);
}

#[test]
fn fewshot_fss_report_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), 30, 3);
    let out = run_in(dir.path(), &["--config", "config.toml", "train"]);
    assert_success(&out);
    let ckpt = single_subdir(&dir.path().join("out/train")).join("checkpoint_2.json");
    let ckpt_str = ckpt.to_str().unwrap().replace('\\', "/");

    let args = [
        "--config",
        "config.toml",
        "--set",
        &format!("fewshot.checkpoint=\"{ckpt_str}\""),
        "--set",
        "fewshot.context_sizes=[1]",
        "--set",
        "fewshot.models=[\"fss\"]",
        "--set",
        "fewshot.n_repeats=3",
        "fewshot",
    ];
    let out = run_in(dir.path(), &args);
    assert_success(&out);
    let report_path = single_subdir(&dir.path().join("out/fewshot")).join("report.csv");
    let first = fs::read(&report_path).unwrap();
    assert!(String::from_utf8_lossy(&first).contains("fss"));

    let out = run_in(dir.path(), &args);
    assert_success(&out);
    assert_eq!(fs::read(&report_path).unwrap(), first);
}

#[test]
fn generalize_emits_grid_file() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), 40, 4);
    let out = run_in(
        dir.path(),
        &[
            "--config",
            "config.toml",
            "--set",
            "generalize.eval_functions=[\"f003\"]",
            "--set",
            "generalize.eval_context_size=5",
            "--set",
            "training.epochs=2",
            "generalize",
        ],
    );
    assert_success(&out);
    let gen_dir = single_subdir(&dir.path().join("out/generalize"));
    let grid = fs::read_to_string(gen_dir.join("grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 3); // header + 2 training classes
    assert!(grid.starts_with("trained_on,"));
    assert!(gen_dir.join("report.csv").exists());
}

#[test]
fn missing_checkpoint_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), 10, 3);
    let out = run_in(dir.path(), &["--config", "config.toml", "fewshot"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));
}

#[test]
fn invalid_config_fails_with_field_message() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), 10, 3);
    let out = run_in(
        dir.path(),
        &[
            "--config",
            "config.toml",
            "--set",
            "fingerprint.nbits=100",
            "fingerprint",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fingerprint.nbits"));

    // unknown key in the file is caught at parse time
    let out = run_in(
        dir.path(),
        &["--config", "missing.toml", "fingerprint"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_output_reloads_as_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_fixture(dir.path(), 12, 2);
    let text = fs::read_to_string(dir.path().join("data.tsv")).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("molecule_id\tsmiles\tqed\tfingerprint\t"));
    assert_eq!(text.lines().count(), 13);
    // reuse as a dataset: the fingerprint command accepts it
    let out = run_in(
        dir.path(),
        &[
            "--config",
            config.to_str().unwrap(),
            "--set",
            "fingerprint.cache=\"c2.tsv\"",
            "fingerprint",
        ],
    );
    assert_success(&out);
}
