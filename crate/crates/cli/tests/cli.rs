//! End-to-end checks of the `fgmhd` binary: outputs, exit codes and the
//! all-or-nothing file contract.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fgmhd(out_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fgmhd"))
        .arg("--out-dir")
        .arg(out_dir)
        .args(args)
        .env_remove("FGMHD_SEED")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn records(csv_text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn file_names(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

fn tiny_dataset(dir: &Path) {
    ok(&fgmhd(
        dir,
        &["synth", "--canonical", "5", "--ifs", "3", "--cascade", "3", "--size", "128", "--ifs-points", "20000"],
    ));
}

#[test]
fn estimate_filled_square_is_two() {
    let dir = tempfile::tempdir().unwrap();
    ok(&fgmhd(dir.path(), &["synth", "--kind", "filled_square", "--size", "256"]));
    let img = dir.path().join("filled_square.pgm");
    let stdout = ok(&fgmhd(dir.path(), &["estimate", img.to_str().unwrap(), "--method", "box"]));
    let (header, rows) = records(&stdout);
    assert_eq!(header, ["path", "method", "dimension", "r_squared"]);
    assert_eq!(rows.len(), 1);
    let d: f64 = rows[0][2].parse().unwrap();
    assert!((d - 2.0).abs() <= 0.03, "{d}");
}

#[test]
fn synth_then_estimate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    tiny_dataset(dir.path());
    let pgms: Vec<String> = file_names(dir.path())
        .into_iter()
        .filter(|n| n.ends_with(".pgm"))
        .map(|n| dir.path().join(n).to_string_lossy().into_owned())
        .collect();
    assert_eq!(pgms.len(), 11);
    let mut args = vec!["estimate", "--method", "sandbox"];
    args.extend(pgms.iter().map(String::as_str));
    let (_, rows) = records(&ok(&fgmhd(dir.path(), &args)));
    assert_eq!(rows.len(), 11);
    assert!(rows.iter().all(|r| (0.0..=2.0).contains(&r[2].parse::<f64>().unwrap())));
}

#[test]
fn unknown_method_exits_2_without_csv() {
    let dir = tempfile::tempdir().unwrap();
    tiny_dataset(dir.path());
    let manifest = dir.path().join("manifest.json");
    let out = fgmhd(dir.path(), &["bench", "--manifest", manifest.to_str().unwrap(), "--methods", "box,fourier"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("bench.csv").exists());
    // The regressor without a model is also a configuration error.
    let out = fgmhd(dir.path(), &["bench", "--manifest", manifest.to_str().unwrap(), "--methods", "regressor"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("bench.csv").exists());
}

#[test]
fn missing_manifest_exits_3_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = fgmhd(dir.path(), &["bench", "--manifest", "/nonexistent/manifest.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(file_names(dir.path()).is_empty());
}

#[test]
fn empty_image_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("blank.pgm");
    let mut bytes = b"P5\n64 64\n255\n".to_vec();
    bytes.extend(std::iter::repeat_n(0u8, 64 * 64));
    fs::write(&path, bytes).unwrap();
    let out = fgmhd(dir.path(), &["estimate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    assert!(out.stdout.is_empty());
    let stdout = ok(&fgmhd(dir.path(), &["estimate", path.to_str().unwrap(), "--skip-failures"]));
    assert_eq!(records(&stdout).1[0][2], "NaN");
}

#[test]
fn malformed_pgm_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.pgm");
    fs::write(&path, b"P2\n2 2\n255\n0 0 0 0\n").unwrap();
    assert_eq!(fgmhd(dir.path(), &["estimate", path.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn bench_writes_per_family_rows_and_ranking() {
    let dir = tempfile::tempdir().unwrap();
    tiny_dataset(dir.path());
    let manifest = dir.path().join("manifest.json");
    let stdout = ok(&fgmhd(dir.path(), &["bench", "--manifest", manifest.to_str().unwrap(), "--methods", "box,sandbox"]));
    assert!(stdout.starts_with("rank,method"));
    let (header, rows) = records(&fs::read_to_string(dir.path().join("bench.csv")).unwrap());
    assert_eq!(header, ["method", "dataset", "n_images", "mae", "mean_runtime_ms"]);
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().any(|r| r[0] == "box" && r[1] == "all"));
}

#[test]
fn regressor_train_then_use() {
    let dir = tempfile::tempdir().unwrap();
    tiny_dataset(dir.path());
    let manifest = dir.path().join("manifest.json");
    let m = manifest.to_str().unwrap();
    ok(&fgmhd(dir.path(), &["train-regressor", "--manifest", m, "--epochs", "2", "--kernels", "3"]));
    let weights = dir.path().join("regressor.weights");
    assert!(weights.exists());
    let (header, rows) = records(&fs::read_to_string(dir.path().join("regressor_loss.csv")).unwrap());
    assert_eq!(header, ["epoch", "train_mse"]);
    assert_eq!(rows.len(), 2);
    let img = dir.path().join("canonical_0000.pgm");
    let stdout = ok(&fgmhd(
        dir.path(),
        &["estimate", img.to_str().unwrap(), "--method", "regressor", "--model", weights.to_str().unwrap()],
    ));
    assert!(records(&stdout).1[0][2].parse::<f64>().unwrap().is_finite());
    ok(&fgmhd(
        dir.path(),
        &["bench", "--manifest", m, "--methods", "box,regressor", "--model", weights.to_str().unwrap()],
    ));
    let (_, rows) = records(&fs::read_to_string(dir.path().join("bench.csv")).unwrap());
    assert!(rows.iter().any(|r| r[0] == "regressor" && r[1] == "all"));
}

#[test]
fn truncated_weights_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("w.bin");
    fs::write(&weights, b"FGMHD-W v1\n").unwrap();
    ok(&fgmhd(dir.path(), &["synth", "--kind", "line", "--size", "64"]));
    let img = dir.path().join("line.pgm");
    let out = fgmhd(
        dir.path(),
        &["estimate", img.to_str().unwrap(), "--method", "regressor", "--model", weights.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn train_toy_emits_trace_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&fgmhd(dir.path(), &["train-toy", "--epochs", "60"]));
    assert!(stdout.contains("mmds:"));
    let (header, rows) = records(&fs::read_to_string(dir.path().join("toy_trace.csv")).unwrap());
    assert_eq!(header.join(","), "epoch,lambda,m,l_gen,l_hd,l_total,l_val,mean_hd_gen");
    assert_eq!(rows.len(), 60);
    let lambdas: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(lambdas.windows(2).all(|w| w[1] >= w[0]));
    for svg in ["toy_lambda.svg", "toy_loss.svg"] {
        let text = fs::read_to_string(dir.path().join(svg)).unwrap();
        assert!(text.contains(r#"viewBox="0 0 800 500""#) && text.contains("<polyline"));
    }
    assert!(dir.path().join("toy_params.json").exists());
}

#[test]
fn bad_toy_flags_exit_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = fgmhd(dir.path(), &["train-toy", "--epochs", "30", "--mu", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    let out = fgmhd(dir.path(), &["train-toy", "--epochs", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(file_names(dir.path()).is_empty());
}

#[test]
fn sweep_mmds_has_the_five_grid_rows() {
    let dir = tempfile::tempdir().unwrap();
    ok(&fgmhd(dir.path(), &["sweep-mmds"]));
    let (header, rows) = records(&fs::read_to_string(dir.path().join("mmds_sweep.csv")).unwrap());
    assert_eq!(header.join(","), "mu,gamma,final_loss,smoothness,convergence_epoch");
    let grid: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap()))
        .collect();
    assert_eq!(grid, [(0.9, 0.5), (0.9, 1.0), (0.9, 5.0), (0.8, 1.0), (0.95, 1.0)]);
    let smooth = |i: usize| rows[i][3].parse::<f64>().unwrap();
    assert!(smooth(2) > smooth(1));
}

#[test]
fn sample_single_tau_keeps_only_passing_rows() {
    let dir = tempfile::tempdir().unwrap();
    ok(&fgmhd(dir.path(), &["train-toy"]));
    let params = dir.path().join("toy_params.json");
    ok(&fgmhd(
        dir.path(),
        &["sample", "--params", params.to_str().unwrap(), "--tau", "1.55", "--n", "30", "--save-images"],
    ));
    let (header, rows) = records(&fs::read_to_string(dir.path().join("samples.csv")).unwrap());
    assert_eq!(header, ["slot", "dimension"]);
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r[1].parse::<f64>().unwrap() >= 1.55));
    let pgms = file_names(dir.path()).into_iter().filter(|n| n.starts_with("sample_")).count();
    assert_eq!(pgms, rows.len());
}

#[test]
fn sample_exhaustion_exits_4_without_output() {
    let dir = tempfile::tempdir().unwrap();
    ok(&fgmhd(dir.path(), &["train-toy", "--epochs", "30"]));
    let params = dir.path().join("toy_params.json");
    let before = file_names(dir.path());
    let out = fgmhd(
        dir.path(),
        &["sample", "--params", params.to_str().unwrap(), "--tau", "2.0", "--n", "3", "--max-retries", "2"],
    );
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(file_names(dir.path()), before);
}

#[test]
fn sample_sweep_and_thread_count_agree() {
    let dir = tempfile::tempdir().unwrap();
    ok(&fgmhd(dir.path(), &["train-toy", "--epochs", "100"]));
    let params = dir.path().join("toy_params.json");
    let p = params.to_str().unwrap();
    let taus = "1.2,1.4,1.5,1.6";
    ok(&fgmhd(dir.path(), &["sample", "--params", p, "--taus", taus, "--n", "20"]));
    let one = fs::read(dir.path().join("sample_sweep.csv")).unwrap();
    ok(&fgmhd(dir.path(), &["--threads", "3", "sample", "--params", p, "--taus", taus, "--n", "20"]));
    let three = fs::read(dir.path().join("sample_sweep.csv")).unwrap();
    assert_eq!(one, three);
    let (header, rows) = records(&String::from_utf8(one).unwrap());
    assert_eq!(header.join(","), "tau,n_attempted,n_kept,fill_rate,mean_hd,mean_retries,hamming_diversity,hd_coverage");
    assert_eq!(rows.len(), 4);
    let out = fgmhd(dir.path(), &["sample", "--params", p, "--taus", "1.6,1.2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_env_var_sets_the_default_seed() {
    let dir = tempfile::tempdir().unwrap();
    let run = |env: Option<&str>, extra: &[&str]| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_fgmhd"));
        cmd.arg("--out-dir").arg(dir.path()).args(extra);
        cmd.args(["train-toy", "--epochs", "25"]).env_remove("FGMHD_SEED");
        if let Some(v) = env {
            cmd.env("FGMHD_SEED", v);
        }
        ok(&cmd.output().unwrap());
        fs::read(dir.path().join("toy_trace.csv")).unwrap()
    };
    let via_env = run(Some("7"), &[]);
    let via_flag = run(None, &["--seed", "7"]);
    let default = run(None, &[]);
    assert_eq!(via_env, via_flag);
    assert_ne!(via_env, default);
}
