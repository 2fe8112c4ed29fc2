use std::fs;
use std::path::{Path, PathBuf};

use fgmhd::bench;
use fgmhd::classical::{self, EstimatorConfig, Method};
use fgmhd::image::ImageGrid;
use fgmhd::regressor::{self, PreparedSet, TrainHyper};
use fgmhd::rng;
use fgmhd::sampling::{self, SamplingConfig, SWEEP_HEADER};
use fgmhd::scheduler::{ExpSchedule, MmdsConfig};
use fgmhd::synth::{self, CanonicalKind, DatasetManifest, DatasetSpec};
use fgmhd::toy::{self, CascadeParams, HdEstimator, HybridLossRecord, Schedule, SpsaConfig, ToyConfig, ToyRun, TRACE_HEADER};

use crate::error::CliError;
use crate::output::Staged;
use crate::svg::{self, Series};
use crate::{
    BenchArgs, EstimateArgs, Global, SampleArgs, ScheduleArg, SweepArgs, SynthArgs, ToyArgs, TrainRegressorArgs,
    TrainToyArgs,
};

type CmdResult = Result<(), CliError>;

/// The grid of (mu, gamma) pairs compared by `sweep-mmds`.
pub const MMDS_GRID: [(f64, f64); 5] = [(0.9, 0.5), (0.9, 1.0), (0.9, 5.0), (0.8, 1.0), (0.95, 1.0)];
pub const MMDS_SWEEP_HEADER: &str = "mu,gamma,final_loss,smoothness,convergence_epoch";
pub const ESTIMATE_HEADER: &str = "path,method,dimension,r_squared";
pub const ABLATION_HEADER: &str = "kernels,holdout_loss,infer_ms";
pub const SAMPLES_HEADER: &str = "slot,dimension";
pub const REGRESSOR_CURVE_HEADER: &str = "epoch,train_mse";

fn csv_bytes<I>(header: &str, rows: I) -> Result<Vec<u8>, CliError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header.split(','))?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

fn num(x: f64) -> String {
    x.to_string()
}

fn finite_or(x: f64, what: &str) -> Result<f64, CliError> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(CliError::Numerical(format!("{what} is not finite")))
    }
}

fn report(written: &[PathBuf]) {
    for p in written {
        eprintln!("wrote {}", p.display());
    }
}

fn load_manifest(path: &Path) -> Result<DatasetManifest, CliError> {
    Ok(DatasetManifest::load(path)?)
}

pub fn synth(g: &Global, a: &SynthArgs) -> CmdResult {
    if a.kind == "dataset" {
        let spec = DatasetSpec {
            canonical: a.canonical,
            ifs: a.ifs,
            cascade: a.cascade,
            size: a.size,
            ifs_points: a.ifs_points,
        };
        fs::create_dir_all(&g.out_dir).map_err(|e| CliError::io(&g.out_dir, e))?;
        // Render into a scratch directory; nothing reaches out_dir on failure.
        let scratch = tempfile::tempdir_in(&g.out_dir).map_err(|e| CliError::io(&g.out_dir, e))?;
        let manifest = synth::synth_dataset(&spec, scratch.path(), g.seed)?;
        let mut staged = Staged::new();
        for entry in &manifest.entries {
            let bytes = fs::read(manifest.image_path(entry)).map_err(|e| CliError::io(&manifest.image_path(entry), e))?;
            staged.add(g.out_dir.join(&entry.path), bytes);
        }
        let manifest_path = scratch.path().join(synth::MANIFEST_FILE);
        let bytes = fs::read(&manifest_path).map_err(|e| CliError::io(&manifest_path, e))?;
        staged.add(g.out_dir.join(synth::MANIFEST_FILE), bytes);
        let n = manifest.entries.len();
        staged.commit()?;
        println!("{n} images and {} in {}", synth::MANIFEST_FILE, g.out_dir.display());
        return Ok(());
    }
    let kind: CanonicalKind = a.kind.parse()?;
    let depth = a.depth.unwrap_or_else(|| a.size.trailing_zeros());
    let (img, dim) = synth::canonical(kind, a.size, depth)?;
    let name = a.name.clone().unwrap_or_else(|| format!("{kind}.pgm"));
    let path = g.out_dir.join(name);
    let mut staged = Staged::new();
    staged.add(&path, img.encode_pgm());
    staged.commit()?;
    println!("{},{kind},{dim}", path.display());
    Ok(())
}

pub fn estimate(g: &Global, a: &EstimateArgs) -> CmdResult {
    let model = match (&a.method, &a.model) {
        (Method::Regressor, Some(p)) => Some(regressor::load_weights(p)?),
        (Method::Regressor, None) => return Err(CliError::Config("method regressor needs --model".into())),
        _ => None,
    };
    let images: Vec<ImageGrid> = a
        .paths
        .iter()
        .map(|p| ImageGrid::load_pgm(p).map_err(CliError::from))
        .collect::<Result<_, _>>()?;
    let results = bench::parallel_map(images.len(), g.threads, |i| {
        let img = &images[i];
        match &model {
            Some(m) => regressor::predict(m, img).map(|d| (d, f64::NAN)),
            None => {
                let cfg = EstimatorConfig::for_side(img.width().min(img.height()));
                classical::estimate(a.method, img, &cfg, rng::derive(g.seed, &[i as u64]))
                    .map(|e| (e.dimension, e.r_squared))
            }
        }
    });
    let mut rows = Vec::new();
    for (path, result) in a.paths.iter().zip(results) {
        let (d, r2) = match result {
            Ok(v) => v,
            Err(e) if a.skip_failures => {
                eprintln!("{}: {e}", path.display());
                (f64::NAN, f64::NAN)
            }
            Err(e) => {
                return Err(match CliError::from(e) {
                    CliError::Numerical(m) => CliError::Numerical(format!("{}: {m}", path.display())),
                    other => other,
                })
            }
        };
        rows.push(vec![path.display().to_string(), a.method.to_string(), num(d), num(r2)]);
    }
    let bytes = csv_bytes(ESTIMATE_HEADER, rows)?;
    print!("{}", String::from_utf8_lossy(&bytes));
    Ok(())
}

pub fn bench(g: &Global, a: &BenchArgs) -> CmdResult {
    let manifest = load_manifest(&a.manifest)?;
    let methods: Vec<Method> = match &a.methods {
        Some(m) => m.clone(),
        None => {
            let mut m = vec![Method::Box, Method::Spectrum, Method::Perimeter, Method::Sandbox];
            if a.model.is_some() {
                m.push(Method::Regressor);
            }
            m
        }
    };
    if methods.contains(&Method::Regressor) && a.model.is_none() {
        return Err(CliError::Config("method regressor needs --model".into()));
    }
    let model = a.model.as_ref().map(regressor::load_weights).transpose()?;
    let rows = bench::run_bench(&manifest, &methods, model.as_ref(), g.seed, g.threads)?;
    let mut staged = Staged::new();
    staged.add(g.out_dir.join(&a.out), bench::to_csv(&rows));
    let written = staged.commit()?;
    println!("rank,method,mae,mean_runtime_ms,n_images,n_failed");
    for (i, r) in bench::ranking(&rows).iter().enumerate() {
        println!(
            "{},{},{:.4},{:.3},{},{}",
            i + 1,
            r.method,
            r.mae,
            r.mean_runtime_ms,
            r.n_images,
            r.n_failed
        );
    }
    report(&written);
    Ok(())
}

pub fn train_regressor(g: &Global, a: &TrainRegressorArgs) -> CmdResult {
    let manifest = load_manifest(&a.manifest)?;
    let data = PreparedSet::from_manifest(&manifest)?;
    let hyper = TrainHyper {
        lr: a.lr,
        momentum: a.momentum,
        batch: a.batch,
        epochs: a.epochs,
    };
    if !(hyper.lr >= 0.0) || !(0.0..1.0).contains(&hyper.momentum) || hyper.batch == 0 || hyper.epochs == 0 {
        return Err(CliError::Config("need lr >= 0, momentum in [0, 1), batch >= 1, epochs >= 1".into()));
    }
    let mut model = regressor::init_model_with(&a.kernels, g.seed)?;
    let rep = regressor::train_prepared(&mut model, &data, &hyper, g.seed)?;
    finite_or(rep.holdout_mae, "holdout MAE")?;
    finite_or(rep.train_mse, "training MSE")?;

    let mut staged = Staged::new();
    staged.add(g.out_dir.join(&a.weights), regressor::encode_weights(&model));
    let curve: Vec<(f64, f64)> = rep.loss_curve.iter().enumerate().map(|(i, &l)| ((i + 1) as f64, l)).collect();
    staged.add(
        g.out_dir.join("regressor_loss.csv"),
        csv_bytes(
            REGRESSOR_CURVE_HEADER,
            curve.iter().map(|&(e, l)| vec![num(e), num(l)]),
        )?,
    );
    staged.add(
        g.out_dir.join("regressor_loss.svg"),
        svg::line_plot(
            &format!("regressor training ({})", regressor::kernel_label(&a.kernels)),
            "epoch",
            "train MSE",
            &[Series::new("train MSE", curve)],
        ),
    );
    if a.ablation {
        let sets: Vec<Vec<usize>> = vec![vec![3], vec![5], vec![7], vec![3, 5, 7]];
        let rows = regressor::kernel_ablation(&data, &sets, &hyper, g.seed)?;
        staged.add(
            g.out_dir.join("ablation.csv"),
            csv_bytes(
                ABLATION_HEADER,
                rows.iter()
                    .map(|(r, _)| vec![r.kernels.clone(), num(r.holdout_loss), format!("{:.4}", r.infer_ms)]),
            )?,
        );
    }
    let written = staged.commit()?;
    println!(
        "kernels {} train {} holdout {} | train_mse {:.5} holdout_mae {:.4} holdout_mse {:.5} | {:.1}s",
        regressor::kernel_label(&a.kernels),
        rep.n_train,
        rep.n_holdout,
        rep.train_mse,
        rep.holdout_mae,
        rep.holdout_mse,
        rep.wall_time
    );
    report(&written);
    Ok(())
}

fn toy_config(a: &ToyArgs, schedule: Schedule) -> ToyConfig {
    let mut cfg = ToyConfig::new(
        toy::sierpinski_references(a.references, a.dropout, a.reference_seed),
        a.target,
        schedule,
    );
    cfg.epochs = a.epochs;
    cfg.n_samples = a.n_samples;
    cfg.spsa = SpsaConfig {
        step: a.spsa_step,
        perturb: a.spsa_perturb,
        decay: a.spsa_decay,
    };
    cfg
}

fn validate_toy(a: &ToyArgs) -> CmdResult {
    if a.references < 2 || !(0.0..1.0).contains(&a.dropout) || !(0.0..=2.0).contains(&a.target) {
        return Err(CliError::Config("need references >= 2, dropout in [0, 1), target in [0, 2]".into()));
    }
    Ok(())
}

fn run_toy(a: &ToyArgs, schedule: Schedule, seed: u64) -> Result<ToyRun, CliError> {
    let run = toy::train_toy(&toy_config(a, schedule), seed)?;
    if run.records.iter().any(|r| !r.l_total.is_finite() || !r.lambda.is_finite()) {
        return Err(CliError::Numerical("toy training diverged".into()));
    }
    Ok(run)
}

fn trace_csv(records: &[HybridLossRecord]) -> Result<Vec<u8>, CliError> {
    csv_bytes(
        TRACE_HEADER,
        records.iter().map(|r| {
            vec![
                r.epoch.to_string(),
                num(r.lambda),
                num(r.m),
                num(r.l_gen),
                num(r.l_hd),
                num(r.l_total),
                num(r.l_val),
                num(r.mean_hd_gen),
            ]
        }),
    )
}

fn curve(records: &[HybridLossRecord], f: impl Fn(&HybridLossRecord) -> f64) -> Vec<(f64, f64)> {
    records.iter().map(|r| (r.epoch as f64, f(r))).collect()
}

fn summary_line(name: &str, run: &ToyRun) -> Result<String, CliError> {
    let s = toy::summarize(&run.records)?;
    let last = run.records.last().expect("at least one epoch");
    Ok(format!(
        "{name}: final_loss {:.5} smoothness {:.4e} convergence {} | final lambda {:.4} l_gen {:.5} |HD-target| {:.4}",
        s.final_loss,
        s.smoothness,
        s.convergence_epoch.map_or("-".to_string(), |e| e.to_string()),
        last.lambda,
        last.l_gen,
        last.l_hd
    ))
}

/// Final weight of an MMDS(0.9, 1.0) run, used to scale the exponential
/// baseline so both schedules end at the same weight.
fn calibrated_exp(a: &ToyArgs, seed: u64) -> Result<(ExpSchedule, Option<ToyRun>), CliError> {
    if let Some(l) = a.lambda_final {
        let mut e = ExpSchedule::new(a.epochs, l);
        e.rate = a.exp_rate;
        return Ok((e, None));
    }
    let mmds = run_toy(a, Schedule::Mmds(MmdsConfig { mu: 0.9, gamma: 1.0, epochs: a.epochs }), seed)?;
    let mut e = ExpSchedule::new(a.epochs, mmds.records.last().expect("epochs >= 1").lambda);
    e.rate = a.exp_rate;
    Ok((e, Some(mmds)))
}

pub fn train_toy(g: &Global, a: &TrainToyArgs) -> CmdResult {
    let t = &a.toy;
    validate_toy(t)?;
    let mmds_cfg = MmdsConfig { mu: a.mu, gamma: a.gamma, epochs: t.epochs };
    let runs: Vec<(&str, ToyRun)> = match a.schedule {
        ScheduleArg::Mmds => vec![("mmds", run_toy(t, Schedule::Mmds(mmds_cfg), g.seed)?)],
        ScheduleArg::None => vec![("none", run_toy(t, Schedule::None, g.seed)?)],
        ScheduleArg::Exp => {
            let (e, _) = calibrated_exp(t, g.seed)?;
            vec![("exp", run_toy(t, Schedule::Exp(e), g.seed)?)]
        }
        ScheduleArg::Compare => {
            let mmds = run_toy(t, Schedule::Mmds(mmds_cfg), g.seed)?;
            let e = match t.lambda_final {
                Some(_) => calibrated_exp(t, g.seed)?.0,
                None => {
                    let mut e = ExpSchedule::new(t.epochs, mmds.records.last().expect("epochs >= 1").lambda);
                    e.rate = t.exp_rate;
                    e
                }
            };
            let exp = run_toy(t, Schedule::Exp(e), g.seed)?;
            vec![("mmds", mmds), ("exp", exp)]
        }
    };
    let mut staged = Staged::new();
    let single = runs.len() == 1;
    for (name, run) in &runs {
        let file = if single { "toy_trace.csv".to_string() } else { format!("toy_trace_{name}.csv") };
        staged.add(g.out_dir.join(file), trace_csv(&run.records)?);
    }
    let lambda: Vec<Series> = runs.iter().map(|(n, r)| Series::new(*n, curve(&r.records, |x| x.lambda))).collect();
    let loss: Vec<Series> = runs.iter().map(|(n, r)| Series::new(*n, curve(&r.records, |x| x.l_total))).collect();
    staged.add(g.out_dir.join("toy_lambda.svg"), svg::line_plot("hybrid loss weight", "epoch", "lambda", &lambda));
    staged.add(g.out_dir.join("toy_loss.svg"), svg::line_plot("total loss", "epoch", "L_total", &loss));
    let params = serde_json::to_string_pretty(&runs[0].1.params).expect("params serialize") + "\n";
    staged.add(g.out_dir.join("toy_params.json"), params);
    let mut lines = Vec::new();
    for (name, run) in &runs {
        lines.push(summary_line(name, run)?);
    }
    let written = staged.commit()?;
    for l in lines {
        println!("{l}");
    }
    report(&written);
    Ok(())
}

pub fn sweep_mmds(g: &Global, a: &SweepArgs) -> CmdResult {
    let t = &a.toy;
    validate_toy(t)?;
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for (mu, gamma) in MMDS_GRID {
        let run = run_toy(t, Schedule::Mmds(MmdsConfig { mu, gamma, epochs: t.epochs }), g.seed)?;
        let s = toy::summarize(&run.records)?;
        rows.push(vec![
            num(mu),
            num(gamma),
            num(s.final_loss),
            num(s.smoothness),
            s.convergence_epoch.map_or(String::new(), |e| e.to_string()),
        ]);
        series.push(Series::new(format!("mu={mu} gamma={gamma}"), curve(&run.records, |x| x.l_total)));
    }
    let mut staged = Staged::new();
    staged.add(g.out_dir.join("mmds_sweep.csv"), csv_bytes(MMDS_SWEEP_HEADER, rows.clone())?);
    staged.add(
        g.out_dir.join("mmds_sweep.svg"),
        svg::line_plot("total loss across (mu, gamma)", "epoch", "L_total", &series),
    );
    let written = staged.commit()?;
    println!("{MMDS_SWEEP_HEADER}");
    for r in rows {
        println!("{}", r.join(","));
    }
    report(&written);
    Ok(())
}

pub fn sample(g: &Global, a: &SampleArgs) -> CmdResult {
    let params: CascadeParams = match &a.params {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?
        }
        None => {
            validate_toy(&a.toy)?;
            let cfg = MmdsConfig { mu: 0.9, gamma: 1.0, epochs: a.toy.epochs };
            run_toy(&a.toy, Schedule::Mmds(cfg), g.seed)?.params
        }
    };
    let estimator = match &a.model {
        Some(p) => HdEstimator::Regressor(Box::new(regressor::load_weights(p)?)),
        None => HdEstimator::BoxCounting,
    };
    let base = SamplingConfig {
        max_retries_per_slot: a.max_retries,
        estimator,
        threads: g.threads,
        ..SamplingConfig::new(0.0, a.n)
    };
    if a.n == 0 {
        return Err(CliError::Config("--n must be >= 1".into()));
    }
    let mut staged = Staged::new();
    let summary;
    match (&a.tau, &a.taus) {
        (Some(tau), None) => {
            if !(0.0..=2.0).contains(tau) {
                return Err(CliError::Config(format!("tau {tau} outside [0, 2]")));
            }
            let cfg = SamplingConfig { tau: *tau, ..base };
            let set = sampling::rejection_sample(&params, &cfg, g.seed)?;
            staged.add(
                g.out_dir.join("samples.csv"),
                csv_bytes(SAMPLES_HEADER, set.kept.iter().map(|k| vec![k.slot.to_string(), num(k.hd)]))?,
            );
            if a.save_images {
                for k in &set.kept {
                    staged.add(g.out_dir.join(format!("sample_{:04}.pgm", k.slot)), k.image.encode_pgm());
                }
            }
            summary = format!(
                "tau {tau}: kept {}/{} slots, {} attempts, mean retries {:.3}",
                set.kept.len(),
                a.n,
                set.attempts,
                set.mean_retries()
            );
        }
        (None, Some(taus)) => {
            if taus.iter().any(|t| !(0.0..=2.0).contains(t)) {
                return Err(CliError::Config("every tau must lie in [0, 2]".into()));
            }
            let rows = sampling::threshold_sweep(&params, taus, a.n, &base, g.seed)?;
            staged.add(
                g.out_dir.join("sample_sweep.csv"),
                csv_bytes(
                    SWEEP_HEADER,
                    rows.iter().map(|r| {
                        vec![
                            num(r.tau),
                            r.n_attempted.to_string(),
                            r.n_kept.to_string(),
                            num(r.fill_rate),
                            num(r.mean_hd),
                            num(r.mean_retries),
                            num(r.hamming_diversity),
                            num(r.hd_coverage),
                        ]
                    }),
                )?,
            );
            let pick = |f: fn(&sampling::SweepRow) -> f64| rows.iter().map(|r| (r.tau, f(r))).collect::<Vec<_>>();
            staged.add(
                g.out_dir.join("sample_sweep.svg"),
                svg::line_plot(
                    "threshold sweep",
                    "tau",
                    "value",
                    &[
                        Series::new("hd_coverage", pick(|r| r.hd_coverage)),
                        Series::new("hamming_diversity", pick(|r| r.hamming_diversity)),
                        Series::new("fill_rate", pick(|r| r.fill_rate)),
                    ],
                ),
            );
            summary = format!("{} thresholds, {} slots each", rows.len(), a.n);
        }
        _ => return Err(CliError::Config("give exactly one of --tau or --taus".into())),
    }
    let written = staged.commit()?;
    println!("{summary}");
    report(&written);
    Ok(())
}
