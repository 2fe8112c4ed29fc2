//! Per-method accuracy and runtime over a labeled dataset.
//!
//! Every method is run over the same images; failures (e.g. too few islands
//! for perimeter-area) are counted and excluded from the mean absolute
//! error rather than scored as zero. The regressor is only scored on the
//! holdout split so it is never evaluated on images it was trained on.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use crate::classical::{self, EstimatorConfig, Method};
use crate::error::{Error, Result};
use crate::image::ImageGrid;
use crate::regressor::{self, RegressorModel};
use crate::rng;
use crate::synth::{DatasetManifest, Family};

pub const BENCH_HEADER: &str = "method,dataset,n_images,mae,mean_runtime_ms";

/// Name of the pseudo-family row aggregating every image.
pub const ALL_FAMILIES: &str = "all";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: Method,
    pub dataset: String,
    /// Images that produced an estimate (the MAE denominator).
    pub n_images: usize,
    pub n_failed: usize,
    pub mae: f64,
    pub mean_runtime_ms: f64,
}

impl BenchRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.4}",
            self.method, self.dataset, self.n_images, self.mae, self.mean_runtime_ms
        )
    }
}

#[derive(Debug, Clone)]
struct Outcome {
    family: Family,
    abs_error: Option<f64>,
    ms: f64,
}

/// Maps `f` over `0..n` on up to `threads` workers, returning results in
/// index order regardless of scheduling.
pub fn parallel_map<T, F>(n: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let value = f(i);
                slots.lock().expect("worker panicked")[i] = Some(value);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|v| v.expect("every index is filled"))
        .collect()
}

/// Runs each method over the manifest. `model` is required iff
/// `methods` contains [`Method::Regressor`]. Rows come out per method in
/// the given order: one per family present, then an [`ALL_FAMILIES`] row.
pub fn run_bench(
    manifest: &DatasetManifest,
    methods: &[Method],
    model: Option<&RegressorModel>,
    seed: u64,
    threads: usize,
) -> Result<Vec<BenchRow>> {
    if manifest.entries.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if methods.contains(&Method::Regressor) && model.is_none() {
        return Err(Error::InvalidArgument("the regressor method needs --model".into()));
    }
    let images: Vec<ImageGrid> = manifest
        .entries
        .iter()
        .map(|e| manifest.load_image(e))
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for &method in methods {
        let outcomes: Vec<Option<Outcome>> = parallel_map(images.len(), threads, |i| {
            let entry = &manifest.entries[i];
            if method == Method::Regressor && !regressor::is_holdout(&entry.id) {
                return None;
            }
            let img = &images[i];
            let started = Instant::now();
            let estimate = match method {
                Method::Regressor => regressor::predict(model.expect("checked above"), img),
                m => {
                    let cfg = EstimatorConfig::for_side(img.width().min(img.height()));
                    classical::estimate(m, img, &cfg, rng::derive(seed, &[i as u64])).map(|e| e.dimension)
                }
            };
            let ms = started.elapsed().as_secs_f64() * 1e3;
            Some(Outcome {
                family: entry.family,
                abs_error: estimate.ok().map(|d| (d - entry.hd_label).abs()),
                ms,
            })
        });
        let outcomes: Vec<Outcome> = outcomes.into_iter().flatten().collect();
        let mut families: Vec<Family> = outcomes.iter().map(|o| o.family).collect();
        families.sort();
        families.dedup();
        for family in families {
            let subset: Vec<&Outcome> = outcomes.iter().filter(|o| o.family == family).collect();
            rows.push(summarize(method, family.as_str(), &subset));
        }
        rows.push(summarize(method, ALL_FAMILIES, &outcomes.iter().collect::<Vec<_>>()));
    }
    Ok(rows)
}

fn summarize(method: Method, dataset: &str, outcomes: &[&Outcome]) -> BenchRow {
    let errors: Vec<f64> = outcomes.iter().filter_map(|o| o.abs_error).collect();
    let mae = if errors.is_empty() {
        f64::NAN
    } else {
        errors.iter().sum::<f64>() / errors.len() as f64
    };
    let mean_runtime_ms = if outcomes.is_empty() {
        f64::NAN
    } else {
        outcomes.iter().map(|o| o.ms).sum::<f64>() / outcomes.len() as f64
    };
    BenchRow {
        method,
        dataset: dataset.to_string(),
        n_images: errors.len(),
        n_failed: outcomes.len() - errors.len(),
        mae,
        mean_runtime_ms,
    }
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(BENCH_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.csv_line());
    }
    out
}

/// The aggregate rows sorted by ascending MAE (failed-everywhere methods last).
pub fn ranking(rows: &[BenchRow]) -> Vec<&BenchRow> {
    let mut all: Vec<&BenchRow> = rows.iter().filter(|r| r.dataset == ALL_FAMILIES).collect();
    all.sort_by(|a, b| a.mae.total_cmp(&b.mae));
    all
}
