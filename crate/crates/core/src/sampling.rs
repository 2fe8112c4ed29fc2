//! Dimension-thresholded rejection sampling with regeneration, and the
//! threshold sweep used to study how the threshold trades fill rate for
//! diversity.

use serde::{Deserialize, Serialize};

use crate::bench::parallel_map;
use crate::error::{Error, Result};
use crate::image::ImageGrid;
use crate::rng;
use crate::toy::{self, CascadeParams, HdEstimator};

pub const DEFAULT_MAX_RETRIES: usize = 50;
pub const COVERAGE_BINS: usize = 20;
pub const SWEEP_HEADER: &str = "tau,n_attempted,n_kept,fill_rate,mean_hd,mean_retries,hamming_diversity,hd_coverage";

/// A seeded source of images: the same seed must give the same image.
pub trait SampleSource {
    fn generate(&self, seed: u64) -> ImageGrid;
}

impl SampleSource for CascadeParams {
    fn generate(&self, seed: u64) -> ImageGrid {
        toy::cascade_generate(self, seed)
    }
}

impl<F: Fn(u64) -> ImageGrid> SampleSource for F {
    fn generate(&self, seed: u64) -> ImageGrid {
        self(seed)
    }
}

#[derive(Debug, Clone)]
pub struct SamplingConfig {
    pub tau: f64,
    pub batch: usize,
    pub max_retries_per_slot: usize,
    pub estimator: HdEstimator,
    /// Worker count for filling slots; results are identical for any value.
    pub threads: usize,
}

impl SamplingConfig {
    /// Clamps `tau` into `[0, 2]`.
    pub fn new(tau: f64, batch: usize) -> Self {
        Self {
            tau: tau.clamp(0.0, 2.0),
            batch,
            max_retries_per_slot: DEFAULT_MAX_RETRIES,
            estimator: HdEstimator::BoxCounting,
            threads: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=2.0).contains(&self.tau) {
            return Err(Error::InvalidArgument(format!("tau {} outside [0, 2]", self.tau)));
        }
        if self.batch == 0 {
            return Err(Error::InvalidArgument("batch must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeptSample {
    pub slot: usize,
    pub image: ImageGrid,
    pub hd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    /// Accepted samples in slot order.
    pub kept: Vec<KeptSample>,
    pub attempts: usize,
    pub rejected: usize,
    /// Regenerations per slot (0 when the first draw was accepted).
    pub per_slot_retries: Vec<usize>,
    /// Slots whose retry budget ran out without an acceptance.
    pub unfilled: Vec<usize>,
}

impl SampleSet {
    pub fn fill_rate(&self) -> f64 {
        self.kept.len() as f64 / self.per_slot_retries.len().max(1) as f64
    }

    pub fn mean_retries(&self) -> f64 {
        let n = self.per_slot_retries.len().max(1) as f64;
        self.per_slot_retries.iter().sum::<usize>() as f64 / n
    }
}

/// Partitions `dimensions` by `d >= tau`, preserving order.
pub fn partition_by_threshold(dimensions: &[f64], tau: f64) -> (Vec<usize>, Vec<usize>) {
    (0..dimensions.len()).partition(|&i| dimensions[i] >= tau)
}

/// Estimates every image and splits the batch into kept and rejected
/// indices. Degenerate images estimate as 0 and are therefore rejected
/// for any positive threshold.
pub fn hd_filter(batch: &[ImageGrid], tau: f64, estimator: &HdEstimator) -> Result<(Vec<usize>, Vec<usize>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let dims = batch.iter().map(|img| estimator.estimate(img)).collect::<Result<Vec<_>>>()?;
    Ok(partition_by_threshold(&dims, tau.clamp(0.0, 2.0)))
}

/// Seed of attempt `attempt` in slot `slot`; shared across thresholds so a
/// sweep compares thresholds on one underlying stream of draws.
pub fn attempt_seed(seed: u64, slot: usize, attempt: usize) -> u64 {
    rng::derive(seed, &[slot as u64, attempt as u64])
}

/// Outcome of one slot: the kept sample (if any) and the attempts spent.
struct SlotOutcome {
    kept: Option<KeptSample>,
    attempts: usize,
}

fn fill_slot<S: SampleSource + ?Sized>(source: &S, cfg: &SamplingConfig, seed: u64, slot: usize) -> Result<SlotOutcome> {
    for attempt in 0..=cfg.max_retries_per_slot {
        let image = source.generate(attempt_seed(seed, slot, attempt));
        let hd = cfg.estimator.estimate(&image)?;
        if hd >= cfg.tau {
            return Ok(SlotOutcome {
                kept: Some(KeptSample { slot, image, hd }),
                attempts: attempt + 1,
            });
        }
    }
    Ok(SlotOutcome {
        kept: None,
        attempts: cfg.max_retries_per_slot + 1,
    })
}

fn sample_slots<S: SampleSource + Sync + ?Sized>(source: &S, cfg: &SamplingConfig, seed: u64) -> Result<SampleSet> {
    cfg.validate()?;
    let outcomes = parallel_map(cfg.batch, cfg.threads, |slot| fill_slot(source, cfg, seed, slot));
    let mut set = SampleSet {
        kept: Vec::new(),
        attempts: 0,
        rejected: 0,
        per_slot_retries: Vec::with_capacity(cfg.batch),
        unfilled: Vec::new(),
    };
    for (slot, outcome) in outcomes.into_iter().enumerate() {
        let outcome = outcome?;
        set.attempts += outcome.attempts;
        // An exhausted slot spends its whole budget of retries.
        set.per_slot_retries.push(outcome.attempts - 1);
        match outcome.kept {
            Some(k) => {
                set.rejected += outcome.attempts - 1;
                set.kept.push(k);
            }
            None => {
                set.rejected += outcome.attempts;
                set.unfilled.push(slot);
            }
        }
    }
    Ok(set)
}

/// Fills each of `cfg.batch` slots by regenerating from fresh derived seeds
/// until the estimate reaches `cfg.tau` or the retry budget is spent.
/// Exhausted slots are listed in `unfilled`; if every slot exhausts, the
/// call fails with `AllSlotsExhausted`.
pub fn rejection_sample<S: SampleSource + Sync + ?Sized>(source: &S, cfg: &SamplingConfig, seed: u64) -> Result<SampleSet> {
    let set = sample_slots(source, cfg, seed)?;
    if set.kept.is_empty() {
        return Err(Error::AllSlotsExhausted);
    }
    Ok(set)
}

/// Mean pairwise normalized Hamming distance (pixels binarized at 0.5).
pub fn hamming_diversity(images: &[&ImageGrid]) -> f64 {
    if images.len() < 2 {
        return 0.0;
    }
    let packed: Vec<Vec<u64>> = images
        .iter()
        .map(|img| {
            let mut words = vec![0u64; img.pixels().len().div_ceil(64)];
            for (i, &v) in img.pixels().iter().enumerate() {
                if v > 0.5 {
                    words[i / 64] |= 1 << (i % 64);
                }
            }
            words
        })
        .collect();
    let n_bits = images[0].pixels().len() as f64;
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..packed.len() {
        for j in i + 1..packed.len() {
            let d: u32 = packed[i].iter().zip(&packed[j]).map(|(a, b)| (a ^ b).count_ones()).sum();
            total += f64::from(d) / n_bits;
            pairs += 1;
        }
    }
    total / pairs as f64
}

/// Fraction of the 20 equal-width bins of `[1, 2]` holding at least one value.
pub fn hd_coverage(dimensions: &[f64]) -> f64 {
    let mut bins = [false; COVERAGE_BINS];
    for &d in dimensions {
        if (1.0..=2.0).contains(&d) {
            let b = (((d - 1.0) * COVERAGE_BINS as f64) as usize).min(COVERAGE_BINS - 1);
            bins[b] = true;
        }
    }
    bins.iter().filter(|&&b| b).count() as f64 / COVERAGE_BINS as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub n_attempted: usize,
    pub n_kept: usize,
    pub fill_rate: f64,
    /// NaN when nothing was kept.
    pub mean_hd: f64,
    pub mean_retries: f64,
    pub hamming_diversity: f64,
    pub hd_coverage: f64,
}

impl SweepRow {
    fn from_set(tau: f64, set: &SampleSet) -> Self {
        let dims: Vec<f64> = set.kept.iter().map(|k| k.hd).collect();
        let images: Vec<&ImageGrid> = set.kept.iter().map(|k| &k.image).collect();
        Self {
            tau,
            n_attempted: set.attempts,
            n_kept: set.kept.len(),
            fill_rate: set.fill_rate(),
            mean_hd: if dims.is_empty() { f64::NAN } else { crate::stats::mean(&dims) },
            mean_retries: set.mean_retries(),
            hamming_diversity: hamming_diversity(&images),
            hd_coverage: hd_coverage(&dims),
        }
    }
}

/// Runs rejection sampling at each threshold with the same per-slot seed
/// stream. Thresholds at which no slot fills yield a row with `n_kept = 0`.
pub fn threshold_sweep<S: SampleSource + Sync + ?Sized>(
    source: &S,
    taus: &[f64],
    n_per_tau: usize,
    base: &SamplingConfig,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if taus.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("thresholds must be sorted ascending".into()));
    }
    taus.iter()
        .map(|&tau| {
            let cfg = SamplingConfig {
                tau: tau.clamp(0.0, 2.0),
                batch: n_per_tau,
                ..base.clone()
            };
            Ok(SweepRow::from_set(tau, &sample_slots(source, &cfg, seed)?))
        })
        .collect()
}
