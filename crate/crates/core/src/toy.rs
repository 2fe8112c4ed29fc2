//! Desk-scale recursive generator and its hybrid-loss training loop.
//!
//! The generator is a two-level stochastic subdivision cascade: a 4x4 base
//! grid is sampled from per-cell Bernoulli logits, then every cell expands
//! into a 4x4 child block whose cells are sampled from a rule chosen by the
//! parent's occupancy. Two subdivisions take 4x4 to 64x64.
//!
//! Training minimizes `L_total = L_gen + lambda(t) * L_HD`. `L_gen` is the
//! exact cascade negative log-likelihood of the references' OR-pyramids,
//! differentiated analytically; `L_HD` is a sampled, non-differentiable
//! dimension error whose gradient is estimated by simultaneous perturbation.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::classical::{self, EstimatorConfig};
use crate::error::{Error, Result};
use crate::image::ImageGrid;
use crate::regressor::{self, RegressorModel};
use crate::rng;
use crate::scheduler::{self, ExpSchedule, MmdsConfig, SchedulerState};
use crate::stats;
use crate::synth::{self, DatasetManifest, Family};

pub const BLOCK: usize = 4;
pub const CELLS: usize = BLOCK * BLOCK;
pub const LEVELS: usize = 3;
pub const SIDE: usize = 64;
/// Grid side of each pyramid level, coarsest first.
pub const LEVEL_SIDES: [usize; LEVELS] = [4, 16, 64];
pub const N_PARAMS: usize = CELLS + 2 * 2 * CELLS;
/// Logit used for "never" / "always" in hand-built rules.
pub const SATURATED_LOGIT: f64 = 50.0;

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeParams {
    pub level0_logits: [f64; CELLS],
    /// `level_rules[l][s][pos]`: logit of child `pos` at subdivision `l + 1`
    /// given parent occupancy `s` (0 = empty, 1 = occupied).
    pub level_rules: [[[f64; CELLS]; 2]; 2],
}

impl Default for CascadeParams {
    fn default() -> Self {
        Self::uniform(0.0)
    }
}

impl CascadeParams {
    pub fn uniform(logit: f64) -> Self {
        Self {
            level0_logits: [logit; CELLS],
            level_rules: [[[logit; CELLS]; 2]; 2],
        }
    }

    /// Flattened as level-0 logits, then level 1 (empty, occupied), then
    /// level 2 (empty, occupied).
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.level0_logits.to_vec();
        for level in &self.level_rules {
            for rule in level {
                v.extend_from_slice(rule);
            }
        }
        v
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != N_PARAMS {
            return Err(Error::ShapeMismatch(format!(
                "{} cascade parameters, expected {N_PARAMS}",
                v.len()
            )));
        }
        let mut p = Self::default();
        p.level0_logits.copy_from_slice(&v[..CELLS]);
        for l in 0..2 {
            for s in 0..2 {
                let at = CELLS + (l * 2 + s) * CELLS;
                p.level_rules[l][s].copy_from_slice(&v[at..at + CELLS]);
            }
        }
        Ok(p)
    }

    /// Hand-built parameters: level 0 uses `base`, both subdivisions use
    /// `occupied` under occupied parents and nothing under empty ones.
    pub fn deterministic(base: &[bool; CELLS], occupied: &[bool; CELLS]) -> Self {
        let logit = |b: bool| if b { SATURATED_LOGIT } else { -SATURATED_LOGIT };
        let rule = occupied.map(logit);
        Self {
            level0_logits: base.map(logit),
            level_rules: [[[-SATURATED_LOGIT; CELLS], rule]; 2],
        }
    }

    /// Parameters that reproduce the `x & y == 0` Sierpinski raster exactly.
    pub fn sierpinski() -> Self {
        let pattern: [bool; CELLS] = std::array::from_fn(|i| (i % BLOCK) & (i / BLOCK) == 0);
        Self::deterministic(&pattern, &pattern)
    }
}

/// Occupancy of the three cascade levels, coarsest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pyramid {
    pub levels: [Vec<bool>; LEVELS],
}

impl Pyramid {
    /// OR-pyramid of a 64x64 image: a parent cell is occupied iff any of its
    /// 4x4 children is. Pixels `> 0.5` count as occupied.
    pub fn encode(img: &ImageGrid) -> Result<Self> {
        if img.width() != SIDE || img.height() != SIDE {
            return Err(Error::ShapeMismatch(format!(
                "cascade images are {SIDE}x{SIDE}, got {}x{}",
                img.width(),
                img.height()
            )));
        }
        let fine: Vec<bool> = img.pixels().iter().map(|&v| v > 0.5).collect();
        let mid = or_reduce(&fine, SIDE);
        let coarse = or_reduce(&mid, SIDE / BLOCK);
        Ok(Self {
            levels: [coarse, mid, fine],
        })
    }

    pub fn finest(&self) -> ImageGrid {
        let pixels = self.levels[2].iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        ImageGrid::new(SIDE, SIDE, pixels).expect("pyramid finest level is 64x64")
    }
}

fn or_reduce(cells: &[bool], side: usize) -> Vec<bool> {
    let out_side = side / BLOCK;
    let mut out = vec![false; out_side * out_side];
    for y in 0..side {
        for x in 0..side {
            if cells[y * side + x] {
                out[(y / BLOCK) * out_side + x / BLOCK] = true;
            }
        }
    }
    out
}

/// Position of a cell within its parent's 4x4 block.
fn block_pos(x: usize, y: usize) -> usize {
    (y % BLOCK) * BLOCK + x % BLOCK
}

/// Samples one 64x64 binary image; deterministic per seed.
pub fn cascade_generate(params: &CascadeParams, seed: u64) -> ImageGrid {
    let mut rng = rng::seeded(seed);
    let mut occ: Vec<bool> = params
        .level0_logits
        .iter()
        .map(|&z| rng.gen::<f64>() < logistic(z))
        .collect();
    let probs: [[[f64; CELLS]; 2]; 2] = params.level_rules.map(|l| l.map(|r| r.map(logistic)));
    for (l, side) in LEVEL_SIDES[1..].iter().copied().enumerate() {
        let parent_side = side / BLOCK;
        let mut next = vec![false; side * side];
        for y in 0..side {
            for x in 0..side {
                let parent = occ[(y / BLOCK) * parent_side + x / BLOCK] as usize;
                next[y * side + x] = rng.gen::<f64>() < probs[l][parent][block_pos(x, y)];
            }
        }
        occ = next;
    }
    ImageGrid::new(SIDE, SIDE, occ.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect())
        .expect("cascade output is 64x64")
}

/// Exact marginal occupancy probability of every cell at each level.
pub fn occupancy_probabilities(params: &CascadeParams) -> [Vec<f64>; LEVELS] {
    let p0: Vec<f64> = params.level0_logits.iter().map(|&z| logistic(z)).collect();
    let mut levels = vec![p0];
    for (l, side) in LEVEL_SIDES[1..].iter().copied().enumerate() {
        let parent = levels.last().expect("previous level");
        let parent_side = side / BLOCK;
        let mut next = vec![0.0; side * side];
        for y in 0..side {
            for x in 0..side {
                let pp = parent[(y / BLOCK) * parent_side + x / BLOCK];
                let pos = block_pos(x, y);
                next[y * side + x] = pp * logistic(params.level_rules[l][1][pos])
                    + (1.0 - pp) * logistic(params.level_rules[l][0][pos]);
            }
        }
        levels.push(next);
    }
    let mut it = levels.into_iter();
    [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()]
}

/// Sufficient statistics of a reference set for the cascade likelihood:
/// per parameter, the weighted number of occupied and empty observations.
#[derive(Debug, Clone, PartialEq)]
pub struct GenStats {
    ones: [f64; N_PARAMS],
    zeros: [f64; N_PARAMS],
}

impl GenStats {
    /// Each level contributes its per-cell mean NLL, and the three levels
    /// are averaged so every level carries equal weight; the result is
    /// then averaged over references.
    pub fn from_references(references: &[ImageGrid]) -> Result<Self> {
        if references.is_empty() {
            return Err(Error::EmptyReferenceSet);
        }
        let mut ones = [0.0; N_PARAMS];
        let mut zeros = [0.0; N_PARAMS];
        let r = references.len() as f64;
        for img in references {
            let pyr = Pyramid::encode(img)?;
            let w0 = 1.0 / (LEVELS as f64 * CELLS as f64 * r);
            for (i, &b) in pyr.levels[0].iter().enumerate() {
                if b { ones[i] += w0 } else { zeros[i] += w0 }
            }
            for l in 1..LEVELS {
                let side = LEVEL_SIDES[l];
                let parent_side = side / BLOCK;
                let w = 1.0 / (LEVELS as f64 * (side * side) as f64 * r);
                for y in 0..side {
                    for x in 0..side {
                        let s = pyr.levels[l - 1][(y / BLOCK) * parent_side + x / BLOCK] as usize;
                        let idx = CELLS + ((l - 1) * 2 + s) * CELLS + block_pos(x, y);
                        if pyr.levels[l][y * side + x] { ones[idx] += w } else { zeros[idx] += w }
                    }
                }
            }
        }
        Ok(Self { ones, zeros })
    }

    pub fn loss_and_gradient(&self, params: &CascadeParams) -> (f64, Vec<f64>) {
        let z = params.to_vec();
        let mut loss = 0.0;
        let mut grad = vec![0.0; N_PARAMS];
        for i in 0..N_PARAMS {
            // -ln sigma(z) = softplus(-z); -ln(1 - sigma(z)) = softplus(z)
            loss += self.ones[i] * softplus(-z[i]) + self.zeros[i] * softplus(z[i]);
            grad[i] = (self.ones[i] + self.zeros[i]) * logistic(z[i]) - self.ones[i];
        }
        (loss, grad)
    }
}

/// Mean cascade NLL (nats) of the references' OR-pyramids and its exact
/// gradient over the flattened logits.
pub fn gen_loss(params: &CascadeParams, references: &[ImageGrid]) -> Result<(f64, Vec<f64>)> {
    Ok(GenStats::from_references(references)?.loss_and_gradient(params))
}

/// Dimension estimator applied to generated samples.
#[derive(Debug, Clone, Default)]
pub enum HdEstimator {
    #[default]
    BoxCounting,
    Regressor(Box<RegressorModel>),
}

impl HdEstimator {
    pub fn name(&self) -> &'static str {
        match self {
            HdEstimator::BoxCounting => "box",
            HdEstimator::Regressor(_) => "regressor",
        }
    }

    /// Estimated dimension; degenerate images (empty set, too few scales)
    /// score 0. Regressor output is clamped to `[0, 2]`.
    pub fn estimate(&self, img: &ImageGrid) -> Result<f64> {
        match self {
            HdEstimator::BoxCounting => {
                let cfg = EstimatorConfig::for_side(img.width().min(img.height()));
                match classical::box_counting(img, &cfg) {
                    Ok(est) => Ok(est.dimension),
                    Err(Error::EmptySet | Error::DegenerateAbscissa) => Ok(0.0),
                    Err(e) => Err(e),
                }
            }
            HdEstimator::Regressor(model) => Ok(regressor::predict(model, img)?.clamp(0.0, 2.0)),
        }
    }
}

/// Dimensions of `n_samples` generated images with seeds derived from `seed`.
pub fn sample_dimensions(params: &CascadeParams, n_samples: usize, estimator: &HdEstimator, seed: u64) -> Result<Vec<f64>> {
    (0..n_samples)
        .map(|i| estimator.estimate(&cascade_generate(params, rng::derive(seed, &[i as u64]))))
        .collect()
}

/// Mean over `n_samples` generated images of `|HD(image) - hd_target|`.
pub fn hd_loss(params: &CascadeParams, hd_target: f64, n_samples: usize, estimator: &HdEstimator, seed: u64) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be >= 1".into()));
    }
    let dims = sample_dimensions(params, n_samples, estimator, seed)?;
    Ok(dims.iter().map(|d| (d - hd_target).abs()).sum::<f64>() / n_samples as f64)
}

/// Per-family lower median of the manifest labels.
pub fn compute_hd_targets(manifest: &DatasetManifest) -> Result<BTreeMap<Family, f64>> {
    let mut targets = BTreeMap::new();
    for (family, entries) in manifest.by_family() {
        let labels: Vec<f64> = entries.iter().map(|e| e.hd_label).collect();
        let median = stats::lower_median(&labels).ok_or_else(|| Error::EmptyFamily(family.as_str().to_string()))?;
        targets.insert(family, median);
    }
    if targets.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(targets)
}

/// Two-point simultaneous-perturbation estimate of `grad f(theta)`:
/// `(f(theta + c*delta) - f(theta - c*delta)) / (2c) * delta` with
/// Rademacher `delta` (so `1/delta_i = delta_i`).
pub fn spsa_estimate<F>(f: F, theta: &[f64], c: f64, rng: &mut rng::Rng) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let delta: Vec<f64> = theta.iter().map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
    let plus: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t + c * d).collect();
    let minus: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t - c * d).collect();
    let diff = (f(&plus)? - f(&minus)?) / (2.0 * c);
    Ok(delta.iter().map(|d| diff * d).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpsaConfig {
    /// Base step size `a` of `a_t = a / (1 + t)^decay`.
    pub step: f64,
    /// Perturbation half-width in logit units.
    pub perturb: f64,
    pub decay: f64,
}

impl Default for SpsaConfig {
    fn default() -> Self {
        Self {
            step: 20.0,
            perturb: 0.5,
            decay: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Schedule {
    Mmds(MmdsConfig),
    Exp(ExpSchedule),
    None,
}

impl Schedule {
    pub fn name(&self) -> &'static str {
        match self {
            Schedule::Mmds(_) => "mmds",
            Schedule::Exp(_) => "exp",
            Schedule::None => "none",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyConfig {
    pub references: Vec<ImageGrid>,
    pub hd_target: f64,
    pub schedule: Schedule,
    pub spsa: SpsaConfig,
    pub epochs: usize,
    /// Generated samples per `L_HD` evaluation.
    pub n_samples: usize,
    pub estimator: HdEstimator,
    pub init: CascadeParams,
}

impl ToyConfig {
    pub fn new(references: Vec<ImageGrid>, hd_target: f64, schedule: Schedule) -> Self {
        Self {
            references,
            hd_target,
            schedule,
            spsa: SpsaConfig::default(),
            epochs: 500,
            n_samples: 16,
            estimator: HdEstimator::BoxCounting,
            init: CascadeParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridLossRecord {
    pub epoch: usize,
    /// Weight in force during this epoch's update.
    pub lambda: f64,
    /// Scheduler momentum after this epoch (0 for non-MMDS schedules).
    pub m: f64,
    pub l_gen: f64,
    pub l_hd: f64,
    pub l_total: f64,
    pub l_val: f64,
    pub mean_hd_gen: f64,
    pub hd_target: f64,
}

pub const TRACE_HEADER: &str = "epoch,lambda,m,l_gen,l_hd,l_total,l_val,mean_hd_gen";

/// Validation membership of reference `index`: one in five by index hash.
pub fn is_validation(index: usize) -> bool {
    rng::derive(0x7a11, &[index as u64]).is_multiple_of(5)
}

#[derive(Debug, Clone)]
pub struct ToyRun {
    pub records: Vec<HybridLossRecord>,
    pub params: CascadeParams,
}

/// Per epoch: step the logits along `grad L_gen + lambda * g_HD`, evaluate
/// the losses at the new logits, then feed the validation loss to the
/// schedule to obtain the next epoch's weight.
pub fn train_toy(cfg: &ToyConfig, seed: u64) -> Result<ToyRun> {
    if cfg.epochs == 0 {
        return Err(Error::InvalidArgument("epochs must be >= 1".into()));
    }
    if cfg.n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be >= 1".into()));
    }
    if !(cfg.spsa.perturb > 0.0) || !(cfg.spsa.step > 0.0) {
        return Err(Error::InvalidArgument("SPSA step and perturbation must be positive".into()));
    }
    if let Schedule::Mmds(m) = &cfg.schedule {
        m.validate()?;
    }
    let (val, train): (Vec<_>, Vec<_>) = cfg
        .references
        .iter()
        .enumerate()
        .partition(|(i, _)| is_validation(*i));
    let train: Vec<ImageGrid> = train.into_iter().map(|(_, r)| r.clone()).collect();
    let val: Vec<ImageGrid> = val.into_iter().map(|(_, r)| r.clone()).collect();
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} references leave an empty train or validation split",
            cfg.references.len()
        )));
    }
    let train_stats = GenStats::from_references(&train)?;
    let val_stats = GenStats::from_references(&val)?;

    let mut theta = cfg.init.to_vec();
    let mut state = SchedulerState::default();
    let mut lambda = 0.0;
    let mut records = Vec::with_capacity(cfg.epochs);
    // Losses are evaluated on the same sample seeds every epoch, so epoch
    // to epoch changes in l_val reflect the parameters rather than fresh
    // sampling noise; the perturbation estimates draw new seeds each epoch.
    let eval_seed = rng::derive(seed, &[u64::MAX]);
    for epoch in 0..cfg.epochs {
        if let Schedule::Exp(e) = &cfg.schedule {
            lambda = scheduler::exp_lambda(epoch, e);
        }
        let params = CascadeParams::from_slice(&theta)?;
        let (_, mut grad) = train_stats.loss_and_gradient(&params);
        if lambda > 0.0 {
            let sample_seed = rng::derive(seed, &[epoch as u64, 1]);
            let mut spsa_rng = rng::seeded(rng::derive(seed, &[epoch as u64, 2]));
            let f = |t: &[f64]| hd_loss(&CascadeParams::from_slice(t)?, cfg.hd_target, cfg.n_samples, &cfg.estimator, sample_seed);
            let g_hd = spsa_estimate(f, &theta, cfg.spsa.perturb, &mut spsa_rng)?;
            for (g, h) in grad.iter_mut().zip(&g_hd) {
                *g += lambda * h;
            }
        }
        let a_t = cfg.spsa.step / (1.0 + epoch as f64).powf(cfg.spsa.decay);
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= a_t * g;
        }

        let params = CascadeParams::from_slice(&theta)?;
        let (l_gen, _) = train_stats.loss_and_gradient(&params);
        let (l_gen_val, _) = val_stats.loss_and_gradient(&params);
        let dims = sample_dimensions(&params, cfg.n_samples, &cfg.estimator, eval_seed)?;
        let l_hd = dims.iter().map(|d| (d - cfg.hd_target).abs()).sum::<f64>() / dims.len() as f64;
        let l_total = l_gen + lambda * l_hd;
        let l_val = l_gen_val + lambda * l_hd;
        if !l_total.is_finite() || !l_val.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite loss at epoch {epoch}")));
        }
        let used = lambda;
        if let Schedule::Mmds(m) = &cfg.schedule {
            state = scheduler::mmds_step(state, l_val, m)?;
            lambda = state.lambda;
        }
        records.push(HybridLossRecord {
            epoch,
            lambda: used,
            m: state.m,
            l_gen,
            l_hd,
            l_total,
            l_val,
            mean_hd_gen: stats::mean(&dims),
            hd_target: cfg.hd_target,
        });
    }
    Ok(ToyRun {
        records,
        params: CascadeParams::from_slice(&theta)?,
    })
}

/// `n` Sierpinski references: the `x & y == 0` raster under a random
/// symmetry of the square, with each occupied 4x4 block removed with
/// probability `block_dropout`.
pub fn sierpinski_references(n: usize, block_dropout: f64, seed: u64) -> Vec<ImageGrid> {
    let (base, _) = synth::canonical(synth::CanonicalKind::Sierpinski, SIDE, 6).expect("64 is a valid size");
    (0..n)
        .map(|i| {
            let mut rng = rng::seeded(rng::derive(seed, &[i as u64]));
            let mut img = synth::dihedral(&base, rng.gen_range(0..8));
            for by in 0..SIDE / BLOCK {
                for bx in 0..SIDE / BLOCK {
                    if rng.gen::<f64>() < block_dropout {
                        for y in by * BLOCK..(by + 1) * BLOCK {
                            for x in bx * BLOCK..(bx + 1) * BLOCK {
                                img.set(x, y, 0.0);
                            }
                        }
                    }
                }
            }
            img
        })
        .collect()
}

/// Mean of the last `window` values of `l_total`.
pub fn final_loss(records: &[HybridLossRecord], window: usize) -> f64 {
    let tail = &records[records.len().saturating_sub(window)..];
    tail.iter().map(|r| r.l_total).sum::<f64>() / tail.len().max(1) as f64
}

/// Summary metrics of a training trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub final_loss: f64,
    pub smoothness: f64,
    pub convergence_epoch: Option<usize>,
}

pub const CONVERGENCE_HORIZON: usize = 50;
pub const CONVERGENCE_TOL: f64 = 0.01;

pub fn summarize(records: &[HybridLossRecord]) -> Result<TraceSummary> {
    let totals: Vec<f64> = records.iter().map(|r| r.l_total).collect();
    let w = scheduler::DEFAULT_SMOOTHNESS_WINDOW;
    Ok(TraceSummary {
        final_loss: final_loss(records, w),
        smoothness: scheduler::smoothness(&totals, w)?,
        convergence_epoch: scheduler::convergence_epoch(&totals, w, CONVERGENCE_HORIZON, CONVERGENCE_TOL),
    })
}
