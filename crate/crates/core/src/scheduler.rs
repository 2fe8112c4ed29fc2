//! Loss-weight schedules for the hybrid objective
//! `L_total = L_gen + lambda(t) * L_HD`.
//!
//! [`mmds_step`] is the monotone momentum schedule: the weight only grows,
//! and it grows by a momentum-smoothed share of each epoch's improvement
//! in validation loss. [`exp_lambda`] is the fixed exponential baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmdsConfig {
    /// Momentum coefficient in `[0, 1]`.
    pub mu: f64,
    /// Scale applied to each validation-loss decrease; must be positive.
    pub gamma: f64,
    pub epochs: usize,
}

impl Default for MmdsConfig {
    fn default() -> Self {
        Self {
            mu: 0.9,
            gamma: 1.0,
            epochs: 1000,
        }
    }
}

impl MmdsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(Error::InvalidArgument(format!("mu {} outside [0, 1]", self.mu)));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidArgument(format!("gamma {} must be positive", self.gamma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SchedulerState {
    pub lambda: f64,
    pub m: f64,
    pub l_prev: f64,
    pub epoch: usize,
}

/// One epoch of the schedule:
///
/// ```text
/// dL     = max(0, l_prev - l_val)
/// m      = mu * m + (1 - mu) * gamma * dL
/// lambda = lambda + m
/// l_prev = l_val
/// ```
pub fn mmds_step(state: SchedulerState, l_val: f64, cfg: &MmdsConfig) -> Result<SchedulerState> {
    if !(l_val >= 0.0) || !l_val.is_finite() {
        return Err(Error::NegativeLoss(l_val));
    }
    cfg.validate()?;
    let delta = (state.l_prev - l_val).max(0.0);
    let m = cfg.mu * state.m + (1.0 - cfg.mu) * cfg.gamma * delta;
    Ok(SchedulerState {
        lambda: state.lambda + m,
        m,
        l_prev: l_val,
        epoch: state.epoch + 1,
    })
}

/// Runs [`mmds_step`] over a whole loss trace, returning every state.
pub fn mmds_trace(losses: &[f64], cfg: &MmdsConfig) -> Result<Vec<SchedulerState>> {
    let mut state = SchedulerState::default();
    losses
        .iter()
        .map(|&l| {
            state = mmds_step(state, l, cfg)?;
            Ok(state)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpSchedule {
    pub epochs: usize,
    pub lambda_final: f64,
    /// Curvature; larger values push growth towards the final epochs.
    pub rate: f64,
}

impl ExpSchedule {
    pub const DEFAULT_RATE: f64 = 5.0;

    pub fn new(epochs: usize, lambda_final: f64) -> Self {
        Self {
            epochs,
            lambda_final,
            rate: Self::DEFAULT_RATE,
        }
    }
}

/// `lambda_final * (e^(k t / E) - 1) / (e^k - 1)`; exactly 0 at `t = 0`
/// and exactly `lambda_final` at `t = E`.
pub fn exp_lambda(t: usize, cfg: &ExpSchedule) -> f64 {
    if cfg.epochs == 0 || t >= cfg.epochs {
        return cfg.lambda_final;
    }
    if t == 0 {
        return 0.0;
    }
    let k = cfg.rate;
    cfg.lambda_final * (k * t as f64 / cfg.epochs as f64).exp_m1() / k.exp_m1()
}

/// Mean over all stride-1 windows of length `window` of the within-window
/// sample variance. Lower is smoother.
pub fn smoothness(losses: &[f64], window: usize) -> Result<f64> {
    if window < 2 || losses.len() < window {
        return Err(Error::SeriesTooShort {
            len: losses.len(),
            window,
        });
    }
    let scores: Vec<f64> = losses.windows(window).map(stats::sample_variance).collect();
    Ok(stats::mean(&scores))
}

pub const DEFAULT_SMOOTHNESS_WINDOW: usize = 20;

/// First epoch after which the moving-averaged series (window `window`)
/// changes by less than `rel_tol` relative to its value over the following
/// `horizon` epochs, for every later epoch as well. `None` if it never settles.
pub fn convergence_epoch(losses: &[f64], window: usize, horizon: usize, rel_tol: f64) -> Option<usize> {
    let smooth = stats::moving_average(losses, window);
    if smooth.len() <= horizon {
        return None;
    }
    let settled = |t: usize| {
        let (a, b) = (smooth[t], smooth[t + horizon]);
        (b - a).abs() <= rel_tol * a.abs().max(f64::EPSILON)
    };
    let last = smooth.len() - horizon;
    let mut first = None;
    for t in (0..last).rev() {
        if settled(t) {
            first = Some(t);
        } else {
            break;
        }
    }
    first
}
