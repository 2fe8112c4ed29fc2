//! Non-learning Hausdorff-dimension estimators and the log-log regression
//! kernel they share.
//!
//! Every estimator returns an [`HdEstimate`] carrying the fitted line and
//! the `(log scale, log measure)` points it was fitted to, so callers can
//! inspect the scaling range rather than trusting a single number.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng as _;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, ImageGrid};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Box,
    Spectrum,
    Perimeter,
    Sandbox,
    Regressor,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Box,
        Method::Spectrum,
        Method::Perimeter,
        Method::Sandbox,
        Method::Regressor,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Box => "box",
            Method::Spectrum => "spectrum",
            Method::Perimeter => "perimeter",
            Method::Sandbox => "sandbox",
            Method::Regressor => "regressor",
        }
    }

    pub fn is_learning(self) -> bool {
        self == Method::Regressor
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HdEstimate {
    pub dimension: f64,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub scale_points: Vec<(f64, f64)>,
    pub method: Method,
    /// Wall-clock seconds spent inside the estimator.
    pub runtime: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub binarize_threshold: f64,
    /// Box sides run over `2^min_scale_exp ..= 2^max_scale_exp`.
    pub min_scale_exp: u32,
    pub max_scale_exp: u32,
    pub sandbox_centers: usize,
    /// Fitting band for the power spectrum, as fractions of the Nyquist radius.
    pub spectrum_band: (f64, f64),
}

impl EstimatorConfig {
    /// Defaults for a square image of the given side: boxes from 2 px up to
    /// a quarter of the side.
    pub fn for_side(side: usize) -> Self {
        let log2 = usize::BITS - 1 - side.max(1).leading_zeros();
        Self {
            max_scale_exp: log2.saturating_sub(2).max(2),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_scale_exp >= self.max_scale_exp {
            return Err(Error::InvalidArgument(format!(
                "min_scale_exp {} must be below max_scale_exp {}",
                self.min_scale_exp, self.max_scale_exp
            )));
        }
        if self.sandbox_centers == 0 {
            return Err(Error::InvalidArgument("sandbox_centers must be positive".into()));
        }
        let (lo, hi) = self.spectrum_band;
        if !(lo > 0.0 && lo < hi && hi <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "spectrum band ({lo}, {hi}) must satisfy 0 < low < high <= 1"
            )));
        }
        Ok(())
    }
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            binarize_threshold: 0.5,
            min_scale_exp: 1,
            max_scale_exp: 6,
            sandbox_centers: 100,
            spectrum_band: (0.05, 0.5),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares on `(x, y)` pairs. A series with zero total
/// variance in `y` fits perfectly, so its `r_squared` is 1.
pub fn loglog_fit(points: &[(f64, f64)]) -> Result<LineFit> {
    if points.len() < 3 {
        return Err(Error::DegenerateAbscissa);
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::DegenerateAbscissa);
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = points
        .iter()
        .map(|p| (p.1 - slope * p.0 - intercept).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(LineFit {
        slope,
        intercept,
        r_squared,
    })
}

fn finish(
    method: Method,
    points: Vec<(f64, f64)>,
    to_dimension: impl Fn(f64) -> f64,
    started: Instant,
) -> Result<HdEstimate> {
    let fit = loglog_fit(&points)?;
    let dimension = to_dimension(fit.slope);
    if !dimension.is_finite() {
        return Err(Error::DegenerateAbscissa);
    }
    Ok(HdEstimate {
        dimension,
        slope: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        scale_points: points,
        method,
        runtime: started.elapsed().as_secs_f64(),
    })
}

/// Number of `2^k`-sided boxes (grid anchored at the origin, partial
/// boxes at the right and bottom edges included) that contain at least
/// one set bit, for each `k` in `min_exp..=max_exp`.
pub fn box_counts(mask: &BinaryMask, min_exp: u32, max_exp: u32) -> Vec<(u32, usize)> {
    let (mut w, mut h) = (mask.width(), mask.height());
    let mut level: Vec<bool> = mask.bits().to_vec();
    let mut out = Vec::new();
    for k in 0..=max_exp {
        if k >= min_exp {
            out.push((k, level.iter().filter(|&&b| b).count()));
        }
        if k == max_exp {
            break;
        }
        // OR-reduce 2x2 blocks.
        let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
        let mut next = vec![false; nw * nh];
        for y in 0..h {
            let row = &level[y * w..(y + 1) * w];
            let dst = &mut next[(y / 2) * nw..(y / 2 + 1) * nw];
            for (x, &b) in row.iter().enumerate() {
                dst[x / 2] |= b;
            }
        }
        level = next;
        w = nw;
        h = nh;
    }
    out
}

/// Box-counting dimension: slope of `ln N(eps)` against `ln(1/eps)`.
pub fn box_counting(image: &ImageGrid, cfg: &EstimatorConfig) -> Result<HdEstimate> {
    let started = Instant::now();
    cfg.validate()?;
    let side = image.width().min(image.height());
    if side < (1usize << cfg.max_scale_exp) {
        return Err(Error::ImageTooSmall {
            side,
            max_exp: cfg.max_scale_exp,
        });
    }
    let mask = image.binarize(cfg.binarize_threshold);
    if mask.count() == 0 {
        return Err(Error::EmptySet);
    }
    let points = box_counts(&mask, cfg.min_scale_exp, cfg.max_scale_exp)
        .into_iter()
        .map(|(k, n)| (-(k as f64) * std::f64::consts::LN_2, (n as f64).ln()))
        .collect();
    finish(Method::Box, points, |s| s.clamp(0.0, 2.0), started)
}

/// In-place 2-D FFT of a row-major `n x n` buffer.
fn fft2(buf: &mut [Complex<f64>], n: usize) {
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    for row in buf.chunks_exact_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); n];
    for x in 0..n {
        for y in 0..n {
            col[y] = buf[y * n + x];
        }
        fft.process(&mut col);
        for y in 0..n {
            buf[y * n + x] = col[y];
        }
    }
}

/// Radially averaged power spectrum. Returns `(radius, mean power)` for
/// every integer radius bin from 1 up to the Nyquist radius `n / 2`.
pub fn radial_power_spectrum(image: &ImageGrid) -> Result<Vec<(f64, f64)>> {
    if !image.is_square_pow2() {
        return Err(Error::NonSquare {
            width: image.width(),
            height: image.height(),
        });
    }
    let n = image.width();
    let mean = image.mean();
    if image.pixels().iter().all(|&p| p == image.pixels()[0]) {
        return Err(Error::ConstantImage);
    }
    let mut buf: Vec<Complex<f64>> = image
        .pixels()
        .iter()
        .map(|&p| Complex::new(p - mean, 0.0))
        .collect();
    fft2(&mut buf, n);
    let half = n / 2;
    let mut sums = vec![0.0; half + 1];
    let mut counts = vec![0usize; half + 1];
    let signed = |i: usize| if i <= half { i as f64 } else { i as f64 - n as f64 };
    for v in 0..n {
        for u in 0..n {
            let r = signed(u).hypot(signed(v)).round() as usize;
            if (1..=half).contains(&r) {
                sums[r] += buf[v * n + u].norm_sqr();
                counts[r] += 1;
            }
        }
    }
    Ok((1..=half)
        .filter(|&r| counts[r] > 0)
        .map(|r| (r as f64, sums[r] / counts[r] as f64))
        .collect())
}

/// Spectral-slope estimate. With `P(f) ~ f^-beta` over the configured
/// band, the intensity surface has dimension `(8 - beta) / 2` (clamped to
/// `[2, 3]`), and the reported planar dimension is one less.
pub fn power_spectrum(image: &ImageGrid, cfg: &EstimatorConfig) -> Result<HdEstimate> {
    let started = Instant::now();
    cfg.validate()?;
    let spectrum = radial_power_spectrum(image)?;
    let nyquist = (image.width() / 2) as f64;
    let (lo, hi) = (cfg.spectrum_band.0 * nyquist, cfg.spectrum_band.1 * nyquist);
    let points: Vec<(f64, f64)> = spectrum
        .into_iter()
        .filter(|&(r, p)| r >= lo && r <= hi && p > 0.0)
        .map(|(r, p)| (r.ln(), p.ln()))
        .collect();
    finish(
        Method::Spectrum,
        points,
        |slope| {
            let beta = -slope;
            ((8.0 - beta) / 2.0).clamp(2.0, 3.0) - 1.0
        },
        started,
    )
}

/// A connected component: pixel count and boundary edge count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Island {
    pub area: usize,
    pub perimeter: usize,
}

/// 8-connected components, with the perimeter counted as the number of
/// pixel edges facing background (4-neighbourhood; outside the image is
/// background).
pub fn islands(mask: &BinaryMask) -> Vec<Island> {
    let (w, h) = (mask.width(), mask.height());
    let bits = mask.bits();
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    let on = |x: isize, y: isize| {
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && bits[y as usize * w + x as usize]
    };
    for start in 0..w * h {
        if !bits[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut island = Island {
            area: 0,
            perimeter: 0,
        };
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            island.area += 1;
            island.perimeter += [(1, 0), (-1, 0), (0, 1), (0, -1)]
                .iter()
                .filter(|(dx, dy)| !on(x + dx, y + dy))
                .count();
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if on(nx, ny) {
                        let j = ny as usize * w + nx as usize;
                        if !seen[j] {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        out.push(island);
    }
    out
}

pub const MIN_ISLANDS: usize = 5;
pub const MIN_ISLAND_AREA: usize = 10;

/// Perimeter-area scaling: `P ~ A^(D/2)` across islands.
pub fn perimeter_area(image: &ImageGrid, cfg: &EstimatorConfig) -> Result<HdEstimate> {
    let started = Instant::now();
    cfg.validate()?;
    let mask = image.binarize(cfg.binarize_threshold);
    let points: Vec<(f64, f64)> = islands(&mask)
        .into_iter()
        .filter(|i| i.area >= MIN_ISLAND_AREA)
        .map(|i| ((i.area as f64).ln(), (i.perimeter as f64).ln()))
        .collect();
    if points.len() < MIN_ISLANDS {
        return Err(Error::InsufficientIslands {
            found: points.len(),
            needed: MIN_ISLANDS,
            min_area: MIN_ISLAND_AREA,
        });
    }
    finish(
        Method::Perimeter,
        points,
        |s| (2.0 * s).clamp(0.0, 2.0),
        started,
    )
}

/// Summed-area table with a zero first row and column.
struct Integral {
    w: usize,
    sums: Vec<u32>,
}

impl Integral {
    fn new(mask: &BinaryMask) -> Self {
        let (w, h) = (mask.width() + 1, mask.height() + 1);
        let mut sums = vec![0u32; w * h];
        for y in 1..h {
            let mut row = 0;
            for x in 1..w {
                row += u32::from(mask.get(x - 1, y - 1));
                sums[y * w + x] = sums[(y - 1) * w + x] + row;
            }
        }
        Self { w, sums }
    }

    /// Set bits in `[x0, x1) x [y0, y1)`.
    fn count(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> u32 {
        let s = |x: usize, y: usize| self.sums[y * self.w + x];
        s(x1, y1) + s(x0, y0) - s(x0, y1) - s(x1, y0)
    }
}

/// Smallest admissible outer sandbox radius; guarantees radii {2, 4, 8}.
const MIN_SANDBOX_RADIUS: usize = 8;

/// Sandbox method. Centers are sampled without replacement from occupied
/// pixels at least `r_max` from every border; `M(r)` is the mean occupied
/// count in the `(2r + 1)`-square window around them for
/// `r = 2, 4, ..., r_max`. The dimension is the slope of `ln M` against
/// `ln(2r + 1)`, the log of the window side, so that a filled plane gives
/// exactly 2 and a straight line exactly 1.
pub fn sandbox(image: &ImageGrid, cfg: &EstimatorConfig, seed: u64) -> Result<HdEstimate> {
    let started = Instant::now();
    cfg.validate()?;
    let mask = image.binarize(cfg.binarize_threshold);
    let occupied = mask.count();
    if occupied == 0 {
        return Err(Error::EmptySet);
    }
    if occupied < cfg.sandbox_centers {
        return Err(Error::TooSparse {
            needed: cfg.sandbox_centers,
            available: occupied,
        });
    }
    let (w, h) = (mask.width(), mask.height());
    let mut r_max = (1usize << cfg.max_scale_exp.saturating_sub(1)).min((w.min(h) - 1) / 2);
    let eligible = loop {
        if r_max < MIN_SANDBOX_RADIUS {
            return Err(Error::TooSparse {
                needed: cfg.sandbox_centers,
                available: 0,
            });
        }
        let pts: Vec<(usize, usize)> = (r_max..h - r_max)
            .flat_map(|y| (r_max..w - r_max).map(move |x| (x, y)))
            .filter(|&(x, y)| mask.get(x, y))
            .collect();
        if pts.len() >= cfg.sandbox_centers {
            break pts;
        }
        if r_max / 2 < MIN_SANDBOX_RADIUS {
            return Err(Error::TooSparse {
                needed: cfg.sandbox_centers,
                available: pts.len(),
            });
        }
        r_max /= 2;
    };
    let mut rng = rng::seeded(seed);
    let mut pool = eligible;
    for i in 0..cfg.sandbox_centers {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    let centers = &pool[..cfg.sandbox_centers];
    let table = Integral::new(&mask);
    let mut points = Vec::new();
    let mut r = 2;
    while r <= r_max {
        let total: u64 = centers
            .iter()
            .map(|&(x, y)| u64::from(table.count(x - r, y - r, x + r + 1, y + r + 1)))
            .sum();
        let m = total as f64 / centers.len() as f64;
        points.push((((2 * r + 1) as f64).ln(), m.ln()));
        r *= 2;
    }
    finish(Method::Sandbox, points, |s| s.clamp(0.0, 2.0), started)
}

/// Dispatches to a classical estimator. `seed` is only used by the sandbox.
pub fn estimate(method: Method, image: &ImageGrid, cfg: &EstimatorConfig, seed: u64) -> Result<HdEstimate> {
    match method {
        Method::Box => box_counting(image, cfg),
        Method::Spectrum => power_spectrum(image, cfg),
        Method::Perimeter => perimeter_area(image, cfg),
        Method::Sandbox => sandbox(image, cfg, seed),
        Method::Regressor => Err(Error::InvalidArgument(
            "the regressor needs a trained model; use regressor::predict".into(),
        )),
    }
}
