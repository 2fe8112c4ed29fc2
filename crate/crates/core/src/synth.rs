//! Labeled fractal images: canonical constructions, IFS attractors rendered
//! with the chaos game, random multiplicative cascades, and dataset assembly.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::classical::{self, EstimatorConfig};
use crate::error::{Error, Result};
use crate::image::ImageGrid;
use crate::rng;

/// Iterates discarded before the chaos game starts plotting.
pub const BURN_IN: usize = 100;

/// Solves the Moran equation `sum(r_i^D) = 1` for `D` by bisection.
pub fn moran_dimension(ratios: &[f64]) -> Result<f64> {
    if ratios.is_empty() {
        return Err(Error::EmptyRatios);
    }
    if let Some(&r) = ratios.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
        return Err(Error::RatioOutOfRange(r));
    }
    let residual = |d: f64| ratios.iter().map(|r| r.powf(d)).sum::<f64>() - 1.0;
    if ratios.len() == 1 {
        return Ok(0.0);
    }
    // residual is strictly decreasing with residual(0) = n - 1 > 0.
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while residual(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let r = residual(mid);
        if r == 0.0 {
            return Ok(mid);
        }
        if r > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    Ok(if residual(lo).abs() < residual(mid).abs() {
        lo
    } else {
        mid
    })
}

/// `x -> [[a, b], [c, d]] x + (e, f)` in unit-square coordinates, chosen
/// with probability `weight`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
    pub weight: f64,
}

impl AffineMap {
    /// Uniform scaling by `r` followed by a translation.
    pub fn similarity(r: f64, e: f64, f: f64, weight: f64) -> Self {
        Self {
            a: r,
            b: 0.0,
            c: 0.0,
            d: r,
            e,
            f,
            weight,
        }
    }

    #[inline]
    pub fn apply(&self, (x, y): (f64, f64)) -> (f64, f64) {
        (
            self.a * x + self.b * y + self.e,
            self.c * x + self.d * y + self.f,
        )
    }

    /// Largest singular value of the linear part.
    pub fn spectral_norm(&self) -> f64 {
        let (a, b, c, d) = (self.a, self.b, self.c, self.d);
        let s = a * a + b * b + c * c + d * d;
        let det = a * d - b * c;
        let disc = (s * s - 4.0 * det * det).max(0.0).sqrt();
        (0.5 * (s + disc)).sqrt()
    }

    /// Contraction ratio if the linear part is a scaled orthogonal matrix.
    pub fn similarity_ratio(&self) -> Option<f64> {
        let col0 = self.a.hypot(self.c);
        let col1 = self.b.hypot(self.d);
        let dot = self.a * self.b + self.c * self.d;
        let tol = 1e-12 * col0.max(col1).max(1.0);
        ((col0 - col1).abs() <= tol && dot.abs() <= tol).then_some(col0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IfsSystem {
    pub name: String,
    pub maps: Vec<AffineMap>,
}

impl IfsSystem {
    pub fn new(name: impl Into<String>, maps: Vec<AffineMap>) -> Result<Self> {
        let ifs = Self {
            name: name.into(),
            maps,
        };
        ifs.validate()?;
        Ok(ifs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.maps.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "IFS {} needs at least 2 maps",
                self.name
            )));
        }
        for (index, m) in self.maps.iter().enumerate() {
            if !(0.0..=1.0).contains(&m.weight) {
                return Err(Error::InvalidArgument(format!(
                    "map {index} weight {} outside [0, 1]",
                    m.weight
                )));
            }
            let norm = m.spectral_norm();
            if !(norm < 1.0) {
                return Err(Error::NonContractiveMap { index, norm });
            }
        }
        let total: f64 = self.maps.iter().map(|m| m.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "map weights sum to {total}, expected 1"
            )));
        }
        Ok(())
    }

    /// Right-angle Sierpinski triangle: three half-scale copies.
    pub fn sierpinski() -> Self {
        let w = 1.0 / 3.0;
        Self {
            name: "sierpinski".into(),
            maps: vec![
                AffineMap::similarity(0.5, 0.0, 0.0, w),
                AffineMap::similarity(0.5, 0.5, 0.0, w),
                AffineMap::similarity(0.5, 0.0, 0.5, w),
            ],
        }
    }

    /// Contraction ratios if every map is a similarity.
    pub fn similarity_ratios(&self) -> Option<Vec<f64>> {
        self.maps.iter().map(AffineMap::similarity_ratio).collect()
    }
}

/// Renders an IFS attractor. Starting from (0.5, 0.5), each step draws a
/// uniform number and applies the first map whose cumulative weight
/// exceeds it, in listed order. The first [`BURN_IN`] iterates are
/// discarded; each of the next `n_points` marks its pixel with 1.0.
pub fn chaos_game(ifs: &IfsSystem, n_points: usize, size: usize, seed: u64) -> Result<ImageGrid> {
    ifs.validate()?;
    if n_points == 0 {
        return Err(Error::InvalidArgument("n_points must be >= 1".into()));
    }
    if size < 16 {
        return Err(Error::InvalidArgument(format!("size {size} < 16")));
    }
    let cumulative: Vec<f64> = ifs
        .maps
        .iter()
        .scan(0.0, |acc, m| {
            *acc += m.weight;
            Some(*acc)
        })
        .collect();
    let last = ifs.maps.len() - 1;
    let mut rng = rng::seeded(seed);
    let mut img = ImageGrid::zeros(size, size);
    let mut p = (0.5, 0.5);
    let scale = size as f64;
    for step in 0..BURN_IN + n_points {
        let u: f64 = rng.gen();
        let idx = cumulative.iter().position(|&c| u < c).unwrap_or(last);
        p = ifs.maps[idx].apply(p);
        if step >= BURN_IN {
            // The unit square is closed: points on its far edges land in
            // the last pixel row or column.
            let (x, y) = (p.0 * scale, p.1 * scale);
            let eps = 1e-9 * scale;
            if x >= -eps && y >= -eps && x <= scale + eps && y <= scale + eps {
                let px = (x.max(0.0) as usize).min(size - 1);
                let py = (y.max(0.0) as usize).min(size - 1);
                img.set(px, py, 1.0);
            }
        }
    }
    Ok(img)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CanonicalKind {
    Sierpinski,
    KochCurve,
    CantorDust,
    FilledSquare,
    Line,
}

impl CanonicalKind {
    pub const ALL: [CanonicalKind; 5] = [
        CanonicalKind::Sierpinski,
        CanonicalKind::KochCurve,
        CanonicalKind::CantorDust,
        CanonicalKind::FilledSquare,
        CanonicalKind::Line,
    ];

    pub fn dimension(self) -> f64 {
        match self {
            CanonicalKind::Sierpinski => 3f64.ln() / 2f64.ln(),
            CanonicalKind::KochCurve | CanonicalKind::CantorDust => 4f64.ln() / 3f64.ln(),
            CanonicalKind::FilledSquare => 2.0,
            CanonicalKind::Line => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CanonicalKind::Sierpinski => "sierpinski",
            CanonicalKind::KochCurve => "koch_curve",
            CanonicalKind::CantorDust => "cantor_dust",
            CanonicalKind::FilledSquare => "filled_square",
            CanonicalKind::Line => "line",
        }
    }
}

impl fmt::Display for CanonicalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CanonicalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CanonicalKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnsupportedKind(s.to_string()))
    }
}

/// Deterministic rasterization of a canonical fractal, paired with its
/// analytic dimension. `size` must be a power of two >= 64.
pub fn canonical(kind: CanonicalKind, size: usize, depth: u32) -> Result<(ImageGrid, f64)> {
    if !size.is_power_of_two() || size < 64 {
        return Err(Error::InvalidArgument(format!(
            "size {size} must be a power of two >= 64"
        )));
    }
    if depth == 0 {
        return Err(Error::InvalidArgument("depth must be >= 1".into()));
    }
    let img = match kind {
        CanonicalKind::FilledSquare => ImageGrid::filled(size, size, 1.0),
        CanonicalKind::Line => {
            let mut img = ImageGrid::zeros(size, size);
            for x in 0..size {
                img.set(x, size / 2, 1.0);
            }
            img
        }
        CanonicalKind::Sierpinski => sierpinski_raster(size, depth),
        CanonicalKind::CantorDust => cantor_dust_raster(size, depth),
        CanonicalKind::KochCurve => koch_curve_raster(size, depth),
    };
    Ok((img, kind.dimension()))
}

/// Block `(i, j)` of a `2^depth` grid is filled iff `i & j == 0`.
fn sierpinski_raster(size: usize, depth: u32) -> ImageGrid {
    let depth = depth.min(size.trailing_zeros());
    let block = size >> depth;
    let mut img = ImageGrid::zeros(size, size);
    for y in 0..size {
        for x in 0..size {
            if (x / block) & (y / block) == 0 {
                img.set(x, y, 1.0);
            }
        }
    }
    img
}

/// Four-corner Cantor dust with ratio 1/3, sampled at pixel centres.
fn cantor_dust_raster(size: usize, depth: u32) -> ImageGrid {
    let max_depth = (size as f64).log(3.0).floor() as u32;
    let depth = depth.min(max_depth);
    let cells = 3usize.pow(depth);
    let in_dust = |mut i: usize| {
        for _ in 0..depth {
            if i % 3 == 1 {
                return false;
            }
            i /= 3;
        }
        true
    };
    let cell_of = |p: usize| ((p as f64 + 0.5) / size as f64 * cells as f64) as usize;
    let mut img = ImageGrid::zeros(size, size);
    for y in 0..size {
        let cy = in_dust(cell_of(y));
        for x in 0..size {
            if cy && in_dust(cell_of(x)) {
                img.set(x, y, 1.0);
            }
        }
    }
    img
}

fn koch_points(p0: (f64, f64), p1: (f64, f64), depth: u32, out: &mut Vec<(f64, f64)>) {
    if depth == 0 {
        out.push(p1);
        return;
    }
    let (dx, dy) = ((p1.0 - p0.0) / 3.0, (p1.1 - p0.1) / 3.0);
    let a = (p0.0 + dx, p0.1 + dy);
    let b = (p0.0 + 2.0 * dx, p0.1 + 2.0 * dy);
    // Rotate the middle third by -60 degrees (upwards in image rows).
    let (s, c) = ((-60f64).to_radians().sin(), 0.5);
    let peak = (a.0 + dx * c - dy * s, a.1 + dx * s + dy * c);
    koch_points(p0, a, depth - 1, out);
    koch_points(a, peak, depth - 1, out);
    koch_points(peak, b, depth - 1, out);
    koch_points(b, p1, depth - 1, out);
}

/// Vertices of a Koch curve polyline from `p0` to `p1`.
pub fn koch_polyline(p0: (f64, f64), p1: (f64, f64), depth: u32) -> Vec<(f64, f64)> {
    let mut pts = vec![p0];
    koch_points(p0, p1, depth, &mut pts);
    pts
}

fn koch_curve_raster(size: usize, depth: u32) -> ImageGrid {
    let s = size as f64;
    // Stop subdividing once segments drop below one pixel.
    let max_depth = (s.ln() / 3f64.ln()).floor() as u32;
    let pts = koch_polyline((0.0, 0.65 * s), (s - 1e-9, 0.65 * s), depth.min(max_depth));
    let mut img = ImageGrid::zeros(size, size);
    for w in pts.windows(2) {
        draw_segment(&mut img, w[0], w[1]);
    }
    img
}

/// Marks every pixel the segment passes through (dense DDA sampling).
pub fn draw_segment(img: &mut ImageGrid, p0: (f64, f64), p1: (f64, f64)) {
    let len = (p1.0 - p0.0).hypot(p1.1 - p0.1);
    let steps = (len * 4.0).ceil().max(1.0) as usize;
    let (w, h) = (img.width() as f64, img.height() as f64);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = p0.0 + (p1.0 - p0.0) * t;
        let y = p0.1 + (p1.1 - p0.1) * t;
        if x >= 0.0 && y >= 0.0 && x < w && y < h {
            img.set(x as usize, y as usize, 1.0);
        }
    }
}

/// Closed Koch snowflake outline centred at `center` with circumradius `radius`.
pub fn koch_snowflake(center: (f64, f64), radius: f64, depth: u32) -> Vec<(f64, f64)> {
    let corner = |k: f64| {
        let t = (-90.0 + 120.0 * k).to_radians();
        (center.0 + radius * t.cos(), center.1 + radius * t.sin())
    };
    let tri = [corner(0.0), corner(1.0), corner(2.0)];
    let mut pts = vec![tri[0]];
    for i in 0..3 {
        // Clockwise in image coordinates, so the bumps point outwards.
        koch_points(tri[i], tri[(i + 1) % 3], depth, &mut pts);
    }
    pts.pop();
    pts
}

/// Even-odd scanline fill of a closed polygon, sampled at pixel centres.
pub fn fill_polygon(img: &mut ImageGrid, verts: &[(f64, f64)]) {
    let n = verts.len();
    if n < 3 {
        return;
    }
    let mut xs = Vec::new();
    for y in 0..img.height() {
        let yc = y as f64 + 0.5;
        xs.clear();
        for i in 0..n {
            let (a, b) = (verts[i], verts[(i + 1) % n]);
            if (a.1 <= yc) != (b.1 <= yc) {
                xs.push(a.0 + (yc - a.1) / (b.1 - a.1) * (b.0 - a.0));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let x0 = (pair[0] - 0.5).ceil().max(0.0) as usize;
            let x1 = ((pair[1] - 0.5).floor() as isize).min(img.width() as isize - 1);
            for x in x0 as isize..=x1 {
                img.set(x as usize, y, 1.0);
            }
        }
    }
}

/// Random multiplicative cascade on a `4^levels` grid: starting from a
/// single occupied cell, every occupied cell spawns a 4x4 block whose
/// children are occupied independently with `child_probs[pos]`.
pub fn random_cascade(size: usize, child_probs: &[f64; 16], seed: u64) -> Result<ImageGrid> {
    let levels = (size as f64).log(4.0).round() as u32;
    if size < 4 || 4usize.pow(levels) != size {
        return Err(Error::InvalidArgument(format!(
            "cascade size {size} must be a power of 4"
        )));
    }
    let mut rng = rng::seeded(seed);
    let mut occ = vec![true];
    let mut side = 1;
    for _ in 0..levels {
        let next_side = side * 4;
        let mut next = vec![false; next_side * next_side];
        for py in 0..side {
            for px in 0..side {
                if !occ[py * side + px] {
                    continue;
                }
                for (pos, &p) in child_probs.iter().enumerate() {
                    if rng.gen::<f64>() < p {
                        let (cx, cy) = (px * 4 + pos % 4, py * 4 + pos / 4);
                        next[cy * next_side + cx] = true;
                    }
                }
            }
        }
        occ = next;
        side = next_side;
    }
    ImageGrid::new(
        size,
        size,
        occ.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect(),
    )
}

/// Applies one of the eight symmetries of the square (0 = identity).
pub fn dihedral(img: &ImageGrid, op: u8) -> ImageGrid {
    let n = img.width();
    debug_assert_eq!(n, img.height());
    let mut out = ImageGrid::zeros(n, n);
    let m = n - 1;
    for y in 0..n {
        for x in 0..n {
            let (sx, sy) = match op % 8 {
                0 => (x, y),
                1 => (m - x, y),
                2 => (x, m - y),
                3 => (m - x, m - y),
                4 => (y, x),
                5 => (m - y, x),
                6 => (y, m - x),
                _ => (m - y, m - x),
            };
            out.set(x, y, img.get(sx, sy));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Canonical,
    Ifs,
    Cascade,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Canonical => "canonical",
            Family::Ifs => "ifs",
            Family::Cascade => "cascade",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Theoretical,
    BoxCounting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Image path relative to the manifest's directory.
    pub path: String,
    pub family: Family,
    pub parameters: Value,
    pub hd_label: f64,
    pub label_source: LabelSource,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory image paths are resolved against; not serialized.
    #[serde(skip)]
    pub root: PathBuf,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
        manifest.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if let Some(bad) = manifest
            .entries
            .iter()
            .find(|e| !(0.0..=2.0).contains(&e.hd_label))
        {
            return Err(Error::InvalidArgument(format!(
                "entry {} has hd_label {} outside [0, 2]",
                bad.id, bad.hd_label
            )));
        }
        Ok(manifest)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn image_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    pub fn load_image(&self, entry: &ManifestEntry) -> Result<ImageGrid> {
        ImageGrid::load_pgm(self.image_path(entry))
    }

    pub fn by_family(&self) -> BTreeMap<Family, Vec<&ManifestEntry>> {
        let mut out: BTreeMap<Family, Vec<&ManifestEntry>> = BTreeMap::new();
        for e in &self.entries {
            out.entry(e.family).or_default().push(e);
        }
        out
    }
}

/// Per-family counts and rendering parameters for [`synth_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub canonical: usize,
    pub ifs: usize,
    pub cascade: usize,
    pub size: usize,
    pub ifs_points: usize,
}

impl Default for DatasetSpec {
    /// The desk-scale default: 300 images at 256x256, evenly split.
    fn default() -> Self {
        Self {
            canonical: 100,
            ifs: 100,
            cascade: 100,
            size: 256,
            ifs_points: 300_000,
        }
    }
}

struct Synthesized {
    image: ImageGrid,
    parameters: Value,
    hd_label: f64,
    label_source: LabelSource,
}

/// Writes one PGM per entry plus `manifest.json` into `out_dir`.
/// Entry `i` draws its randomness from seed `seed ^ i`.
pub fn synth_dataset(spec: &DatasetSpec, out_dir: impl AsRef<Path>, seed: u64) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    if !spec.size.is_power_of_two() || spec.size < 64 {
        return Err(Error::InvalidArgument(format!(
            "dataset size {} must be a power of two >= 64",
            spec.size
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let plan = std::iter::repeat_n(Family::Canonical, spec.canonical)
        .chain(std::iter::repeat_n(Family::Ifs, spec.ifs))
        .chain(std::iter::repeat_n(Family::Cascade, spec.cascade));

    let mut entries = Vec::new();
    let mut per_family: BTreeMap<Family, usize> = BTreeMap::new();
    for (index, family) in plan.enumerate() {
        let k = per_family.entry(family).or_default();
        let entry_seed = seed ^ index as u64;
        let s = match family {
            Family::Canonical => synth_canonical(*k, spec.size, entry_seed)?,
            Family::Ifs => synth_ifs(*k, spec.size, spec.ifs_points, entry_seed)?,
            Family::Cascade => synth_cascade(spec.size, entry_seed)?,
        };
        *k += 1;
        let id = format!("{}_{:04}", family.as_str(), index);
        let file = format!("{id}.pgm");
        s.image.save_pgm(out_dir.join(&file))?;
        entries.push(ManifestEntry {
            id,
            path: file,
            family,
            parameters: s.parameters,
            hd_label: s.hd_label.clamp(0.0, 2.0),
            label_source: s.label_source,
        });
    }
    let manifest = DatasetManifest {
        entries,
        root: out_dir.to_path_buf(),
    };
    let path = out_dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_json()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn synth_canonical(k: usize, size: usize, seed: u64) -> Result<Synthesized> {
    let mut rng = rng::seeded(seed);
    let kind = CanonicalKind::ALL[k % CanonicalKind::ALL.len()];
    let max_depth = size.trailing_zeros();
    let depth = rng.gen_range(max_depth.saturating_sub(3).max(1)..=max_depth);
    let op: u8 = rng.gen_range(0..8);
    let (img, dim) = canonical(kind, size, depth)?;
    Ok(Synthesized {
        image: dihedral(&img, op),
        parameters: json!({ "kind": kind.as_str(), "depth": depth, "symmetry": op }),
        hd_label: dim,
        label_source: LabelSource::Theoretical,
    })
}

/// Random grid IFS: `k` distinct cells of a `g x g` subdivision, each a
/// `1/g` similarity. Satisfies the open set condition, so the Moran
/// dimension `ln k / ln g` is the attractor's Hausdorff dimension.
pub fn random_grid_ifs(rng: &mut rng::Rng) -> IfsSystem {
    let g: usize = rng.gen_range(2..=4);
    let k_min = g;
    let k_max = if g == 2 { 3 } else { g * g - 1 };
    let k = rng.gen_range(k_min..=k_max);
    let mut cells: Vec<usize> = (0..g * g).collect();
    // Partial Fisher-Yates: the first k cells are a uniform subset.
    for i in 0..k {
        let j = rng.gen_range(i..cells.len());
        cells.swap(i, j);
    }
    let mut chosen = cells[..k].to_vec();
    chosen.sort_unstable();
    let r = 1.0 / g as f64;
    let w = 1.0 / k as f64;
    let maps = chosen
        .iter()
        .map(|&c| AffineMap::similarity(r, (c % g) as f64 * r, (c / g) as f64 * r, w))
        .collect();
    IfsSystem {
        name: format!("grid{g}_{k}"),
        maps,
    }
}

/// Random general affine IFS with 2 to 4 maps that send the unit square
/// into itself; weights proportional to |det|.
pub fn random_affine_ifs(rng: &mut rng::Rng) -> IfsSystem {
    let n = rng.gen_range(2..=4);
    let mut maps = Vec::with_capacity(n);
    for _ in 0..n {
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let s1: f64 = rng.gen_range(0.3..0.7);
        let s2: f64 = rng.gen_range(0.15..s1);
        let shear: f64 = rng.gen_range(-0.3..0.3);
        let (sin, cos) = theta.sin_cos();
        // R(theta) * [[s1, shear*s2], [0, s2]]
        let (mut a, mut b, mut c, mut d) = (cos * s1, cos * shear * s2 - sin * s2, sin * s1, sin * shear * s2 + cos * s2);
        let mut m = AffineMap { a, b, c, d, e: 0.0, f: 0.0, weight: 0.0 };
        let norm = m.spectral_norm();
        // |a| + |b| <= sqrt(2) * norm < 1 keeps the image of the unit square narrower than 1.
        if norm > 0.7 {
            let k = 0.7 / norm;
            a *= k;
            b *= k;
            c *= k;
            d *= k;
            m = AffineMap { a, b, c, d, ..m };
        }
        let corners = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)].map(|p| m.apply(p));
        let (xmin, xmax) = corners.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
        let (ymin, ymax) = corners.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
        m.e = rng.gen_range(-xmin..=(1.0 - xmax).max(-xmin));
        m.f = rng.gen_range(-ymin..=(1.0 - ymax).max(-ymin));
        m.weight = (m.a * m.d - m.b * m.c).abs().max(0.01);
        maps.push(m);
    }
    let total: f64 = maps.iter().map(|m| m.weight).sum();
    for m in &mut maps {
        m.weight /= total;
    }
    IfsSystem {
        name: format!("affine{n}"),
        maps,
    }
}

fn box_label(img: &ImageGrid) -> Result<f64> {
    let est = classical::box_counting(img, &EstimatorConfig::for_side(img.width()))?;
    Ok(est.dimension.clamp(0.0, 2.0))
}

fn synth_ifs(k: usize, size: usize, n_points: usize, seed: u64) -> Result<Synthesized> {
    let mut rng = rng::seeded(seed);
    // Even slots: similarity IFS with an exact label; odd: general affine.
    let ifs = if k.is_multiple_of(2) {
        random_grid_ifs(&mut rng)
    } else {
        random_affine_ifs(&mut rng)
    };
    let img = chaos_game(&ifs, n_points, size, rng.gen())?;
    let (hd_label, label_source) = match ifs.similarity_ratios() {
        Some(ratios) => (moran_dimension(&ratios)?, LabelSource::Theoretical),
        None => (box_label(&img)?, LabelSource::BoxCounting),
    };
    Ok(Synthesized {
        image: img,
        parameters: serde_json::to_value(&ifs).expect("ifs serializes"),
        hd_label,
        label_source,
    })
}

fn synth_cascade(size: usize, seed: u64) -> Result<Synthesized> {
    let mut rng = rng::seeded(seed);
    // Expected children per occupied cell between 5 and 15, i.e. expected
    // dimensions between ln5/ln4 and ln15/ln4.
    let mean_children: f64 = rng.gen_range(5.0..15.0);
    let base = mean_children / 16.0;
    let mut probs = [0.0; 16];
    for p in &mut probs {
        *p = (base + rng.gen_range(-0.2..0.2)).clamp(0.05, 1.0);
    }
    let cascade_size = if size.trailing_zeros().is_multiple_of(2) { size } else { size / 2 };
    let mut img = random_cascade(cascade_size, &probs, rng.gen())?;
    if img.width() != size {
        img = img.upsample_nearest(size / img.width());
    }
    if img.binarize(0.5).count() == 0 {
        // Extinct cascade: fall back to a single occupied pixel per cell.
        img.set(size / 2, size / 2, 1.0);
    }
    let hd_label = box_label(&img)?;
    Ok(Synthesized {
        image: img,
        parameters: json!({ "child_probs": probs.to_vec() }),
        hd_label,
        label_source: LabelSource::BoxCounting,
    })
}
