//! Learnable HD estimator: a small multi-scale convolutional regressor.
//!
//! ```text
//! 64x64x1 --conv3x3/2--> 32x32x8 --relu--conv3x3/2--> 16x16x16 --relu--+
//!   +--conv3x3--> 16x16x16 --relu--+
//!   +--conv5x5--> 16x16x16 --relu--+--concat--> 16x16x48 --GAP--> 48 --affine--> 1
//!   +--conv7x7--> 16x16x16 --relu--+
//! ```
//!
//! Branch convolutions use stride 1 with zero padding that preserves the
//! spatial size. The branch set is configurable so the kernel ablation
//! can train the same network with any non-empty subset of {3, 5, 7}.
//!
//! Weights are stored as `f32` (the on-disk precision); all arithmetic is
//! `f64`, which is what the finite-difference gradient check relies on.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageGrid;
use crate::rng;
use crate::synth::DatasetManifest;

pub const INPUT_SIDE: usize = 64;
pub const STEM1_CHANNELS: usize = 8;
pub const TRUNK_CHANNELS: usize = 16;
pub const BRANCH_CHANNELS: usize = 16;
pub const DEFAULT_KERNELS: [usize; 3] = [3, 5, 7];
pub const WEIGHTS_MAGIC: &str = "FGMHD-W";
pub const WEIGHTS_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvSpec {
    in_ch: usize,
    out_ch: usize,
    k: usize,
    stride: usize,
    pad: usize,
    in_side: usize,
}

impl ConvSpec {
    fn out_side(&self) -> usize {
        (self.in_side + 2 * self.pad - self.k) / self.stride + 1
    }

    fn fan_in(&self) -> usize {
        self.in_ch * self.k * self.k
    }
}

/// One parameterized layer: weights followed by `out` biases in the flat
/// parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShape {
    pub name: String,
    pub out: usize,
    pub input: usize,
    pub kh: usize,
    pub kw: usize,
    pub offset: usize,
}

impl LayerShape {
    pub fn n_weights(&self) -> usize {
        self.out * self.input * self.kh * self.kw
    }

    pub fn len(&self) -> usize {
        self.n_weights() + self.out
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fan_in(&self) -> usize {
        self.input * self.kh * self.kw
    }

    fn weights<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.offset..self.offset + self.n_weights()]
    }

    fn bias<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.offset + self.n_weights()..self.offset + self.len()]
    }

    fn split_mut<'a>(&self, g: &'a mut [f64]) -> (&'a mut [f64], &'a mut [f64]) {
        g[self.offset..self.offset + self.len()].split_at_mut(self.n_weights())
    }
}

/// Architecture for a given branch-kernel set; owns no weights. Branches
/// are concatenated in the order the kernel sizes are given.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    kernels: Vec<usize>,
    stem1: ConvSpec,
    stem2: ConvSpec,
    branches: Vec<ConvSpec>,
    layers: Vec<LayerShape>,
    n_params: usize,
}

impl Network {
    pub fn new(kernels: &[usize]) -> Result<Self> {
        if kernels.is_empty() {
            return Err(Error::InvalidArgument("kernel set must be non-empty".into()));
        }
        let mut distinct = kernels.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() != kernels.len() || kernels.iter().any(|k| k % 2 == 0) {
            return Err(Error::InvalidArgument(format!(
                "kernel set {kernels:?} must hold distinct odd sizes"
            )));
        }
        let stem1 = ConvSpec { in_ch: 1, out_ch: STEM1_CHANNELS, k: 3, stride: 2, pad: 1, in_side: INPUT_SIDE };
        let stem2 = ConvSpec { in_ch: STEM1_CHANNELS, out_ch: TRUNK_CHANNELS, k: 3, stride: 2, pad: 1, in_side: stem1.out_side() };
        let branches: Vec<ConvSpec> = kernels
            .iter()
            .map(|&k| ConvSpec { in_ch: TRUNK_CHANNELS, out_ch: BRANCH_CHANNELS, k, stride: 1, pad: k / 2, in_side: stem2.out_side() })
            .collect();
        let mut layers = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, out: usize, input: usize, kh: usize, kw: usize| {
            let l = LayerShape { name, out, input, kh, kw, offset };
            offset += l.len();
            layers.push(l);
        };
        push("stem1".into(), stem1.out_ch, stem1.in_ch, 3, 3);
        push("stem2".into(), stem2.out_ch, stem2.in_ch, 3, 3);
        for b in &branches {
            push(format!("branch{}", b.k), b.out_ch, b.in_ch, b.k, b.k);
        }
        push("head".into(), 1, BRANCH_CHANNELS * branches.len(), 1, 1);
        Ok(Self {
            kernels: kernels.to_vec(),
            stem1,
            stem2,
            branches,
            layers,
            n_params: offset,
        })
    }

    pub fn kernels(&self) -> &[usize] {
        &self.kernels
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    fn head(&self) -> &LayerShape {
        self.layers.last().expect("head layer")
    }

    fn check(&self, params: &[f64], input: &[f64]) -> Result<()> {
        if params.len() != self.n_params {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters, network expects {}",
                params.len(),
                self.n_params
            )));
        }
        if input.len() != INPUT_SIDE * INPUT_SIDE {
            return Err(Error::ShapeMismatch(format!(
                "input has {} values, expected {}x{}",
                input.len(),
                INPUT_SIDE,
                INPUT_SIDE
            )));
        }
        Ok(())
    }

    fn run(&self, params: &[f64], input: &[f64]) -> Activations {
        let stem1 = &self.layers[0];
        let stem2 = &self.layers[1];
        let col1 = im2col(input, &self.stem1);
        let mut a1 = conv_forward(&col1, stem1.weights(params), stem1.bias(params), &self.stem1);
        relu(&mut a1);
        let col2 = im2col(&a1, &self.stem2);
        let mut a2 = conv_forward(&col2, stem2.weights(params), stem2.bias(params), &self.stem2);
        relu(&mut a2);
        let mut branch_cols = Vec::with_capacity(self.branches.len());
        let mut branch_out = Vec::with_capacity(self.branches.len());
        let mut pooled = Vec::with_capacity(BRANCH_CHANNELS * self.branches.len());
        for (spec, layer) in self.branches.iter().zip(&self.layers[2..]) {
            let col = im2col(&a2, spec);
            let mut out = conv_forward(&col, layer.weights(params), layer.bias(params), spec);
            relu(&mut out);
            let area = spec.out_side() * spec.out_side();
            pooled.extend(out.chunks_exact(area).map(|c| c.iter().sum::<f64>() / area as f64));
            branch_cols.push(col);
            branch_out.push(out);
        }
        let head = self.head();
        let output = head.bias(params)[0]
            + head
                .weights(params)
                .iter()
                .zip(&pooled)
                .map(|(w, g)| w * g)
                .sum::<f64>();
        Activations { col1, a1, col2, a2, branch_cols, branch_out, pooled, output }
    }

    /// Scalar prediction for a 64x64 input given as row-major intensities.
    pub fn forward(&self, params: &[f64], input: &[f64]) -> Result<f64> {
        self.check(params, input)?;
        Ok(self.run(params, input).output)
    }

    /// Post-ReLU feature maps: stem1, stem2, then each branch.
    pub fn feature_maps(&self, params: &[f64], input: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check(params, input)?;
        let act = self.run(params, input);
        let mut maps = vec![act.a1, act.a2];
        maps.extend(act.branch_out);
        Ok(maps)
    }

    /// Squared error against `target` and its exact gradient with respect
    /// to every parameter.
    pub fn loss_and_gradient(&self, params: &[f64], input: &[f64], target: f64) -> Result<(f64, Vec<f64>)> {
        self.check(params, input)?;
        let act = self.run(params, input);
        let diff = act.output - target;
        let mut grad = vec![0.0; self.n_params];
        self.backward(params, &act, 2.0 * diff, &mut grad);
        Ok((diff * diff, grad))
    }

    /// Accumulates `d(output)/d(params) * d_out` into `grad`.
    fn backward(&self, params: &[f64], act: &Activations, d_out: f64, grad: &mut [f64]) {
        let head = self.head();
        {
            let (gw, gb) = head.split_mut(grad);
            gb[0] += d_out;
            for (g, p) in gw.iter_mut().zip(&act.pooled) {
                *g += d_out * p;
            }
        }
        let head_w = head.weights(params);
        let trunk_side = self.stem2.out_side();
        let mut d_a2 = vec![0.0; TRUNK_CHANNELS * trunk_side * trunk_side];
        for (bi, (spec, layer)) in self.branches.iter().zip(&self.layers[2..]).enumerate() {
            let area = spec.out_side() * spec.out_side();
            let out = &act.branch_out[bi];
            // GAP then ReLU: each post-activation value receives w / area.
            let mut d_z = vec![0.0; out.len()];
            for c in 0..spec.out_ch {
                let g = d_out * head_w[bi * BRANCH_CHANNELS + c] / area as f64;
                for (dz, &o) in d_z[c * area..(c + 1) * area].iter_mut().zip(&out[c * area..(c + 1) * area]) {
                    *dz = if o > 0.0 { g } else { 0.0 };
                }
            }
            let (gw, gb) = layer.split_mut(grad);
            let d_col = conv_backward(&act.branch_cols[bi], layer.weights(params), &d_z, spec, gw, gb, true);
            col2im_add(&d_col.expect("input gradient"), spec, &mut d_a2);
        }
        relu_backward(&mut d_a2, &act.a2);
        let stem2 = &self.layers[1];
        let (gw, gb) = stem2.split_mut(grad);
        let d_col2 = conv_backward(&act.col2, stem2.weights(params), &d_a2, &self.stem2, gw, gb, true);
        let mut d_a1 = vec![0.0; act.a1.len()];
        col2im_add(&d_col2.expect("input gradient"), &self.stem2, &mut d_a1);
        relu_backward(&mut d_a1, &act.a1);
        let stem1 = &self.layers[0];
        let (gw, gb) = stem1.split_mut(grad);
        conv_backward(&act.col1, stem1.weights(params), &d_a1, &self.stem1, gw, gb, false);
    }
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Draws discarded because the perturbation flipped a ReLU unit, where
    /// the loss is not differentiable and a finite difference is meaningless.
    pub skipped_kinks: usize,
}

impl Network {
    /// Squared error and which pre-activations are positive over every
    /// ReLU layer, from one forward pass.
    fn loss_and_pattern(&self, params: &[f64], input: &[f64], target: f64) -> (f64, Vec<bool>) {
        let act = self.run(params, input);
        let mut pattern: Vec<bool> = act.a1.iter().chain(&act.a2).map(|&v| v > 0.0).collect();
        pattern.extend(act.branch_out.iter().flatten().map(|&v| v > 0.0));
        ((act.output - target).powi(2), pattern)
    }

    /// Checks `per_layer` randomly drawn coordinates of every layer with
    /// step `h`. The relative error is `|g - fd| / max(|g|, |fd|, 1e-8)`.
    pub fn gradient_check(
        &self,
        params: &[f64],
        input: &[f64],
        target: f64,
        per_layer: usize,
        h: f64,
        rng: &mut rng::Rng,
    ) -> Result<GradCheck> {
        let (_, grad) = self.loss_and_gradient(params, input, target)?;
        let (_, base) = self.loss_and_pattern(params, input, target);
        let mut p = params.to_vec();
        let mut out = GradCheck { max_rel_error: 0.0, checked: 0, skipped_kinks: 0 };
        for layer in &self.layers {
            let mut done = 0;
            // Bounded so a pathological point cannot loop forever.
            for _ in 0..per_layer * 20 {
                if done == per_layer {
                    break;
                }
                let i = layer.offset + rng.gen_range(0..layer.len());
                let orig = p[i];
                p[i] = orig + h;
                let (up, up_pattern) = self.loss_and_pattern(&p, input, target);
                p[i] = orig - h;
                let (dn, dn_pattern) = self.loss_and_pattern(&p, input, target);
                p[i] = orig;
                if up_pattern != base || dn_pattern != base {
                    out.skipped_kinks += 1;
                    continue;
                }
                let fd = (up - dn) / (2.0 * h);
                let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-8);
                out.max_rel_error = out.max_rel_error.max(rel);
                out.checked += 1;
                done += 1;
            }
        }
        Ok(out)
    }
}

struct Activations {
    col1: Vec<f64>,
    a1: Vec<f64>,
    col2: Vec<f64>,
    a2: Vec<f64>,
    branch_cols: Vec<Vec<f64>>,
    branch_out: Vec<Vec<f64>>,
    pooled: Vec<f64>,
    output: f64,
}

fn relu(x: &mut [f64]) {
    for v in x {
        *v = v.max(0.0);
    }
}

fn relu_backward(grad: &mut [f64], activated: &[f64]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Unfolds a `(C, H, W)` tensor into a `(C*k*k, out*out)` matrix.
fn im2col(input: &[f64], s: &ConvSpec) -> Vec<f64> {
    let out = s.out_side();
    let n = out * out;
    let mut col = vec![0.0; s.fan_in() * n];
    for c in 0..s.in_ch {
        let plane = &input[c * s.in_side * s.in_side..(c + 1) * s.in_side * s.in_side];
        for ky in 0..s.k {
            for kx in 0..s.k {
                let row = (c * s.k + ky) * s.k + kx;
                let dst = &mut col[row * n..(row + 1) * n];
                for oy in 0..out {
                    let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                    if iy < 0 || iy >= s.in_side as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * s.in_side..(iy as usize + 1) * s.in_side];
                    for ox in 0..out {
                        let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                        if ix >= 0 && ix < s.in_side as isize {
                            dst[oy * out + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
fn col2im_add(col: &[f64], s: &ConvSpec, d_input: &mut [f64]) {
    let out = s.out_side();
    let n = out * out;
    for c in 0..s.in_ch {
        let plane = &mut d_input[c * s.in_side * s.in_side..(c + 1) * s.in_side * s.in_side];
        for ky in 0..s.k {
            for kx in 0..s.k {
                let row = (c * s.k + ky) * s.k + kx;
                let src = &col[row * n..(row + 1) * n];
                for oy in 0..out {
                    let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                    if iy < 0 || iy >= s.in_side as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * s.in_side..(iy as usize + 1) * s.in_side];
                    for ox in 0..out {
                        let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                        if ix >= 0 && ix < s.in_side as isize {
                            dst[ix as usize] += src[oy * out + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `C (m x n) = alpha * A (m x k) * B (k x n) + beta * C`, with arbitrary
/// row and column strides for `A` and `B` so transposes need no copies.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the callers pass slices holding exactly the m x k, k x n and
    // m x n matrices addressed by these strides.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), rsa, csa,
            b.as_ptr(), rsb, csb,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `out[oc] = bias[oc] + W[oc, :] . col`.
fn conv_forward(col: &[f64], weights: &[f64], bias: &[f64], s: &ConvSpec) -> Vec<f64> {
    let n = s.out_side() * s.out_side();
    let rows = s.fan_in();
    let mut out = vec![0.0; s.out_ch * n];
    for (oc, dst) in out.chunks_exact_mut(n).enumerate() {
        dst.fill(bias[oc]);
    }
    gemm(s.out_ch, rows, n, weights, (rows as isize, 1), col, (n as isize, 1), 1.0, &mut out);
    out
}

/// Accumulates weight and bias gradients; returns the column-space input
/// gradient when `want_input` is set.
fn conv_backward(
    col: &[f64],
    weights: &[f64],
    d_out: &[f64],
    s: &ConvSpec,
    g_w: &mut [f64],
    g_b: &mut [f64],
    want_input: bool,
) -> Option<Vec<f64>> {
    let n = s.out_side() * s.out_side();
    let rows = s.fan_in();
    for (oc, d) in d_out.chunks_exact(n).enumerate() {
        g_b[oc] += d.iter().sum::<f64>();
    }
    // g_W (oc x rows) += d_out (oc x n) * col^T (n x rows)
    gemm(s.out_ch, n, rows, d_out, (n as isize, 1), col, (1, n as isize), 1.0, g_w);
    want_input.then(|| {
        // d_col (rows x n) = W^T (rows x oc) * d_out (oc x n)
        let mut d_col = vec![0.0; rows * n];
        gemm(rows, s.out_ch, n, weights, (1, rows as isize), d_out, (n as isize, 1), 0.0, &mut d_col);
        d_col
    })
}

/// Network plus its weights at storage precision.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorModel {
    network: Network,
    params: Vec<f32>,
}

impl RegressorModel {
    pub fn from_params(network: Network, params: Vec<f32>) -> Result<Self> {
        if params.len() != network.n_params() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters, network expects {}",
                params.len(),
                network.n_params()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        Ok(Self { network, params })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn kernels(&self) -> &[usize] {
        self.network.kernels()
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn params_f64(&self) -> Vec<f64> {
        self.params.iter().map(|&p| f64::from(p)).collect()
    }

    pub fn set_params_f64(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.params.len());
        for (dst, &src) in self.params.iter_mut().zip(params) {
            *dst = src as f32;
        }
    }
}

/// Default three-branch model with uniform(-s, s) weights, `s = 1/sqrt(fan_in)`.
pub fn init_model(seed: u64) -> RegressorModel {
    init_model_with(&DEFAULT_KERNELS, seed).expect("default kernel set is valid")
}

pub fn init_model_with(kernels: &[usize], seed: u64) -> Result<RegressorModel> {
    let network = Network::new(kernels)?;
    let mut rng = rng::seeded(seed);
    let mut params = vec![0f32; network.n_params()];
    for layer in network.layers() {
        let s = 1.0 / (layer.fan_in() as f64).sqrt();
        for p in &mut params[layer.offset..layer.offset + layer.len()] {
            let mut v = rng.gen_range(-s..s) as f32;
            if f64::from(v).abs() > s {
                // Rounding to f32 overshot the bound; step one ulp towards zero.
                v = f32::from_bits(v.to_bits() - 1);
            }
            *p = v;
        }
    }
    Ok(RegressorModel { network, params })
}

fn input_of(image: &ImageGrid) -> Result<&[f64]> {
    if image.width() != INPUT_SIDE || image.height() != INPUT_SIDE {
        return Err(Error::ShapeMismatch(format!(
            "regressor input must be {INPUT_SIDE}x{INPUT_SIDE}, got {}x{}",
            image.width(),
            image.height()
        )));
    }
    Ok(image.pixels())
}

/// Raw (unclamped) prediction for a 64x64 image.
pub fn forward(model: &RegressorModel, image: &ImageGrid) -> Result<f64> {
    model.network.forward(&model.params_f64(), input_of(image)?)
}

/// Resamples to 64x64 when needed, then predicts.
pub fn predict(model: &RegressorModel, image: &ImageGrid) -> Result<f64> {
    if image.width() == INPUT_SIDE && image.height() == INPUT_SIDE {
        forward(model, image)
    } else {
        forward(model, &image.resample_area(INPUT_SIDE, INPUT_SIDE)?)
    }
}

pub fn loss_and_gradient(model: &RegressorModel, image: &ImageGrid, target: f64) -> Result<(f64, Vec<f64>)> {
    model
        .network
        .loss_and_gradient(&model.params_f64(), input_of(image)?, target)
}

/// Momentum SGD whose learning rate is cosine-annealed from `lr` to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    pub epochs: usize,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            lr: 0.02,
            momentum: 0.9,
            batch: 16,
            epochs: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub train_mse: f64,
    pub holdout_mae: f64,
    pub holdout_mse: f64,
    pub loss_curve: Vec<f64>,
    pub wall_time: f64,
    pub n_train: usize,
    pub n_holdout: usize,
}

/// FNV-1a over the id bytes.
fn id_hash(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Deterministic 80/20 split: an id is held out iff its FNV-1a hash is 0 mod 5.
pub fn is_holdout(id: &str) -> bool {
    id_hash(id).is_multiple_of(5)
}

/// Images resampled to network resolution, with labels, split by id hash.
#[derive(Debug, Clone, Default)]
pub struct PreparedSet {
    pub train: Vec<(Vec<f64>, f64)>,
    pub holdout: Vec<(Vec<f64>, f64)>,
}

impl PreparedSet {
    pub fn from_manifest(manifest: &DatasetManifest) -> Result<Self> {
        if manifest.entries.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut set = PreparedSet::default();
        for entry in &manifest.entries {
            let img = manifest.load_image(entry)?.resample_area(INPUT_SIDE, INPUT_SIDE)?;
            let sample = (img.pixels().to_vec(), entry.hd_label);
            if is_holdout(&entry.id) {
                set.holdout.push(sample);
            } else {
                set.train.push(sample);
            }
        }
        if set.train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(set)
    }
}

/// Mean absolute and mean squared error of `model` on `samples`.
pub fn evaluate(model: &RegressorModel, samples: &[(Vec<f64>, f64)]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let params = model.params_f64();
    let mut abs = 0.0;
    let mut sq = 0.0;
    for (x, y) in samples {
        let e = model.network.forward(&params, x)? - y;
        abs += e.abs();
        sq += e * e;
    }
    let n = samples.len() as f64;
    Ok((abs / n, sq / n))
}

pub fn train(model: &mut RegressorModel, manifest: &DatasetManifest, hyper: &TrainHyper, seed: u64) -> Result<TrainReport> {
    let data = PreparedSet::from_manifest(manifest)?;
    train_prepared(model, &data, hyper, seed)
}

/// Mini-batch SGD with heavy-ball momentum on the mean squared error:
/// `v = momentum * v - lr * grad; w = w + v`. An `f64` master copy of the
/// weights is updated and rounded to storage precision at the end.
pub fn train_prepared(model: &mut RegressorModel, data: &PreparedSet, hyper: &TrainHyper, seed: u64) -> Result<TrainReport> {
    if data.train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if hyper.batch == 0 {
        return Err(Error::InvalidArgument("batch must be >= 1".into()));
    }
    let started = Instant::now();
    let net = model.network.clone();
    let mut params = model.params_f64();
    let mut velocity = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut rng = rng::seeded(seed);
    let mut loss_curve = Vec::with_capacity(hyper.epochs);
    let mut grad = vec![0.0; params.len()];
    for epoch in 0..hyper.epochs {
        // Cosine annealing from `lr` towards zero over the run.
        let lr = hyper.lr * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / hyper.epochs as f64).cos());
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(hyper.batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let (x, y) = &data.train[i];
                let act = net.run(&params, x);
                let diff = act.output - y;
                epoch_loss += diff * diff;
                net.backward(&params, &act, 2.0 * diff / batch.len() as f64, &mut grad);
            }
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = hyper.momentum * *v - lr * g;
                *p += *v;
            }
        }
        let mean = epoch_loss / data.train.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged(mean));
        }
        loss_curve.push(mean);
    }
    if hyper.epochs > 0 {
        model.set_params_f64(&params);
    }
    let (_, train_mse) = evaluate(model, &data.train)?;
    let (holdout_mae, holdout_mse) = evaluate(model, &data.holdout)?;
    Ok(TrainReport {
        epochs_run: hyper.epochs,
        train_mse,
        holdout_mae,
        holdout_mse,
        loss_curve,
        wall_time: started.elapsed().as_secs_f64(),
        n_train: data.train.len(),
        n_holdout: data.holdout.len(),
    })
}

/// Serializes as ASCII header lines (`FGMHD-W v1`, one
/// `<name> <out> <in> <kh> <kw>` line per layer, a blank line) followed by
/// each layer's weights then biases as little-endian `f32`.
pub fn encode_weights(model: &RegressorModel) -> Vec<u8> {
    let mut header = format!("{WEIGHTS_MAGIC} {WEIGHTS_VERSION}\n");
    for l in model.network.layers() {
        let _ = writeln!(header, "{} {} {} {} {}", l.name, l.out, l.input, l.kh, l.kw);
    }
    header.push('\n');
    let mut out = header.into_bytes();
    for p in &model.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode_weights(bytes: &[u8]) -> Result<RegressorModel> {
    let header_end = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| Error::MalformedHeader("missing blank line after weight header".into()))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::MalformedHeader("weight header is not ASCII".into()))?;
    let mut lines = header.lines();
    let first = lines.next().unwrap_or_default();
    match first.split_once(' ') {
        Some((WEIGHTS_MAGIC, WEIGHTS_VERSION)) => {}
        Some((WEIGHTS_MAGIC, other)) => return Err(Error::VersionMismatch(other.to_string())),
        _ => return Err(Error::MalformedHeader(format!("bad magic line {first:?}"))),
    }
    let mut shapes = Vec::new();
    for line in lines {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let dims: Option<Vec<usize>> = parts.get(1..).and_then(|d| d.iter().map(|s| s.parse().ok()).collect());
        match (parts.first(), dims) {
            (Some(name), Some(d)) if d.len() == 4 => shapes.push((name.to_string(), d)),
            _ => return Err(Error::MalformedHeader(format!("bad layer line {line:?}"))),
        }
    }
    let kernels: Vec<usize> = shapes
        .iter()
        .filter_map(|(name, _)| name.strip_prefix("branch").and_then(|k| k.parse().ok()))
        .collect();
    let network = Network::new(&kernels).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let expected: Vec<(String, Vec<usize>)> = network
        .layers()
        .iter()
        .map(|l| (l.name.clone(), vec![l.out, l.input, l.kh, l.kw]))
        .collect();
    if shapes != expected {
        return Err(Error::ShapeMismatch(format!(
            "layer shapes {shapes:?} do not match the architecture {expected:?}"
        )));
    }
    let payload = &bytes[header_end + 2..];
    let needed = network.n_params() * 4;
    if payload.len() < needed {
        return Err(Error::TruncatedPayload {
            expected: needed,
            found: payload.len(),
        });
    }
    if payload.len() > needed {
        return Err(Error::ShapeMismatch(format!(
            "{} trailing bytes after weights",
            payload.len() - needed
        )));
    }
    let params = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    RegressorModel::from_params(network, params)
}

pub fn save_weights(model: &RegressorModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_weights(model)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<RegressorModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub kernels: String,
    pub holdout_loss: f64,
    pub infer_ms: f64,
}

/// Kernel sizes in ascending order joined by `+`, e.g. `3+5+7`.
pub fn kernel_label(kernels: &[usize]) -> String {
    let mut sorted = kernels.to_vec();
    sorted.sort_unstable();
    sorted
        .iter()
        .map(|k| k.to_string())
        .collect::<Vec<_>>()
        .join("+")
}

/// Mean per-image forward time in milliseconds over `samples`.
pub fn inference_ms(model: &RegressorModel, samples: &[(Vec<f64>, f64)]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let params = model.params_f64();
    let started = Instant::now();
    let mut sink = 0.0;
    for (x, _) in samples {
        sink += model.network.forward(&params, x)?;
    }
    std::hint::black_box(sink);
    Ok(started.elapsed().as_secs_f64() * 1e3 / samples.len() as f64)
}

/// Trains one model per kernel subset from the same seed and reports the
/// holdout MSE and per-image inference time of each.
pub fn kernel_ablation(
    data: &PreparedSet,
    kernel_sets: &[Vec<usize>],
    hyper: &TrainHyper,
    seed: u64,
) -> Result<Vec<(AblationRow, RegressorModel)>> {
    kernel_sets
        .iter()
        .map(|set| {
            let mut model = init_model_with(set, seed)?;
            let report = train_prepared(&mut model, data, hyper, seed)?;
            let timing_set = if data.holdout.is_empty() { &data.train } else { &data.holdout };
            let row = AblationRow {
                kernels: kernel_label(set),
                holdout_loss: report.holdout_mse,
                infer_ms: inference_ms(&model, timing_set)?,
            };
            Ok((row, model))
        })
        .collect()
}
