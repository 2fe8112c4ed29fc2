//! Fractal image synthesis, Hausdorff-dimension (HD) estimation, and the
//! diversity machinery built on top of it: a momentum-driven monotone
//! loss-weight schedule, a toy recursive cascade generator trained with a
//! hybrid generative + HD objective, and HD-thresholded rejection sampling.
//!
//! Module map:
//!
//! * [`image`] – grayscale rasters, binary masks, PGM I/O, area resampling.
//! * [`synth`] – canonical fractals, IFS chaos game, Moran dimensions, datasets.
//! * [`classical`] – box counting, power spectrum, perimeter-area, sandbox.
//! * [`bench`] – per-method accuracy and runtime over a labeled dataset.
//! * [`regressor`] – a small multi-scale convolutional HD regressor.
//! * [`scheduler`] – the monotone momentum schedule and its baselines.
//! * [`toy`] – the three-level stochastic cascade generator and hybrid training.
//! * [`sampling`] – HD rejection sampling and threshold sweeps.
//!
//! All randomness flows from explicit `u64` seeds through [`rng::seeded`].

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod classical;
pub mod error;
pub mod image;
pub mod regressor;
pub mod rng;
pub mod sampling;
pub mod scheduler;
pub mod stats;
pub mod synth;
pub mod toy;

pub use classical::{EstimatorConfig, HdEstimate, Method};
pub use error::{Error, Result};
pub use image::{BinaryMask, ImageGrid};
pub use regressor::{RegressorModel, TrainHyper, TrainReport};
pub use sampling::{SampleSet, SamplingConfig, SampleSource};
pub use scheduler::{MmdsConfig, SchedulerState};
pub use synth::{DatasetManifest, Family, IfsSystem};
pub use toy::{CascadeParams, HybridLossRecord};
