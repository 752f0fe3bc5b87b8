//! Entropy-controlled knowledge distillation experiments.
//!
//! Two settings share the same ground truth → teacher → student chain:
//!
//! * [`gmm`] and [`pipeline`]: Gaussian mixtures. A `K'`-component teacher is
//!   fit to ground-truth samples, its mixture weights are sharpened with an
//!   exponent `β ≥ 1`, and a smaller student is fit to samples from the
//!   sharpened teacher.
//! * [`token`]: a first-order Markov token model with a smoothed bigram
//!   teacher, temperature-scaled sampling, and a low-rank (aggregate Markov)
//!   student whose latent dimension caps how many next-token modes it can hold.
//!
//! Students are scored with Monte-Carlo [`metrics`]: precision is the
//! ground-truth log-likelihood of student samples, recall is the student
//! log-likelihood of ground-truth samples. [`harness`] runs seeded sweeps
//! and writes CSV results.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod gmm;
pub mod harness;
pub mod math;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod token;

pub use error::{Error, Result};
pub use gmm::{Dataset, FitConfig, GaussianComponent, GaussianMixture, TemperedWeights};
pub use metrics::{DensityGrid, MetricEstimate};
pub use pipeline::{ComponentMapping, PipelineConfig, PipelineResult};
pub use token::{LowRankMarkov, MarkovModel, SequenceDataset, TokenFitConfig};
