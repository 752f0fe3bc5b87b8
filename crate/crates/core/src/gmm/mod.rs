//! Gaussian mixtures: density evaluation, sampling, EM fitting, weight
//! tempering and closed-form cross-entropies.

mod cross_entropy;
mod em;
mod temper;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::log_sum_exp;
use crate::rng::{rng_from_seed, Rng};

pub use cross_entropy::{gaussian_cross_entropy, mixture_cross_entropy_bound};
pub use em::{fit_em, fit_em_with_report, FitConfig, FitReport};
pub use temper::{temper_weights, weight_entropy, TemperedWeights, MAX_BETA};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A single multivariate normal `N(mean, covariance)`.
///
/// The covariance is symmetrized on construction and its lower Cholesky
/// factor is cached; construction fails if the matrix is not positive
/// definite.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    chol_lower: DMatrix<f64>,
    log_det: f64,
}

impl GaussianComponent {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::invalid("component dimension must be at least 1"));
        }
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: covariance.nrows().max(covariance.ncols()),
            });
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("component parameters must be finite"));
        }
        let covariance = (&covariance + covariance.transpose()) * 0.5;
        let chol_lower = covariance
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { component: 0 })?
            .unpack();
        let log_det = 2.0 * chol_lower.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self {
            mean,
            covariance,
            chol_lower,
            log_det,
        })
    }

    /// `N(mean, variance · I)`.
    pub fn isotropic(mean: &[f64], variance: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(
            DVector::from_column_slice(mean),
            DMatrix::identity(d, d) * variance,
        )
    }

    pub fn standard(d: usize) -> Self {
        Self::isotropic(&vec![0.0; d], 1.0).expect("identity covariance is positive definite")
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Lower-triangular `L` with `L Lᵀ = covariance`.
    pub fn cholesky_lower(&self) -> &DMatrix<f64> {
        &self.chol_lower
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `(x − μ)ᵀ Σ⁻¹ (x − μ)` by forward substitution against the cached factor.
    pub fn mahalanobis_sq(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut buf = [0.0f64; 8];
        let mut heap;
        let z: &mut [f64] = if d <= buf.len() {
            &mut buf[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        let l = &self.chol_lower;
        let mut acc = 0.0;
        for i in 0..d {
            let mut s = x[i] - self.mean[i];
            for j in 0..i {
                s -= l[(i, j)] * z[j];
            }
            z[i] = s / l[(i, i)];
            acc += z[i] * z[i];
        }
        acc
    }

    /// `ln N(x; μ, Σ)`. The caller guarantees `x.len() == dim()`.
    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det + self.mahalanobis_sq(x))
    }

    /// Writes `μ + L z`, `z ~ N(0, I)`, into `out`.
    pub fn sample_into(&self, rng: &mut Rng, out: &mut [f64]) {
        let d = self.dim();
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for (i, o) in out.iter_mut().enumerate().take(d) {
            *o = self.mean[i] + (0..=i).map(|j| self.chol_lower[(i, j)] * z[j]).sum::<f64>();
        }
    }

    /// Differential entropy in nats.
    pub fn entropy(&self) -> f64 {
        0.5 * (self.dim() as f64 * (1.0 + LN_2PI) + self.log_det)
    }
}

/// Weighted collection of Gaussian components sharing one dimension.
///
/// Weights are non-negative and sum to one. Fitted and ground-truth mixtures
/// have strictly positive weights; a heavily tempered teacher may carry
/// weights that underflow to exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    components: Vec<GaussianComponent>,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
}

const WEIGHT_SUM_TOL: f64 = 1e-12;

impl GaussianMixture {
    pub fn new(components: Vec<GaussianComponent>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        if weights.len() != components.len() {
            return Err(Error::invalid(format!(
                "{} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        let d = components[0].dim();
        if let Some(c) = components.iter().find(|c| c.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: c.dim(),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid(
                "mixture weights must be finite and non-negative",
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Self {
            components,
            weights,
            log_weights,
        })
    }

    /// Like [`GaussianMixture::new`] but rescales positive weights to sum to one.
    pub fn normalized(components: Vec<GaussianComponent>, weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::invalid(
                "mixture weights must be finite and positive",
            ));
        }
        let total: f64 = weights.iter().sum();
        Self::new(components, weights.iter().map(|w| w / total).collect())
    }

    /// Builds a mixture from raw means and covariances; a non positive-definite
    /// covariance is reported with its component index.
    pub fn from_parts(
        means: &[Vec<f64>],
        covariances: &[Vec<Vec<f64>>],
        weights: &[f64],
    ) -> Result<Self> {
        if means.len() != covariances.len() {
            return Err(Error::invalid(format!(
                "{} means for {} covariances",
                means.len(),
                covariances.len()
            )));
        }
        let components = means
            .iter()
            .zip(covariances)
            .enumerate()
            .map(|(k, (m, c))| {
                let d = m.len();
                if c.len() != d || c.iter().any(|row| row.len() != d) {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: c.len(),
                    });
                }
                let cov = DMatrix::from_fn(d, d, |i, j| c[i][j]);
                GaussianComponent::new(DVector::from_column_slice(m), cov).map_err(|e| match e {
                    Error::NotPositiveDefinite { .. } => {
                        Error::NotPositiveDefinite { component: k }
                    }
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::normalized(components, weights.to_vec())
    }

    /// Same components with a different weight vector.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::new(self.components.clone(), weights)
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `ln Σ_k α_k N(x; μ_k, Σ_k)`, accumulated with log-sum-exp.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(self.log_density_unchecked(x))
    }

    pub(crate) fn log_density_unchecked(&self, x: &[f64]) -> f64 {
        let mut terms = [0.0f64; 16];
        let mut heap;
        let k = self.components.len();
        let buf: &mut [f64] = if k <= terms.len() {
            &mut terms[..k]
        } else {
            heap = vec![0.0; k];
            &mut heap
        };
        self.component_log_joint(x, buf);
        log_sum_exp(buf)
    }

    /// Fills `out[k] = ln α_k + ln N(x; μ_k, Σ_k)`.
    pub(crate) fn component_log_joint(&self, x: &[f64], out: &mut [f64]) {
        for ((o, c), lw) in out.iter_mut().zip(&self.components).zip(&self.log_weights) {
            *o = if *lw == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                lw + c.log_pdf(x)
            };
        }
    }

    /// Draws `n` labelled points: a component index from the weights, then a
    /// Gaussian draw through that component's Cholesky factor.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::invalid("sample size must be at least 1"));
        }
        let mut rng = rng_from_seed(seed);
        let picker =
            WeightedIndex::new(&self.weights).map_err(|e| Error::invalid(e.to_string()))?;
        let d = self.dim();
        let mut points = vec![0.0; n * d];
        let mut labels = Vec::with_capacity(n);
        for row in points.chunks_exact_mut(d) {
            let k = picker.sample(&mut rng);
            self.components[k].sample_into(&mut rng, row);
            labels.push(k);
        }
        Ok(Dataset {
            points,
            dim: d,
            labels: Some(labels),
        })
    }
}

/// `n × d` points stored row-major, optionally labelled with the index of the
/// component that generated each row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Vec<f64>,
    dim: usize,
    labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(points: Vec<f64>, dim: usize, labels: Option<Vec<usize>>) -> Result<Self> {
        if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
            return Err(Error::invalid(
                "dataset needs n ≥ 1 rows of a positive dimension",
            ));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset rows must be finite"));
        }
        if let Some(l) = &labels {
            if l.len() != points.len() / dim {
                return Err(Error::invalid("label count does not match row count"));
            }
        }
        Ok(Self {
            points,
            dim,
            labels,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("rows have differing lengths"));
        }
        Self::new(rows.concat(), dim, None)
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.points.chunks_exact(self.dim)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim);
        for r in self.rows() {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b;
            }
        }
        m / self.len() as f64
    }

    /// Maximum-likelihood covariance (`1/n` normalization).
    pub fn covariance(&self) -> DMatrix<f64> {
        let mean = self.mean();
        let d = self.dim;
        let mut c = DMatrix::zeros(d, d);
        for r in self.rows() {
            for i in 0..d {
                let di = r[i] - mean[i];
                for j in 0..=i {
                    c[(i, j)] += di * (r[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                c[(j, i)] = c[(i, j)];
            }
        }
        c / self.len() as f64
    }
}

/// Rectangular grid of isotropic modes, serializable for configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub variance: f64,
    /// Per-column weights; each column's weight is split evenly between its
    /// modes and the whole vector is renormalized.
    pub column_weights: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            x: vec![-4.5, -1.5, 1.5, 4.5],
            y: vec![-0.75, 0.75],
            variance: 0.03,
            column_weights: vec![0.15, 0.33, 0.26, 0.24],
        }
    }
}

impl GridSpec {
    pub fn to_mixture(&self) -> Result<GaussianMixture> {
        if self.column_weights.len() != self.x.len() {
            return Err(Error::invalid(format!(
                "{} column weights for {} columns",
                self.column_weights.len(),
                self.x.len()
            )));
        }
        if self.y.is_empty() {
            return Err(Error::invalid("grid needs at least one row"));
        }
        let mut components = Vec::new();
        let mut weights = Vec::new();
        for y in &self.y {
            for (x, w) in self.x.iter().zip(&self.column_weights) {
                components.push(GaussianComponent::isotropic(&[*x, *y], self.variance)?);
                weights.push(w / self.y.len() as f64);
            }
        }
        GaussianMixture::normalized(components, weights)
    }
}

/// Default ground truth: eight isotropic modes on a 4 × 2 grid.
pub fn default_ground_truth() -> GaussianMixture {
    GridSpec::default()
        .to_mixture()
        .expect("default grid is valid")
}
