//! Monte-Carlo precision and recall of a generative model against a ground
//! truth, and log-density grids for contour plots.
//!
//! * precision: `E_{x ~ student}[ln p_ground(x)]`, sample quality.
//! * recall: `E_{x ~ ground}[ln p_student(x)]`, coverage.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gmm::{Dataset, GaussianMixture};
use crate::math::mean_and_std_error;
use crate::rng::derive_seed;

/// Per-sample log-likelihood scores are clamped from below at this value.
pub const DEFAULT_LOG_FLOOR: f64 = -700.0;
pub const DEFAULT_MC_SAMPLES: usize = 100_000;

const SCORE_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: usize,
    /// Number of scores raised to the floor.
    pub clamped: usize,
}

impl MetricEstimate {
    /// Mean and standard error of `scores` after flooring each at `floor`.
    pub fn from_scores(scores: &mut [f64], floor: f64) -> Self {
        let mut clamped = 0;
        for s in scores.iter_mut() {
            if !(*s >= floor) {
                *s = floor;
                clamped += 1;
            }
        }
        let (mean, std_error) = mean_and_std_error(scores);
        Self {
            mean,
            std_error,
            n_samples: scores.len(),
            clamped,
        }
    }

    /// `sqrt(se_a² + se_b²)`.
    pub fn combined_std_error(&self, other: &MetricEstimate) -> f64 {
        self.std_error.hypot(other.std_error)
    }
}

/// Scores every row of `data` under `model`. Evaluation is parallel; the
/// reduction runs over the ordered score vector.
pub fn score_dataset(
    model: &GaussianMixture,
    data: &Dataset,
    floor: f64,
) -> Result<MetricEstimate> {
    if data.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: data.dim(),
        });
    }
    let d = data.dim();
    let mut scores = vec![0.0; data.len()];
    scores
        .par_chunks_mut(SCORE_CHUNK)
        .zip(data.points().par_chunks(SCORE_CHUNK * d))
        .for_each(|(out, pts)| {
            for (o, x) in out.iter_mut().zip(pts.chunks_exact(d)) {
                *o = model.log_density_unchecked(x);
            }
        });
    Ok(MetricEstimate::from_scores(&mut scores, floor))
}

fn check_pair(a: &GaussianMixture, b: &GaussianMixture, n: usize) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: b.dim(),
            found: a.dim(),
        });
    }
    if n < 2 {
        return Err(Error::invalid("Monte-Carlo estimates need n ≥ 2"));
    }
    Ok(())
}

pub fn precision_mc(
    student: &GaussianMixture,
    ground: &GaussianMixture,
    n: usize,
    seed: u64,
) -> Result<MetricEstimate> {
    precision_mc_with_floor(student, ground, n, seed, DEFAULT_LOG_FLOOR)
}

pub fn recall_mc(
    student: &GaussianMixture,
    ground: &GaussianMixture,
    n: usize,
    seed: u64,
) -> Result<MetricEstimate> {
    recall_mc_with_floor(student, ground, n, seed, DEFAULT_LOG_FLOOR)
}

pub fn precision_mc_with_floor(
    student: &GaussianMixture,
    ground: &GaussianMixture,
    n: usize,
    seed: u64,
    floor: f64,
) -> Result<MetricEstimate> {
    check_pair(student, ground, n)?;
    let samples = student.sample(n, derive_seed(seed, 0))?;
    score_dataset(ground, &samples, floor)
}

pub fn recall_mc_with_floor(
    student: &GaussianMixture,
    ground: &GaussianMixture,
    n: usize,
    seed: u64,
    floor: f64,
) -> Result<MetricEstimate> {
    check_pair(student, ground, n)?;
    let samples = ground.sample(n, derive_seed(seed, 0))?;
    score_dataset(student, &samples, floor)
}

/// Log-density of a 2-D model on a Cartesian grid, row-major over `(y, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub x_axis: Vec<f64>,
    pub y_axis: Vec<f64>,
    pub log_density: Vec<f64>,
}

/// `(lo, hi, steps)` with `steps ≥ 2` evenly spaced points including both ends.
pub type AxisRange = (f64, f64, usize);

fn axis(range: AxisRange, name: &str) -> Result<Vec<f64>> {
    let (lo, hi, steps) = range;
    if steps < 2 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid(format!(
            "{name} range needs finite lo < hi and steps ≥ 2"
        )));
    }
    let last = (steps - 1) as f64;
    Ok((0..steps)
        .map(|i| {
            let t = i as f64 / last;
            lo * (1.0 - t) + hi * t
        })
        .collect())
}

pub fn density_grid(
    m: &GaussianMixture,
    x_range: AxisRange,
    y_range: AxisRange,
) -> Result<DensityGrid> {
    if m.dim() != 2 {
        return Err(Error::invalid(format!(
            "density grids need a 2-D model, got d = {}",
            m.dim()
        )));
    }
    let x_axis = axis(x_range, "x")?;
    let y_axis = axis(y_range, "y")?;
    let log_density = y_axis
        .par_iter()
        .flat_map_iter(|&y| {
            x_axis
                .iter()
                .map(move |&x| m.log_density_unchecked(&[x, y]))
        })
        .collect();
    Ok(DensityGrid {
        x_axis,
        y_axis,
        log_density,
    })
}

impl DensityGrid {
    pub fn at(&self, iy: usize, ix: usize) -> f64 {
        self.log_density[iy * self.x_axis.len() + ix]
    }

    /// Trapezoid-rule integral of `exp(log_density)` over the grid.
    pub fn integrate_density(&self) -> f64 {
        let trap_weights = |axis: &[f64]| -> Vec<f64> {
            let mut w = vec![0.0; axis.len()];
            for i in 0..axis.len() - 1 {
                let h = 0.5 * (axis[i + 1] - axis[i]);
                w[i] += h;
                w[i + 1] += h;
            }
            w
        };
        let wx = trap_weights(&self.x_axis);
        let wy = trap_weights(&self.y_axis);
        let mut total = 0.0;
        for (iy, wy) in wy.iter().enumerate() {
            for (ix, wx) in wx.iter().enumerate() {
                total += wy * wx * self.at(iy, ix).exp();
            }
        }
        total
    }

    /// Plain-text table: the first row holds the number of x points followed
    /// by the x axis, every following row a y value and its log-densities.
    /// Values use 17 significant digits, separated by single spaces.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        write!(out, "{}", self.x_axis.len()).unwrap();
        for x in &self.x_axis {
            write!(out, " {x:.16e}").unwrap();
        }
        out.push('\n');
        for (iy, y) in self.y_axis.iter().enumerate() {
            write!(out, "{y:.16e}").unwrap();
            for ix in 0..self.x_axis.len() {
                write!(out, " {:.16e}", self.at(iy, ix)).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_table(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::invalid(format!("malformed density table: {msg}"));
        let parse = |tok: &str| tok.parse::<f64>().map_err(|_| bad(tok));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| bad("empty"))?
            .split(' ')
            .collect();
        let nx: usize = header[0].parse().map_err(|_| bad("column count"))?;
        let x_axis = header[1..]
            .iter()
            .map(|t| parse(t))
            .collect::<Result<Vec<_>>>()?;
        if x_axis.len() != nx {
            return Err(bad("x axis length"));
        }
        let mut y_axis = Vec::new();
        let mut log_density = Vec::new();
        for line in lines {
            let vals = line.split(' ').map(parse).collect::<Result<Vec<_>>>()?;
            if vals.len() != nx + 1 {
                return Err(bad("row length"));
            }
            y_axis.push(vals[0]);
            log_density.extend_from_slice(&vals[1..]);
        }
        Ok(Self {
            x_axis,
            y_axis,
            log_density,
        })
    }

    pub fn write_table(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_table()).map_err(Error::io(path))
    }
}
