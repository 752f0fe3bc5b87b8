use std::borrow::Cow;

use rand::distr::Distribution;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, Rng};

use super::{MarkovModel, SequenceDataset, TokenModel};

const LATENT_USAGE_FLOOR: f64 = 1e-8;

/// Settings for the smoothed teacher and the low-rank student.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenFitConfig {
    /// Add-δ smoothing for the teacher bigram table and every start vector.
    pub smoothing_delta: f64,
    /// Number of latent classes in the student.
    pub rank: usize,
    pub em_max_iter: usize,
    /// Stop once the per-bigram log-likelihood gain drops below this.
    pub em_tol: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TokenFitConfig {
    fn default() -> Self {
        Self {
            smoothing_delta: 0.01,
            rank: 8,
            em_max_iter: 500,
            em_tol: 1e-10,
            seed: 0,
        }
    }
}

impl TokenFitConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: &str| {
            Err(Error::Config {
                field: field.to_string(),
                message: message.to_string(),
            })
        };
        if !(self.smoothing_delta >= 0.0) || !self.smoothing_delta.is_finite() {
            return bad("smoothing_delta", "must be finite and ≥ 0");
        }
        if self.rank < 1 {
            return bad("rank", "must be ≥ 1");
        }
        if self.em_max_iter < 1 {
            return bad("em_max_iter", "must be ≥ 1");
        }
        if !(self.em_tol >= 0.0) {
            return bad("em_tol", "must be ≥ 0");
        }
        Ok(())
    }
}

/// Aggregate Markov model: `p(next | prev) = Σ_z p(z | prev) p(next | z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankMarkov {
    vocab_size: usize,
    rank: usize,
    start: Vec<f64>,
    /// `V × r`, row-major.
    prev_to_latent: Vec<f64>,
    /// `r × V`, row-major.
    latent_to_next: Vec<f64>,
}

fn rows_stochastic(m: &[f64], width: usize, what: &str) -> Result<()> {
    for (i, row) in m.chunks_exact(width).enumerate() {
        if row.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::invalid(format!(
                "{what} row {i} has negative or non-finite entries"
            )));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-10 {
            return Err(Error::invalid(format!("{what} row {i} sums to {s}")));
        }
    }
    Ok(())
}

impl LowRankMarkov {
    pub fn new(
        start: Vec<f64>,
        rank: usize,
        prev_to_latent: Vec<f64>,
        latent_to_next: Vec<f64>,
    ) -> Result<Self> {
        let v = start.len();
        if v < 1 || rank < 1 {
            return Err(Error::invalid("vocabulary and rank must be nonempty"));
        }
        if prev_to_latent.len() != v * rank || latent_to_next.len() != rank * v {
            return Err(Error::invalid(
                "factor shapes do not match vocabulary and rank",
            ));
        }
        rows_stochastic(&start, v, "start")?;
        rows_stochastic(&prev_to_latent, rank, "prev_to_latent")?;
        rows_stochastic(&latent_to_next, v, "latent_to_next")?;
        Ok(Self {
            vocab_size: v,
            rank,
            start,
            prev_to_latent,
            latent_to_next,
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn start(&self) -> &[f64] {
        &self.start
    }

    pub fn prev_to_latent(&self) -> &[f64] {
        &self.prev_to_latent
    }

    pub fn latent_to_next(&self) -> &[f64] {
        &self.latent_to_next
    }

    /// `prev_to_latent · latent_to_next`, `V × V` row-major.
    pub fn implied_transitions(&self) -> Vec<f64> {
        let (v, r) = (self.vocab_size, self.rank);
        let mut out = vec![0.0; v * v];
        for i in 0..v {
            let row = &mut out[i * v..(i + 1) * v];
            for z in 0..r {
                let a = self.prev_to_latent[i * r + z];
                if a == 0.0 {
                    continue;
                }
                for (o, b) in row.iter_mut().zip(&self.latent_to_next[z * v..(z + 1) * v]) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn to_markov(&self) -> MarkovModel {
        // The factors are row-stochastic to 1e-10; renormalize so the product
        // meets the tighter tolerance of an explicit table.
        let v = self.vocab_size;
        let mut t = self.implied_transitions();
        for row in t.chunks_exact_mut(v) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= s);
        }
        let s: f64 = self.start.iter().sum();
        let start = self.start.iter().map(|x| x / s).collect();
        MarkovModel::new(start, t).expect("normalized factors give a valid table")
    }
}

impl TokenModel for LowRankMarkov {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn as_markov(&self) -> Cow<'_, MarkovModel> {
        Cow::Owned(self.to_markov())
    }
}

/// Outcome of a low-rank EM fit.
#[derive(Debug, Clone)]
pub struct LowRankReport {
    pub model: LowRankMarkov,
    /// Mean log-likelihood per observed bigram, one entry per E-step.
    pub log_likelihood_trace: Vec<f64>,
    /// Indices into the trace whose step followed a latent re-seed.
    pub reseed_iterations: Vec<usize>,
    pub converged: bool,
}

fn random_simplex(rng: &mut Rng, n: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..n)
        .map(|_| Exp1.sample(rng))
        .map(|x: f64| x + f64::MIN_POSITIVE)
        .collect();
    let s: f64 = draws.iter().sum();
    draws.into_iter().map(|x| x / s).collect()
}

fn smoothed_start(data: &SequenceDataset, v: usize, delta: f64) -> Vec<f64> {
    let counts = data.first_token_counts(v);
    let total: f64 = counts.iter().sum::<f64>() + delta * v as f64;
    counts.iter().map(|c| (c + delta) / total).collect()
}

fn check_data(data: &SequenceDataset, v: usize, cfg: &TokenFitConfig) -> Result<()> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("cannot fit an empty sequence dataset"));
    }
    if v <= data.max_token() {
        return Err(Error::invalid(format!(
            "vocabulary size {v} does not cover token {}",
            data.max_token()
        )));
    }
    if cfg.rank > v {
        return Err(Error::invalid(format!(
            "rank {} exceeds vocabulary size {v}",
            cfg.rank
        )));
    }
    Ok(())
}

/// Random factor initialization drawn from `cfg.seed`.
pub fn random_init(v: usize, cfg: &TokenFitConfig) -> LowRankMarkov {
    let r = cfg.rank;
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 0));
    let a = (0..v).flat_map(|_| random_simplex(&mut rng, r)).collect();
    let b = (0..r).flat_map(|_| random_simplex(&mut rng, v)).collect();
    LowRankMarkov {
        vocab_size: v,
        rank: r,
        start: vec![1.0 / v as f64; v],
        prev_to_latent: a,
        latent_to_next: b,
    }
}

/// Fits the student from a seeded random initialization.
pub fn fit_lowrank_em(
    data: &SequenceDataset,
    v: usize,
    cfg: &TokenFitConfig,
) -> Result<LowRankMarkov> {
    fit_lowrank_em_with_report(data, v, cfg).map(|r| r.model)
}

pub fn fit_lowrank_em_with_report(
    data: &SequenceDataset,
    v: usize,
    cfg: &TokenFitConfig,
) -> Result<LowRankReport> {
    check_data(data, v, cfg)?;
    run_em(data, v, cfg, random_init(v, cfg))
}

/// Fits the student starting from the factors of `init`.
pub fn fit_lowrank_em_from(
    data: &SequenceDataset,
    v: usize,
    cfg: &TokenFitConfig,
    init: &LowRankMarkov,
) -> Result<LowRankReport> {
    check_data(data, v, cfg)?;
    if init.vocab_size != v || init.rank != cfg.rank {
        return Err(Error::invalid(
            "initial model does not match vocabulary size and rank",
        ));
    }
    run_em(data, v, cfg, init.clone())
}

fn run_em(
    data: &SequenceDataset,
    v: usize,
    cfg: &TokenFitConfig,
    mut model: LowRankMarkov,
) -> Result<LowRankReport> {
    let r = cfg.rank;
    let counts = data.bigram_counts(v);
    let total: f64 = counts.iter().sum();
    let pairs: Vec<(usize, usize, f64)> = counts
        .iter()
        .enumerate()
        .filter(|(_, c)| **c > 0.0)
        .map(|(k, c)| (k / v, k % v, *c))
        .collect();
    let mut reseed_rng = rng_from_seed(derive_seed(cfg.seed, 1));

    let mut trace: Vec<f64> = Vec::new();
    let mut reseeds = Vec::new();
    let mut converged = false;
    let mut post = vec![0.0; r];
    for iter in 0..=cfg.em_max_iter {
        let (a, b) = (&model.prev_to_latent, &model.latent_to_next);
        let mut na = vec![0.0; v * r];
        let mut nb = vec![0.0; r * v];
        let mut ll = 0.0;
        for &(i, j, c) in &pairs {
            let mut p = 0.0;
            for z in 0..r {
                post[z] = a[i * r + z] * b[z * v + j];
                p += post[z];
            }
            if p <= 0.0 {
                return Err(Error::invalid(format!(
                    "observed bigram ({i}, {j}) has zero probability under the initial factors"
                )));
            }
            ll += c * p.ln();
            for z in 0..r {
                let w = c * post[z] / p;
                na[i * r + z] += w;
                nb[z * v + j] += w;
            }
        }
        let ll = ll / total;
        if let Some(prev) = trace.last() {
            if (ll - prev).abs() < cfg.em_tol {
                converged = true;
            }
        }
        trace.push(ll);
        if converged || iter == cfg.em_max_iter {
            break;
        }

        // M-step: rows of prev never seen keep their previous mixing weights.
        for i in 0..v {
            let row = &na[i * r..(i + 1) * r];
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                for (a, n) in model.prev_to_latent[i * r..(i + 1) * r].iter_mut().zip(row) {
                    *a = n / s;
                }
            }
        }
        let mut reseeded = false;
        for z in 0..r {
            let row = &nb[z * v..(z + 1) * v];
            let usage: f64 = row.iter().sum();
            if usage < LATENT_USAGE_FLOOR * total {
                log::warn!("latent class {z} unused at EM iteration {iter}; re-seeding");
                let fresh = random_simplex(&mut reseed_rng, v);
                model.latent_to_next[z * v..(z + 1) * v].copy_from_slice(&fresh);
                for i in 0..v {
                    model.prev_to_latent[i * r + z] += 1.0 / r as f64;
                    let s: f64 = model.prev_to_latent[i * r..(i + 1) * r].iter().sum();
                    model.prev_to_latent[i * r..(i + 1) * r]
                        .iter_mut()
                        .for_each(|x| *x /= s);
                }
                reseeded = true;
            } else {
                for (b, n) in model.latent_to_next[z * v..(z + 1) * v].iter_mut().zip(row) {
                    *b = n / usage;
                }
            }
        }
        if reseeded {
            reseeds.push(trace.len());
        }
    }
    model.start = smoothed_start(data, v, cfg.smoothing_delta);
    if !converged {
        log::debug!(
            "low-rank EM stopped after {} iterations without converging",
            cfg.em_max_iter
        );
    }
    Ok(LowRankReport {
        model,
        log_likelihood_trace: trace,
        reseed_iterations: reseeds,
        converged,
    })
}
