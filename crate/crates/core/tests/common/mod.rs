//! Independent reference computations and check routines shared by the
//! oracle, invariant and acceptance tests. Every check returns a short
//! summary on success and a description of the first failure otherwise.
#![allow(dead_code)]

use distill_lab::gmm::{
    fit_em_with_report, gaussian_cross_entropy, mixture_cross_entropy_bound, temper_weights,
    weight_entropy, FitConfig, GaussianComponent, GaussianMixture,
};
use distill_lab::metrics::{density_grid, precision_mc, recall_mc};
use distill_lab::token::{
    fit_lowrank_em_with_report, fit_markov, make_ground_truth, mean_row_entropy, sample_sequences,
    temper_markov, token_precision, token_recall, MarkovModel, TokenFitConfig,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Check = Result<String, String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Explicit-inverse Gaussian log density.
pub fn explicit_log_pdf(mean: &DVector<f64>, cov: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    let d = mean.len() as f64;
    let inv = cov.clone().try_inverse().expect("invertible covariance");
    let diff = x - mean;
    let quad = (diff.transpose() * inv * &diff)[(0, 0)];
    -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + cov.determinant().ln() + quad)
}

pub fn explicit_mixture_log_pdf(m: &GaussianMixture, x: &DVector<f64>) -> f64 {
    let terms: Vec<f64> = m
        .components()
        .iter()
        .zip(m.weights())
        .filter(|(_, w)| **w > 0.0)
        .map(|(c, w)| w.ln() + explicit_log_pdf(c.mean(), c.covariance(), x))
        .collect();
    let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()
}

pub fn random_spd(r: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| r.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(d, d) * r.random_range(0.2..1.0)
}

pub fn random_gaussian(r: &mut ChaCha8Rng, d: usize) -> GaussianComponent {
    let mean = DVector::from_fn(d, |_, _| r.random_range(-2.0..2.0));
    GaussianComponent::new(mean, random_spd(r, d)).unwrap()
}

pub fn random_mixture(r: &mut ChaCha8Rng, d: usize, k: usize) -> GaussianMixture {
    let comps = (0..k).map(|_| random_gaussian(r, d)).collect();
    let weights = (0..k).map(|_| r.random_range(0.1..1.0)).collect();
    GaussianMixture::normalized(comps, weights).unwrap()
}

/// Draws from `N(mean, cov)` through a Cholesky factor computed here.
pub fn draw(r: &mut ChaCha8Rng, mean: &DVector<f64>, cov: &DMatrix<f64>) -> DVector<f64> {
    let l = cov.clone().cholesky().expect("positive definite").l();
    let z = DVector::from_fn(mean.len(), |_, _| r.sample::<f64, _>(StandardNormal));
    mean + l * z
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Closed-form Gaussian cross-entropy against a Monte-Carlo average of the
/// explicit-inverse log density.
pub fn check_cross_entropy_mc(pairs: usize, samples: usize, seed: u64) -> Check {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for p in 0..pairs {
        let d = 1 + p % 3;
        let (a, b) = (random_gaussian(&mut r, d), random_gaussian(&mut r, d));
        let closed = gaussian_cross_entropy(&a, &b).map_err(|e| e.to_string())?;
        let b_inv = b.covariance().clone().try_inverse().unwrap();
        let b_const = -0.5
            * (d as f64 * (2.0 * std::f64::consts::PI).ln() + b.covariance().determinant().ln());
        let la = a.covariance().clone().cholesky().unwrap().l();
        let scores: Vec<f64> = (0..samples)
            .map(|_| {
                let z = DVector::from_fn(d, |_, _| r.sample::<f64, _>(StandardNormal));
                let diff = a.mean() + &la * z - b.mean();
                b_const - 0.5 * (diff.transpose() * &b_inv * &diff)[(0, 0)]
            })
            .collect();
        let (mc, se) = mean_se(&scores);
        let z = (closed - mc).abs() / se;
        worst = worst.max(z);
        if z > 3.0 {
            return Err(format!(
                "pair {p} (d = {d}): closed {closed:.6} vs MC {mc:.6} ± {se:.2e} ({z:.2} SE)"
            ));
        }
    }
    Ok(format!("{pairs} pairs, worst deviation {worst:.2} SE"))
}

/// The double-sum bound never exceeds the Monte-Carlo estimate of
/// `E_teacher[log student]` by more than 3 SE.
pub fn check_jensen_bound(pairs: usize, samples: usize, seed: u64) -> Check {
    let mut r = rng(seed);
    let mut min_slack = f64::INFINITY;
    for p in 0..pairs {
        let d = 1 + p % 3;
        let teacher = random_mixture(&mut r, d, 1 + p % 4);
        let student = random_mixture(&mut r, d, 1 + (p / 4) % 3);
        let bound = mixture_cross_entropy_bound(&teacher, &student).map_err(|e| e.to_string())?;
        let data = teacher
            .sample(samples, seed ^ p as u64)
            .map_err(|e| e.to_string())?;
        let scores: Vec<f64> = data
            .rows()
            .map(|x| explicit_mixture_log_pdf(&student, &DVector::from_column_slice(x)))
            .collect();
        let (mc, se) = mean_se(&scores);
        min_slack = min_slack.min((mc + 3.0 * se - bound) / se);
        if bound > mc + 3.0 * se {
            return Err(format!(
                "pair {p}: bound {bound:.6} above MC {mc:.6} + 3·{se:.2e}"
            ));
        }
    }
    Ok(format!("{pairs} pairs, smallest margin {min_slack:.2} SE"))
}

/// Exact per-token score of `scorer` under sequences of length `t` drawn from
/// `sampler`, summing over every sequence.
pub fn enumerate_per_token(sampler: &MarkovModel, scorer: &MarkovModel, t: usize) -> f64 {
    let v = sampler.start().len();
    let total = v.pow(t as u32);
    let mut expected = 0.0;
    for code in 0..total {
        let seq: Vec<usize> = (0..t).map(|i| (code / v.pow(i as u32)) % v).collect();
        let mut q = sampler.start()[seq[0]];
        let mut ll = scorer.start()[seq[0]].ln();
        for w in seq.windows(2) {
            q *= sampler.transition(w[0], w[1]);
            ll += scorer.transition(w[0], w[1]).ln();
        }
        if q > 0.0 {
            expected += q * ll / t as f64;
        }
    }
    expected
}

/// Token precision and recall Monte-Carlo estimates against exhaustive
/// enumeration over all `V = 3`, `t = 2` sequences.
pub fn check_token_enumeration(models: usize, n: usize, seed: u64) -> Check {
    let mut worst: f64 = 0.0;
    for i in 0..models as u64 {
        let ground = make_ground_truth(3, 0.7, seed + 2 * i).map_err(|e| e.to_string())?;
        let student = make_ground_truth(3, 1.5, seed + 2 * i + 1).map_err(|e| e.to_string())?;
        let p =
            token_precision(&student, &ground, n, 2, seed + 100 + i).map_err(|e| e.to_string())?;
        let r = token_recall(&student, &ground, n, 2, seed + 200 + i).map_err(|e| e.to_string())?;
        for (name, est, exact) in [
            ("precision", p, enumerate_per_token(&student, &ground, 2)),
            ("recall", r, enumerate_per_token(&ground, &student, 2)),
        ] {
            let z = (est.mean - exact).abs() / est.std_error;
            worst = worst.max(z);
            if z > 3.0 {
                return Err(format!(
                    "model {i} {name}: MC {:.6} vs exact {exact:.6} ({z:.2} SE)",
                    est.mean
                ));
            }
        }
    }
    Ok(format!(
        "{models} model pairs, worst deviation {worst:.2} SE"
    ))
}

fn random_weights(r: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    (0..k).map(|_| r.random_range(1e-3..1.0)).collect()
}

fn order(xs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]).then(a.cmp(&b)));
    idx
}

/// Strict ordering pairs of `base` are kept (ties may form through underflow).
fn rank_preserved(base: &[f64], sharpened: &[f64]) -> bool {
    (0..base.len())
        .all(|i| (0..base.len()).all(|j| base[i] >= base[j] || sharpened[i] <= sharpened[j]))
}

/// Normalization, entropy monotonicity and order preservation of tempered
/// mixture weights.
pub fn check_tempered_weights(cases: usize, seed: u64) -> Check {
    let mut r = rng(seed);
    let betas = [1.0, 1.5, 2.0, 5.0, 10.0, 100.0, 1e3, 1e6];
    for c in 0..cases {
        let w = random_weights(&mut r, 2 + c % 9);
        let mut last_entropy = f64::INFINITY;
        for &beta in &betas {
            let t = temper_weights(&w, beta).map_err(|e| e.to_string())?;
            let sum: f64 = t.tempered.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(format!("case {c}, beta {beta}: weights sum to {sum}"));
            }
            let h = weight_entropy(&t.tempered);
            if h > last_entropy + 1e-12 {
                return Err(format!("case {c}: entropy rose to {h} at beta {beta}"));
            }
            last_entropy = h;
            if order(&w).last() != order(&t.tempered).last() || !rank_preserved(&w, &t.tempered) {
                return Err(format!("case {c}, beta {beta}: order changed"));
            }
        }
    }
    Ok(format!("{cases} weight vectors × {} β values", betas.len()))
}

/// Entropy monotonicity in `1/τ` and order preservation of tempered Markov rows.
pub fn check_tempered_markov(cases: usize, seed: u64) -> Check {
    let taus = [1.0, 0.95, 0.875, 0.8, 0.5, 0.1];
    for c in 0..cases as u64 {
        let truth = make_ground_truth(6, 0.5, seed + c).map_err(|e| e.to_string())?;
        let data = sample_sequences(&truth, 50, 10, seed + 1000 + c).map_err(|e| e.to_string())?;
        let teacher = fit_markov(&data, 6, 0.01).map_err(|e| e.to_string())?;
        let mut last = f64::INFINITY;
        for &tau in &taus {
            let t = temper_markov(&teacher, tau).map_err(|e| e.to_string())?;
            let h = mean_row_entropy(&t);
            if h > last + 1e-12 {
                return Err(format!("case {c}: row entropy rose to {h} at tau {tau}"));
            }
            last = h;
            for i in 0..6 {
                if order(teacher.row(i)).last() != order(t.row(i)).last()
                    || !rank_preserved(teacher.row(i), t.row(i))
                {
                    return Err(format!("case {c}, tau {tau}: row {i} order changed"));
                }
            }
        }
    }
    Ok(format!("{cases} models × {} τ values", taus.len()))
}

fn monotone(trace: &[f64], skip: &[usize]) -> Result<(), String> {
    for (k, w) in trace.windows(2).enumerate() {
        if !skip.contains(&(k + 1)) && w[1] < w[0] - 1e-9 {
            return Err(format!("step {k}: {} -> {}", w[0], w[1]));
        }
    }
    Ok(())
}

/// Per-iteration log-likelihood never drops, for mixture EM and low-rank EM.
pub fn check_em_monotone(cases: usize, seed: u64) -> Check {
    let mut r = rng(seed);
    let mut steps = 0;
    for c in 0..cases as u64 {
        let d = 1 + (c % 3) as usize;
        let truth = random_mixture(&mut r, d, 3);
        let data = truth.sample(400, seed + c).map_err(|e| e.to_string())?;
        let cfg = FitConfig {
            n_restarts: 2,
            max_iter: 200,
            ..FitConfig::default()
        }
        .with_seed(seed + c);
        let report =
            fit_em_with_report(&data, 1 + (c % 4) as usize, &cfg).map_err(|e| e.to_string())?;
        monotone(&report.log_likelihood_trace, &report.reseed_iterations)
            .map_err(|e| format!("GMM case {c}: {e}"))?;
        steps += report.log_likelihood_trace.len();

        let markov = make_ground_truth(8, 0.5, seed + c).map_err(|e| e.to_string())?;
        let seqs = sample_sequences(&markov, 200, 12, seed + c).map_err(|e| e.to_string())?;
        let tcfg = TokenFitConfig {
            rank: 1 + (c % 5) as usize,
            em_max_iter: 100,
            em_tol: 0.0,
            ..TokenFitConfig::default()
        }
        .with_seed(seed + c);
        let lr = fit_lowrank_em_with_report(&seqs, 8, &tcfg).map_err(|e| e.to_string())?;
        monotone(&lr.log_likelihood_trace, &lr.reseed_iterations)
            .map_err(|e| format!("low-rank case {c}: {e}"))?;
        steps += lr.log_likelihood_trace.len();
    }
    Ok(format!(
        "{cases} GMM and {cases} low-rank fits, {steps} iterations"
    ))
}

/// Smoothed bigram tables and low-rank implied matrices are row-stochastic.
pub fn check_row_stochastic(cases: usize, seed: u64) -> Check {
    for c in 0..cases as u64 {
        let v = 4 + (c % 8) as usize;
        let truth =
            make_ground_truth(v, 0.3 + c as f64 * 0.1, seed + c).map_err(|e| e.to_string())?;
        let data = sample_sequences(&truth, 100, 8, seed + c).map_err(|e| e.to_string())?;
        let delta = 0.01 * (c % 3) as f64;
        let fit = fit_markov(&data, v, delta).map_err(|e| e.to_string())?;
        let counts = data.bigram_counts(v);
        for i in 0..v {
            let s: f64 = fit.row(i).iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(format!("case {c}: bigram row {i} sums to {s}"));
            }
            let row_count: f64 = counts[i * v..(i + 1) * v].iter().sum();
            if delta > 0.0
                && fit
                    .row(i)
                    .iter()
                    .any(|p| *p < delta / (row_count + delta * v as f64) * (1.0 - 1e-12))
            {
                return Err(format!(
                    "case {c}: bigram row {i} below the smoothing floor"
                ));
            }
        }
        let cfg = TokenFitConfig {
            rank: 1 + (c as usize % (v - 1)),
            em_max_iter: 30,
            ..TokenFitConfig::default()
        }
        .with_seed(c);
        let lr = fit_lowrank_em_with_report(&data, v, &cfg)
            .map_err(|e| e.to_string())?
            .model;
        for (i, row) in lr.implied_transitions().chunks(v).enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-10 {
                return Err(format!("case {c}: low-rank row {i} sums to {s}"));
            }
        }
    }
    Ok(format!("{cases} bigram and low-rank models"))
}

/// Trapezoid integral of 2-D mixture densities on a grid covering their mass.
pub fn check_grid_quadrature(cases: usize, seed: u64) -> Check {
    let mut models = vec![distill_lab::gmm::default_ground_truth()];
    let mut r = rng(seed);
    models.extend((0..cases).map(|_| random_mixture(&mut r, 2, 3)));
    let mut worst: f64 = 0.0;
    for (i, m) in models.iter().enumerate() {
        let grid =
            density_grid(m, (-12.0, 12.0, 481), (-12.0, 12.0, 481)).map_err(|e| e.to_string())?;
        let err = (grid.integrate_density() - 1.0).abs();
        worst = worst.max(err);
        if err > 1e-2 {
            return Err(format!("model {i}: integral off by {err:.3e}"));
        }
    }
    Ok(format!(
        "{} mixtures, worst |∫ − 1| = {worst:.1e}",
        models.len()
    ))
}

/// Precision equals recall when the student is the ground truth.
pub fn check_symmetry(cases: usize, seed: u64) -> Check {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for c in 0..cases as u64 {
        let m = random_mixture(&mut r, 1 + (c % 3) as usize, 1 + (c % 4) as usize);
        let p = precision_mc(&m, &m, 50_000, seed + c).map_err(|e| e.to_string())?;
        let q = recall_mc(&m, &m, 50_000, seed + 500 + c).map_err(|e| e.to_string())?;
        let z = (p.mean - q.mean).abs() / p.combined_std_error(&q);
        worst = worst.max(z);
        if z > 3.0 {
            return Err(format!(
                "mixture {c}: precision {} vs recall {} ({z:.2} SE)",
                p.mean, q.mean
            ));
        }
        let t = make_ground_truth(10, 0.5, seed + c).map_err(|e| e.to_string())?;
        let p = token_precision(&t, &t, 20_000, 16, seed + c).map_err(|e| e.to_string())?;
        let q = token_recall(&t, &t, 20_000, 16, seed + 500 + c).map_err(|e| e.to_string())?;
        let z = (p.mean - q.mean).abs() / p.combined_std_error(&q);
        worst = worst.max(z);
        if z > 3.0 {
            return Err(format!(
                "token model {c}: precision {} vs recall {} ({z:.2} SE)",
                p.mean, q.mean
            ));
        }
    }
    Ok(format!(
        "{cases} mixtures and {cases} token models, worst gap {worst:.2} SE"
    ))
}
