use std::borrow::Cow;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_distr::Gamma;

use crate::error::{Error, Result};
use crate::math::{entropy, softmax_in_place};
use crate::metrics::DEFAULT_LOG_FLOOR;
use crate::rng::{derive_seed, rng_from_seed, Rng};

use super::{SequenceDataset, SequenceScore, TokenModel};

const ROW_SUM_TOL: f64 = 1e-12;

/// Start distribution plus a row-stochastic `V × V` transition matrix stored
/// row-major, rows indexed by the previous token.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovModel {
    vocab_size: usize,
    start: Vec<f64>,
    transitions: Vec<f64>,
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::invalid(format!(
            "{what} has negative or non-finite entries"
        )));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::invalid(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

impl MarkovModel {
    pub fn new(start: Vec<f64>, transitions: Vec<f64>) -> Result<Self> {
        let v = start.len();
        if v < 1 {
            return Err(Error::invalid("vocabulary must be nonempty"));
        }
        if transitions.len() != v * v {
            return Err(Error::invalid(format!(
                "transition table has {} entries, expected {}",
                transitions.len(),
                v * v
            )));
        }
        check_distribution(&start, "start distribution")?;
        for (i, row) in transitions.chunks_exact(v).enumerate() {
            check_distribution(row, &format!("transition row {i}"))?;
        }
        Ok(Self {
            vocab_size: v,
            start,
            transitions,
        })
    }

    pub fn start(&self) -> &[f64] {
        &self.start
    }

    pub fn row(&self, prev: usize) -> &[f64] {
        &self.transitions[prev * self.vocab_size..(prev + 1) * self.vocab_size]
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transitions
    }

    pub fn transition(&self, prev: usize, next: usize) -> f64 {
        self.transitions[prev * self.vocab_size + next]
    }

    /// Tokens must be in range; zero-probability steps score the floor each.
    pub(crate) fn score_sequence(&self, seq: &[usize]) -> SequenceScore {
        let mut clamped = 0;
        let mut step = |p: f64| {
            if p > 0.0 {
                p.ln()
            } else {
                clamped += 1;
                DEFAULT_LOG_FLOOR
            }
        };
        let mut ll = step(self.start[seq[0]]);
        for w in seq.windows(2) {
            ll += step(self.transition(w[0], w[1]));
        }
        SequenceScore {
            log_likelihood: ll,
            clamped,
            len: seq.len(),
        }
    }
}

impl TokenModel for MarkovModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn as_markov(&self) -> Cow<'_, MarkovModel> {
        Cow::Borrowed(self)
    }
}

fn dirichlet(gamma: &Gamma<f64>, v: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let draws: Vec<f64> = (0..v).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return draws.into_iter().map(|x| x / total).collect();
        }
    }
}

/// Start vector and every transition row drawn from a symmetric
/// Dirichlet(`concentration`). Small concentrations give peaky rows.
pub fn make_ground_truth(v: usize, concentration: f64, seed: u64) -> Result<MarkovModel> {
    if v < 2 {
        return Err(Error::invalid("vocabulary size must be ≥ 2"));
    }
    if !(concentration > 0.0) || !concentration.is_finite() {
        return Err(Error::invalid("concentration must be positive and finite"));
    }
    let gamma = Gamma::new(concentration, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = rng_from_seed(seed);
    let start = dirichlet(&gamma, v, &mut rng);
    let transitions = (0..v)
        .flat_map(|_| dirichlet(&gamma, v, &mut rng))
        .collect();
    MarkovModel::new(start, transitions)
}

/// `n` sequences of exactly `t` tokens.
pub fn sample_sequences<M: TokenModel + ?Sized>(
    m: &M,
    n: usize,
    t: usize,
    seed: u64,
) -> Result<SequenceDataset> {
    if n < 1 || t < 2 {
        return Err(Error::invalid("need n ≥ 1 sequences of length t ≥ 2"));
    }
    let m = m.as_markov();
    let v = m.vocab_size();
    let weighted = |p: &[f64]| WeightedIndex::new(p).map_err(|e| Error::invalid(e.to_string()));
    let start = weighted(m.start())?;
    let rows = (0..v)
        .map(|i| weighted(m.row(i)))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = rng_from_seed(derive_seed(seed, 0));
    let sequences = (0..n)
        .map(|_| {
            let mut seq = Vec::with_capacity(t);
            let mut tok = start.sample(&mut rng);
            seq.push(tok);
            for _ in 1..t {
                tok = rows[tok].sample(&mut rng);
                seq.push(tok);
            }
            seq
        })
        .collect();
    SequenceDataset::new(sequences)
}

fn temper_row(p: &[f64], inv_tau: f64) -> Vec<f64> {
    let mut logits: Vec<f64> = p.iter().map(|x| inv_tau * x.ln()).collect();
    softmax_in_place(&mut logits);
    logits
}

/// Replaces the start vector and every row by `p^{1/τ}`, renormalized in
/// log space. `τ = 1` returns the model unchanged.
pub fn temper_markov(m: &MarkovModel, tau: f64) -> Result<MarkovModel> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::invalid(format!("tau must lie in (0, 1], got {tau}")));
    }
    if tau == 1.0 {
        return Ok(m.clone());
    }
    if m.start.iter().chain(&m.transitions).any(|&p| p <= 0.0) {
        return Err(Error::invalid(
            "tempering with tau < 1 needs strictly positive probabilities; smooth first",
        ));
    }
    let inv_tau = 1.0 / tau;
    let v = m.vocab_size;
    let start = temper_row(&m.start, inv_tau);
    let transitions = m
        .transitions
        .chunks_exact(v)
        .flat_map(|r| temper_row(r, inv_tau))
        .collect();
    MarkovModel::new(start, transitions)
}

/// Add-δ smoothed bigram estimate. Rows never observed with `δ = 0` fall back
/// to uniform.
pub fn fit_markov(data: &SequenceDataset, v: usize, delta: f64) -> Result<MarkovModel> {
    if data.is_empty() {
        return Err(Error::invalid("cannot fit an empty sequence dataset"));
    }
    if v <= data.max_token() {
        return Err(Error::invalid(format!(
            "vocabulary size {v} does not cover token {}",
            data.max_token()
        )));
    }
    if !(delta >= 0.0) {
        return Err(Error::invalid("smoothing delta must be ≥ 0"));
    }
    let normalize = |counts: &[f64]| -> Vec<f64> {
        let total: f64 = counts.iter().sum::<f64>() + delta * counts.len() as f64;
        if total > 0.0 {
            counts.iter().map(|c| (c + delta) / total).collect()
        } else {
            vec![1.0 / counts.len() as f64; counts.len()]
        }
    };
    let start = normalize(&data.first_token_counts(v));
    let transitions = data
        .bigram_counts(v)
        .chunks_exact(v)
        .flat_map(normalize)
        .collect();
    MarkovModel::new(start, transitions)
}

/// Average entropy of the transition rows, in nats.
pub fn mean_row_entropy(m: &MarkovModel) -> f64 {
    let v = m.vocab_size;
    m.transitions.chunks_exact(v).map(entropy).sum::<f64>() / v as f64
}
