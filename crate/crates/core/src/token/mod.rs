//! First-order Markov token models: a Dirichlet ground truth, a smoothed
//! bigram teacher with temperature-scaled sampling, a low-rank student, and
//! per-token precision/recall.

mod lowrank;
mod markov;

use std::borrow::Cow;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::{MetricEstimate, DEFAULT_LOG_FLOOR};

pub use lowrank::{
    fit_lowrank_em, fit_lowrank_em_from, fit_lowrank_em_with_report, random_init, LowRankMarkov,
    LowRankReport, TokenFitConfig,
};
pub use markov::{
    fit_markov, make_ground_truth, mean_row_entropy, sample_sequences, temper_markov, MarkovModel,
};

/// Anything that defines start and transition probabilities over a vocabulary.
pub trait TokenModel {
    fn vocab_size(&self) -> usize;
    /// The model as an explicit `V × V` transition table.
    fn as_markov(&self) -> Cow<'_, MarkovModel>;
}

/// Fixed-length token sequences over a vocabulary `[0, V)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceDataset {
    pub sequences: Vec<Vec<usize>>,
    pub max_len: usize,
}

impl SequenceDataset {
    pub fn new(sequences: Vec<Vec<usize>>) -> Result<Self> {
        if sequences.is_empty() {
            return Err(Error::invalid("sequence dataset is empty"));
        }
        if sequences.iter().any(|s| s.len() < 2) {
            return Err(Error::invalid("every sequence needs at least two tokens"));
        }
        let max_len = sequences.iter().map(Vec::len).max().unwrap_or(0);
        Ok(Self { sequences, max_len })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn max_token(&self) -> usize {
        self.sequences.iter().flatten().copied().max().unwrap_or(0)
    }

    /// `counts[prev * v + next]` over all adjacent pairs.
    pub fn bigram_counts(&self, v: usize) -> Vec<f64> {
        let mut counts = vec![0.0; v * v];
        for seq in &self.sequences {
            for w in seq.windows(2) {
                counts[w[0] * v + w[1]] += 1.0;
            }
        }
        counts
    }

    pub fn first_token_counts(&self, v: usize) -> Vec<f64> {
        let mut counts = vec![0.0; v];
        for seq in &self.sequences {
            counts[seq[0]] += 1.0;
        }
        counts
    }
}

/// Log-likelihood of one sequence; impossible steps contribute the floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceScore {
    pub log_likelihood: f64,
    pub clamped: usize,
    pub len: usize,
}

impl SequenceScore {
    pub fn per_token(&self) -> f64 {
        self.log_likelihood / self.len as f64
    }
}

/// `ln start[s₀] + Σ_t ln p(s_t | s_{t−1})`.
pub fn seq_log_likelihood<M: TokenModel + ?Sized>(m: &M, seq: &[usize]) -> Result<SequenceScore> {
    let v = m.vocab_size();
    if seq.is_empty() {
        return Err(Error::invalid("cannot score an empty sequence"));
    }
    if let Some(t) = seq.iter().find(|&&t| t >= v) {
        return Err(Error::invalid(format!(
            "token {t} outside vocabulary of size {v}"
        )));
    }
    Ok(m.as_markov().score_sequence(seq))
}

fn check_vocab(a: usize, b: usize, n: usize, t: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: b,
            found: a,
        });
    }
    if n < 2 || t < 2 {
        return Err(Error::invalid(
            "token metrics need n ≥ 2 sequences of length t ≥ 2",
        ));
    }
    Ok(())
}

/// Mean per-token log-likelihood under `scorer` of sequences sampled from
/// `sampler`, with the standard error taken over sequences.
fn cross_score(
    sampler: &MarkovModel,
    scorer: &MarkovModel,
    n: usize,
    t: usize,
    seed: u64,
) -> Result<MetricEstimate> {
    let data = sample_sequences(sampler, n, t, seed)?;
    let scored: Vec<SequenceScore> = data
        .sequences
        .par_iter()
        .map(|s| scorer.score_sequence(s))
        .collect();
    let clamped: usize = scored.iter().map(|s| s.clamped).sum();
    let mut per_token: Vec<f64> = scored.iter().map(SequenceScore::per_token).collect();
    let mut est = MetricEstimate::from_scores(&mut per_token, DEFAULT_LOG_FLOOR);
    est.clamped += clamped;
    Ok(est)
}

/// Per-token ground-truth log-likelihood of student samples.
pub fn token_precision<S, G>(
    student: &S,
    ground: &G,
    n: usize,
    t: usize,
    seed: u64,
) -> Result<MetricEstimate>
where
    S: TokenModel + ?Sized,
    G: TokenModel + ?Sized,
{
    check_vocab(student.vocab_size(), ground.vocab_size(), n, t)?;
    cross_score(&student.as_markov(), &ground.as_markov(), n, t, seed)
}

/// Per-token student log-likelihood of ground-truth samples.
pub fn token_recall<S, G>(
    student: &S,
    ground: &G,
    n: usize,
    t: usize,
    seed: u64,
) -> Result<MetricEstimate>
where
    S: TokenModel + ?Sized,
    G: TokenModel + ?Sized,
{
    check_vocab(student.vocab_size(), ground.vocab_size(), n, t)?;
    cross_score(&ground.as_markov(), &student.as_markov(), n, t, seed)
}
