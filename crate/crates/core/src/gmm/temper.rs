use crate::error::{Error, Result};
use crate::math::{entropy, softmax_in_place};

/// Largest exponent accepted by [`temper_weights`]; larger values (including
/// `+inf`) are capped here. At this exponent any non-maximal weight underflows
/// to exactly zero, so the result is the one-hot limit.
pub const MAX_BETA: f64 = 1e6;

/// Mixture weights raised to a power and renormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperedWeights {
    pub base_weights: Vec<f64>,
    pub beta: f64,
    pub tempered: Vec<f64>,
}

/// `α_k(β) ∝ exp(β ln α_k)`, normalized in log space.
///
/// `w` must be strictly positive; it is normalized before use, so scaled
/// weight vectors give identical results.
pub fn temper_weights(w: &[f64], beta: f64) -> Result<TemperedWeights> {
    if w.is_empty() {
        return Err(Error::invalid("weight vector is empty"));
    }
    if let Some((k, v)) = w
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v > 0.0) || !v.is_finite())
    {
        return Err(Error::invalid(format!(
            "weight {k} is {v}; weights must be positive"
        )));
    }
    if !(beta >= 1.0) {
        return Err(Error::invalid(format!("beta must be ≥ 1, got {beta}")));
    }
    let beta = beta.min(MAX_BETA);
    let total: f64 = w.iter().sum();
    let base_weights: Vec<f64> = w.iter().map(|v| v / total).collect();
    let mut tempered: Vec<f64> = w.iter().map(|v| beta * v.ln()).collect();
    softmax_in_place(&mut tempered);
    Ok(TemperedWeights {
        base_weights,
        beta,
        tempered,
    })
}

/// `−Σ w ln w` in nats, with `0 ln 0 = 0`.
pub fn weight_entropy(w: &[f64]) -> f64 {
    entropy(w)
}
