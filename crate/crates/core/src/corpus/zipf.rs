//! Zipf dose model `w_r = w_1 * r^(-z)`.
//!
//! Exponents are quantized into 15 tokens: 14 intervals of width 0.2 over
//! `[0, 2.8)` and an open-ended last interval. A token decodes to its
//! interval center.

use alloc::vec::Vec;

use super::types::{Dose, MAX_DOSE_GRAMS};
use super::CorpusError;

pub const N_ZIPF_TOKENS: u8 = 15;
pub const INTERVAL_WIDTH: f64 = 0.2;

/// Exponent plus its quantized token.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ZipfModel {
    pub exponent: f64,
    pub w_max: f64,
    pub interval_token: u8,
}

impl ZipfModel {
    pub fn fit(weights: &[f64]) -> Result<Self, CorpusError> {
        let exponent = fit_zipf_exponent(weights)?;
        Ok(ZipfModel {
            exponent,
            w_max: weights[0],
            interval_token: zipf_token(exponent)?,
        })
    }
}

/// Log-log least squares through the anchor `w_1`:
/// `z = sum ln(r) ln(w_1/w_r) / sum ln(r)^2` over `r = 2..n`.
pub fn fit_zipf_exponent(weights: &[f64]) -> Result<f64, CorpusError> {
    let first = *weights.first().ok_or(CorpusError::EmptyWeights)?;
    if let Some(&w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(CorpusError::NonPositiveWeight(w));
    }
    if let Some(i) = weights.windows(2).position(|w| w[1] > w[0]) {
        return Err(CorpusError::IncreasingWeights(i + 1));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &w) in weights.iter().enumerate().skip(1) {
        let lr = libm::log((i + 1) as f64);
        num += lr * libm::log(first / w);
        den += lr * lr;
    }
    Ok(if den == 0.0 { 0.0 } else { num / den })
}

pub fn zipf_token(z: f64) -> Result<u8, CorpusError> {
    if !(z >= 0.0) {
        return Err(CorpusError::NegativeExponent(z));
    }
    let t = libm::floor(z * (1.0 / INTERVAL_WIDTH));
    Ok(if t >= (N_ZIPF_TOKENS - 1) as f64 { N_ZIPF_TOKENS - 1 } else { t as u8 })
}

/// Center of the interval for `token` (0.1, 0.3, ..., 2.9).
pub fn token_center(token: u8) -> f64 {
    let t = token.min(N_ZIPF_TOKENS - 1) as f64;
    (2.0 * t + 1.0) * INTERVAL_WIDTH / 2.0
}

/// Unrounded `w_max * r^(-z)` for `r = 1..=n`.
pub fn reconstruct_weights(z: f64, w_max: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|r| w_max * libm::pow(r as f64, -z)).collect()
}

/// Rounds grams to the 0.1 g display grid.
pub fn round_to_decigram(g: f64) -> f64 {
    libm::round(g * 10.0) / 10.0
}

/// Doses for ranks `1..=n` at `z` with the 5 g anchor, on the 0.1 g grid and
/// never below 0.1 g.
pub fn model_doses(z: f64, n: usize) -> Vec<Dose> {
    reconstruct_weights(z, MAX_DOSE_GRAMS, n)
        .into_iter()
        .map(Dose::saturating_from_grams)
        .collect()
}
