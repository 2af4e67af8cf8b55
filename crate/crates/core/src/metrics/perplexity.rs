//! Perplexity from mean negative log-likelihood (nats per token) and the
//! byte-fallback correction `PPL_info = PPL_token^k`, where `k` is the mean
//! number of tokens per codepoint.

use num_traits::Float;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PerplexityError {
    #[error("mean NLL must be finite, got {0}")]
    NonFiniteNll(f64),
    #[error("token perplexity {0} is below 1")]
    BelowOne(f64),
    #[error("k must be a finite value of at least 1, got {0}")]
    BadK(f64),
    #[error("token count must be positive")]
    NoTokens,
}

fn lossy<T: Float>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

pub fn ppl_from_nll<T: Float>(mean_nll: T) -> Result<T, PerplexityError> {
    if !mean_nll.is_finite() {
        return Err(PerplexityError::NonFiniteNll(lossy(mean_nll)));
    }
    Ok(mean_nll.exp())
}

pub fn normalize_ppl<T: Float>(ppl_token: T, k: T) -> Result<T, PerplexityError> {
    if !(ppl_token >= T::one()) || !ppl_token.is_finite() {
        return Err(PerplexityError::BelowOne(lossy(ppl_token)));
    }
    if !(k >= T::one()) || !k.is_finite() {
        return Err(PerplexityError::BadK(lossy(k)));
    }
    Ok(ppl_token.powf(k))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerplexityRecord<T> {
    pub mean_nll: T,
    pub ppl_token: T,
    pub k: T,
    pub ppl_info: T,
}

impl<T: Float> PerplexityRecord<T> {
    pub fn from_nll(mean_nll: T, k: T) -> Result<Self, PerplexityError> {
        let ppl_token = ppl_from_nll(mean_nll)?;
        let ppl_info = normalize_ppl(ppl_token, k)?;
        Ok(Self { mean_nll, ppl_token, k, ppl_info })
    }

    pub fn from_totals(token_count: u64, total_nll: T, k: T) -> Result<Self, PerplexityError> {
        if token_count == 0 {
            return Err(PerplexityError::NoTokens);
        }
        Self::from_nll(total_nll / T::from(token_count).ok_or(PerplexityError::NoTokens)?, k)
    }

    pub fn from_ppl(ppl_token: T, k: T) -> Result<Self, PerplexityError> {
        let ppl_info = normalize_ppl(ppl_token, k)?;
        Ok(Self { mean_nll: ppl_token.ln(), ppl_token, k, ppl_info })
    }
}
