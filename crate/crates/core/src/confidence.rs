//! Log-probability confidence.
//!
//! The probe model's mean token log-probability `l` is mapped onto [0, 1] by
//! `c = (l - floor) / |floor|`, clamped. With the default floor of -3 a mean of
//! -3 nats maps to 0, 0 nats maps to 1, and the default acceptance threshold
//! of 0.5 corresponds to a mean of -1.5 nats (geometric-mean token probability
//! of about 22%).

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_FLOOR: f64 = -3.0;
pub const DEFAULT_TAU: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum ConfidenceError {
    #[error("mean log-probability of an empty token sequence is undefined")]
    EmptySequence,
    #[error("confidence floor must be negative, got {0}")]
    InvalidFloor(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    /// Natural log of the token probability.
    pub logprob: f64,
}

impl TokenLogprob {
    pub fn new(token: impl Into<String>, logprob: f64) -> Self {
        Self {
            token: token.into(),
            logprob,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceScore {
    pub mean_logprob: f64,
    pub floor: f64,
    pub value: f64,
}

impl ConfidenceScore {
    pub fn from_tokens(tokens: &[TokenLogprob], floor: f64) -> Result<Self, ConfidenceError> {
        let mean = mean_logprob(tokens)?;
        Self::from_mean(mean, floor)
    }

    pub fn from_mean(mean_logprob: f64, floor: f64) -> Result<Self, ConfidenceError> {
        Ok(Self {
            mean_logprob,
            floor,
            value: normalize(mean_logprob, floor)?,
        })
    }

    /// Score used when the probe produced no usable signal.
    pub fn zero(floor: f64) -> Self {
        Self {
            mean_logprob: floor,
            floor,
            value: 0.0,
        }
    }
}

/// Arithmetic mean over every reported token, punctuation included.
pub fn mean_logprob(tokens: &[TokenLogprob]) -> Result<f64, ConfidenceError> {
    if tokens.is_empty() {
        return Err(ConfidenceError::EmptySequence);
    }
    Ok(tokens.iter().map(|t| t.logprob).sum::<f64>() / tokens.len() as f64)
}

pub fn normalize(mean_logprob: f64, floor: f64) -> Result<f64, ConfidenceError> {
    if !(floor < 0.0) || !floor.is_finite() {
        return Err(ConfidenceError::InvalidFloor(floor));
    }
    if mean_logprob.is_nan() {
        return Ok(0.0);
    }
    Ok(((mean_logprob - floor) / floor.abs()).clamp(0.0, 1.0))
}

/// Inverse of [`normalize`] on its unclamped range: the mean log-probability
/// that yields confidence `c`.
pub fn mean_for_confidence(c: f64, floor: f64) -> f64 {
    floor + c * floor.abs()
}
