//! Shared domain types and the Bradley-Terry bound primitives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::Hidden;

/// Two judge scores closer than this are a tie.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Lowest and highest Likert score.
pub const SCORE_MIN: f64 = 1.0;
pub const SCORE_MAX: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptContext {
    pub prompt_id: usize,
    pub context_vec: Vec<f64>,
}

impl PromptContext {
    pub fn new(prompt_id: usize, context_vec: Vec<f64>) -> Result<Self> {
        if context_vec.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("prompt {prompt_id}: non-finite context")));
        }
        Ok(Self { prompt_id, context_vec })
    }
}

/// One candidate response. The true utility travels with the candidate but
/// can only be read through the oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub candidate_id: usize,
    pub generator_id: usize,
    pub feature_vec: Vec<f64>,
    pub(crate) true_utility: Hidden,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub prompt_id: usize,
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn features(&self) -> impl Iterator<Item = &[f64]> {
        self.candidates.iter().map(|c| c.feature_vec.as_slice())
    }

    pub fn generator_ids(&self) -> Vec<usize> {
        self.candidates.iter().map(|c| c.generator_id).collect()
    }
}

/// Ensemble reward estimate with symmetric `beta`-scaled bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardEstimate {
    mean: f64,
    std: f64,
    lower: f64,
    upper: f64,
    beta: f64,
}

impl RewardEstimate {
    pub fn new(mean: f64, std: f64, beta: f64) -> Result<Self> {
        if !mean.is_finite() || !std.is_finite() || !beta.is_finite() {
            return Err(Error::InvalidArithmetic(format!(
                "non-finite estimate (mean {mean}, std {std}, beta {beta})"
            )));
        }
        if std < 0.0 {
            return Err(Error::Invalid(format!("negative std {std}")));
        }
        if beta < 0.0 {
            return Err(Error::Config(format!("beta must be non-negative, got {beta}")));
        }
        Ok(Self {
            mean,
            std,
            lower: mean - beta * std,
            upper: mean + beta * std,
            beta,
        })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Same mean and spread, rescaled bounds.
    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        Self::new(self.mean, self.std, beta)
    }
}

/// A collected comparison, the unit of the preference dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceTriplet {
    pub prompt_id: usize,
    pub chosen_id: usize,
    pub chosen_generator: usize,
    pub rejected_id: usize,
    pub rejected_generator: usize,
    pub chosen_score: f64,
    pub rejected_score: f64,
    pub tie: bool,
    pub iteration: usize,
    pub method: String,
    /// The ordering is structural and the scores were recorded for analytics
    /// only (DeltaQwen); the score-order invariant does not apply.
    pub metrics_only: bool,
}

impl PreferenceTriplet {
    pub fn validate(&self) -> Result<()> {
        if self.chosen_id == self.rejected_id {
            return Err(Error::Invalid(format!(
                "prompt {}: chosen and rejected are both candidate {}",
                self.prompt_id, self.chosen_id
            )));
        }
        for s in [self.chosen_score, self.rejected_score] {
            if !(SCORE_MIN..=SCORE_MAX).contains(&s) {
                return Err(Error::Invalid(format!(
                    "prompt {}: score {s} outside [1, 5]",
                    self.prompt_id
                )));
            }
        }
        let gap = self.chosen_score - self.rejected_score;
        if self.tie && gap.abs() >= TIE_TOLERANCE {
            return Err(Error::Invalid(format!(
                "prompt {}: tie flagged but scores differ by {gap}",
                self.prompt_id
            )));
        }
        if !self.tie && !self.metrics_only && gap < 0.0 {
            return Err(Error::Invalid(format!(
                "prompt {}: chosen score below rejected score",
                self.prompt_id
            )));
        }
        Ok(())
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> Result<f64> {
    if x.is_nan() {
        return Err(Error::InvalidArithmetic("sigmoid of NaN".into()));
    }
    Ok(sigmoid_unchecked(x))
}

#[inline]
pub(crate) fn sigmoid_unchecked(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_beta(a: &RewardEstimate, b: &RewardEstimate) -> Result<()> {
    if a.beta != b.beta {
        return Err(Error::Config(format!(
            "estimates built with different beta ({} vs {})",
            a.beta, b.beta
        )));
    }
    Ok(())
}

/// Optimistic probability that `a` beats `b`: `s(upper_a - lower_b)`.
pub fn ucb_pref_prob(a: &RewardEstimate, b: &RewardEstimate) -> Result<f64> {
    check_beta(a, b)?;
    sigmoid(a.upper - b.lower)
}

/// Pessimistic probability that `a` beats `b`: `s(lower_a - upper_b)`.
pub fn lcb_pref_prob(a: &RewardEstimate, b: &RewardEstimate) -> Result<f64> {
    check_beta(a, b)?;
    sigmoid(a.lower - b.upper)
}

/// Width of the preference-probability interval for `a` over `b`, that is
/// `ucb_pref_prob(a, b) - lcb_pref_prob(a, b)`.
///
/// Evaluated as `s(|d| + w) - s(|d| - w)` with `d` the mean gap and `w` the
/// summed half-widths, so that swapping the arguments gives the same bits.
pub fn pair_width(a: &RewardEstimate, b: &RewardEstimate) -> Result<f64> {
    check_beta(a, b)?;
    let gap = (a.mean - b.mean).abs();
    let half = a.beta * a.std + b.beta * b.std;
    if gap.is_nan() || half.is_nan() {
        return Err(Error::InvalidArithmetic("pair width of NaN".into()));
    }
    Ok(sigmoid_unchecked(gap + half) - sigmoid_unchecked(gap - half))
}
