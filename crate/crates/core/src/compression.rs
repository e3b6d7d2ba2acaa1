//! Uniformity-modulated step eviction.
//!
//! The eviction fraction is the target reduction scaled by how far the step
//! importance distribution is from uniform: `e = min(tau * (1 - u), 0.8)`,
//! and `e = 0` once `u > 0.8`. The `floor(e * n)` least important steps are
//! dropped.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Scalar;
use crate::scoring::{StepScores, ENTROPY_EPSILON};
use crate::trajectory::{ReasoningStep, Trajectory};

/// Uniformity above which nothing is evicted.
pub const UNIFORMITY_CUTOFF: f64 = 0.8;
/// Upper bound on the evicted fraction.
pub const MAX_EVICTION: f64 = 0.8;

#[derive(Debug, Error, PartialEq)]
pub enum CompressionError {
    #[error("{scores} step scores for {steps} steps")]
    LengthMismatch { scores: usize, steps: usize },
    #[error("step score {index} is {value}; scores must be finite")]
    NonFiniteScore { index: usize, value: f64 },
    #[error("target reduction {0} outside [0, 1]")]
    TauOutOfRange(f64),
    #[error("steps do not reconstruct the trajectory's reasoning text")]
    StepsDoNotMatchTrajectory,
}

/// What was kept and what was dropped, kept for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionPlan<T> {
    pub uniformity: T,
    pub target_reduction: T,
    pub eviction_percentage: T,
    /// Ascending step indices.
    pub evicted_indices: Vec<usize>,
    /// Ascending step indices.
    pub kept_indices: Vec<usize>,
}

impl<T> CompressionPlan<T> {
    pub fn step_count(&self) -> usize {
        self.evicted_indices.len() + self.kept_indices.len()
    }
}

/// Normalized entropy of the (clamped, normalized) step scores.
///
/// Returns 1 for a single step, an all-zero vector, or `log(n) = 0`. The
/// epsilon inside the log can push a one-hot vector a hair below 0, so the
/// result is clamped to [0, 1].
pub fn uniformity_score<T: Scalar>(scores: &[T]) -> T {
    let n = scores.len();
    if n <= 1 {
        return T::one();
    }
    let clamped = scores.iter().map(|&s| s.max(T::zero()));
    let total = clamped.clone().fold(T::zero(), |a, s| a + s);
    if total <= T::zero() {
        return T::one();
    }
    let eps = T::lit(ENTROPY_EPSILON);
    let entropy = clamped.fold(T::zero(), |h, s| {
        let p = s / total;
        h - p * (p + eps).ln()
    });
    let h_max = T::from_count(n).ln();
    if h_max == T::zero() {
        return T::one();
    }
    (entropy / h_max).max(T::zero()).min(T::one())
}

/// Fraction of steps to evict for uniformity `u` and target reduction `tau`.
pub fn eviction_percentage<T: Scalar>(u: T, tau: T) -> T {
    if u > T::lit(UNIFORMITY_CUTOFF) {
        return T::zero();
    }
    (tau * (T::one() - u)).min(T::lit(MAX_EVICTION))
}

/// Number of steps to evict: `floor(e * n)`.
pub fn eviction_count<T: Scalar>(e: T, n: usize) -> usize {
    let k = (e * T::from_count(n)).floor();
    k.to_usize().unwrap_or(0).min(n)
}

/// Builds the plan for `scores` at target reduction `tau` without touching
/// any text.
pub fn plan<T: Scalar>(scores: &[T], tau: T) -> Result<CompressionPlan<T>, CompressionError> {
    let tau_f = tau.to_f64().unwrap_or(f64::NAN);
    if !(0.0..=1.0).contains(&tau_f) {
        return Err(CompressionError::TauOutOfRange(tau_f));
    }
    if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
        return Err(CompressionError::NonFiniteScore {
            index,
            value: scores[index].to_f64().unwrap_or(f64::NAN),
        });
    }

    let n = scores.len();
    let uniformity = uniformity_score(scores);
    let e = eviction_percentage(uniformity, tau);
    let k = eviction_count(e, n);

    // lowest score first; among equal scores the later step goes first
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .partial_cmp(&scores[b])
            .expect("finite scores")
            .then(b.cmp(&a))
    });
    let mut evicted: Vec<usize> = order[..k].to_vec();
    evicted.sort_unstable();
    let mut is_evicted = vec![false; n];
    for &i in &evicted {
        is_evicted[i] = true;
    }
    let kept = (0..n).filter(|&i| !is_evicted[i]).collect();

    Ok(CompressionPlan {
        uniformity,
        target_reduction: tau,
        eviction_percentage: e,
        evicted_indices: evicted,
        kept_indices: kept,
    })
}

/// Concatenates the kept steps in original order.
pub fn apply_plan<T>(steps: &[ReasoningStep], plan: &CompressionPlan<T>) -> String {
    plan.kept_indices
        .iter()
        .map(|&i| steps[i].text.as_str())
        .collect()
}

/// Prunes the least important steps of `trajectory`'s reasoning.
///
/// `steps` must be the segmentation of the trajectory's reasoning text and
/// `scores` must have one entry per step.
pub fn compress<T: Scalar>(
    trajectory: &Trajectory,
    steps: &[ReasoningStep],
    scores: &StepScores<T>,
    tau: T,
) -> Result<(String, CompressionPlan<T>), CompressionError> {
    if scores.len() != steps.len() {
        return Err(CompressionError::LengthMismatch {
            scores: scores.len(),
            steps: steps.len(),
        });
    }
    let mut offset = 0;
    for step in steps {
        let text = &trajectory.reasoning_text;
        if !text[offset..].starts_with(&step.text) {
            return Err(CompressionError::StepsDoNotMatchTrajectory);
        }
        offset += step.text.len();
    }
    if offset != trajectory.reasoning_text.len() {
        return Err(CompressionError::StepsDoNotMatchTrajectory);
    }

    let plan = plan(&scores.per_step, tau)?;
    Ok((apply_plan(steps, &plan), plan))
}

/// Static inference-time compression: outputs that never closed their
/// reasoning are left alone.
pub fn compress_at_test_time<T: Scalar>(
    trajectory: &Trajectory,
    steps: &[ReasoningStep],
    scores: &StepScores<T>,
    tau: T,
) -> Result<Option<(String, CompressionPlan<T>)>, CompressionError> {
    if !trajectory.had_close_tag {
        return Ok(None);
    }
    compress(trajectory, steps, scores, tau).map(Some)
}
