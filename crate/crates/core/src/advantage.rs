//! Group-relative advantages: each reward standardized against its group.

use thiserror::Error;

use crate::num::{mean, Scalar};

pub const DEFAULT_STD_EPSILON: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum AdvantageError {
    #[error("advantage group needs at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("reward {index} is not finite")]
    NonFinite { index: usize },
}

/// `(r_i - mean) / (std + eps)` with the population standard deviation and
/// `eps = 1e-8`.
pub fn group_advantages<T: Scalar>(rewards: &[T]) -> Result<Vec<T>, AdvantageError> {
    group_advantages_with(rewards, T::lit(DEFAULT_STD_EPSILON))
}

pub fn group_advantages_with<T: Scalar>(rewards: &[T], eps: T) -> Result<Vec<T>, AdvantageError> {
    if rewards.len() < 2 {
        return Err(AdvantageError::GroupTooSmall(rewards.len()));
    }
    if let Some(index) = rewards.iter().position(|r| !r.is_finite()) {
        return Err(AdvantageError::NonFinite { index });
    }
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(vec![T::zero(); rewards.len()]);
    }
    let mu = mean(rewards).expect("non-empty");
    let centered: Vec<T> = rewards.iter().map(|&r| r - mu).collect();
    let var = mean(&centered.iter().map(|&d| d * d).collect::<Vec<_>>()).expect("non-empty");
    let denom = var.sqrt() + eps;
    Ok(centered.into_iter().map(|d| d / denom).collect())
}
