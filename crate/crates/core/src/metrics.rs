//! Overthinking-adjusted accuracy and the combined over/underthinking F1.
//!
//! `OAA_t` is the fraction of samples that are correct and used fewer than
//! `t` thinking tokens. `AUC_OAA` sums `OAA_t` for `t = 0..=t_max` and
//! divides by `t_max` (t_max + 1 terms over t_max, as the metric is
//! conventionally written). Both are ratios of integers, so they are
//! computed as one exact count over one denominator and can be evaluated in
//! floating point or as exact rationals.

use num_rational::Ratio;
use num_traits::Num;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default `t_max`: the evaluation response-length cap.
pub const DEFAULT_T_MAX: u64 = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no evaluation samples")]
    Empty,
    #[error("t_max must be positive")]
    ZeroTMax,
}

/// A number that can represent `num / den` for counts.
pub trait Proportion: Num + Clone + PartialOrd {
    fn ratio(num: u64, den: u64) -> Self;
}

impl Proportion for f64 {
    fn ratio(num: u64, den: u64) -> Self {
        num as f64 / den as f64
    }
}

impl Proportion for f32 {
    fn ratio(num: u64, den: u64) -> Self {
        (num as f64 / den as f64) as f32
    }
}

impl Proportion for Ratio<u64> {
    fn ratio(num: u64, den: u64) -> Self {
        Ratio::new(num, den)
    }
}

impl Proportion for Ratio<u128> {
    fn ratio(num: u64, den: u64) -> Self {
        Ratio::new(num as u128, den as u128)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Overthinking,
    Underthinking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSample {
    pub correct: bool,
    pub think_tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<EvalSplit>,
}

impl EvalSample {
    pub fn new(correct: bool, think_tokens: u64) -> Self {
        EvalSample {
            correct,
            think_tokens,
            split: None,
        }
    }
}

fn non_empty(samples: &[EvalSample]) -> Result<u64, MetricsError> {
    match samples.len() {
        0 => Err(MetricsError::Empty),
        n => Ok(n as u64),
    }
}

pub fn accuracy<T: Proportion>(samples: &[EvalSample]) -> Result<T, MetricsError> {
    let n = non_empty(samples)?;
    let correct = samples.iter().filter(|s| s.correct).count() as u64;
    Ok(T::ratio(correct, n))
}

pub fn mean_length(samples: &[EvalSample]) -> Result<f64, MetricsError> {
    let n = non_empty(samples)?;
    let total: u128 = samples.iter().map(|s| s.think_tokens as u128).sum();
    Ok(total as f64 / n as f64)
}

/// Fraction of samples both correct and strictly under `t` thinking tokens.
pub fn oaa<T: Proportion>(samples: &[EvalSample], t: u64) -> Result<T, MetricsError> {
    let n = non_empty(samples)?;
    let hits = samples
        .iter()
        .filter(|s| s.correct && s.think_tokens < t)
        .count() as u64;
    Ok(T::ratio(hits, n))
}

/// `(1 / t_max) * sum_{t=0}^{t_max} OAA_t`.
///
/// A correct sample with `k` tokens satisfies `k < t` for exactly
/// `max(0, t_max - k)` thresholds in `0..=t_max`, so the sum collapses to a
/// single count.
pub fn auc_oaa<T: Proportion>(samples: &[EvalSample], t_max: u64) -> Result<T, MetricsError> {
    let n = non_empty(samples)?;
    if t_max == 0 {
        return Err(MetricsError::ZeroTMax);
    }
    let covered: u64 = samples
        .iter()
        .filter(|s| s.correct)
        .map(|s| t_max.saturating_sub(s.think_tokens))
        .sum();
    Ok(T::ratio(covered, n * t_max))
}

/// Harmonic mean of the overthinking AUC and underthinking accuracy; 0 when
/// both are 0.
pub fn otb_f1<T: Proportion>(auc: T, acc_ut: T) -> T {
    let sum = auc.clone() + acc_ut.clone();
    if sum == T::zero() {
        return T::zero();
    }
    let two = T::one() + T::one();
    two * auc * acc_ut / sum
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sample_count: usize,
    pub accuracy: f64,
    pub mean_length: f64,
    pub auc_oaa: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc_ut: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    pub t_max: u64,
}

/// Scores `overthinking` samples, and the F1 when underthinking accuracy is
/// available.
pub fn evaluate(
    overthinking: &[EvalSample],
    acc_ut: Option<f64>,
    t_max: u64,
) -> Result<EvalReport, MetricsError> {
    let auc = auc_oaa::<f64>(overthinking, t_max)?;
    Ok(EvalReport {
        sample_count: overthinking.len(),
        accuracy: accuracy(overthinking)?,
        mean_length: mean_length(overthinking)?,
        auc_oaa: auc,
        acc_ut,
        f1: acc_ut.map(|a| otb_f1(auc, a)),
        t_max,
    })
}

/// Splits tagged samples: untagged ones count as overthinking samples.
pub fn partition(samples: &[EvalSample]) -> (Vec<EvalSample>, Vec<EvalSample>) {
    samples
        .iter()
        .partition(|s| s.split != Some(EvalSplit::Underthinking))
}
