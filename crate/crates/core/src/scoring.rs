//! Token and step importance.
//!
//! Three scorers feed the compressor: attention from the close delimiter
//! averaged over layers and heads, inverse-entropy confidence of the
//! sampled token, and a seeded random baseline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Scalar;
use crate::trajectory::ReasoningStep;

/// Added inside the log when computing entropies.
pub const ENTROPY_EPSILON: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ScoringError {
    #[error("attention tensor has no {0}")]
    EmptyDimension(&'static str),
    #[error("attention slice [layer {layer}][head {head}] has {found} tokens, expected {expected}")]
    RaggedAttention {
        layer: usize,
        head: usize,
        expected: usize,
        found: usize,
    },
    #[error("layer {layer} has {found} heads, expected {expected}")]
    RaggedHeads {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("attention value at token {token} is {value}; values must be finite and >= 0")]
    InvalidValue { token: usize, value: f64 },
    #[error("{spans} token spans for {tokens} token scores")]
    SpanCountMismatch { spans: usize, tokens: usize },
    #[error("token {token} span ({start}, {end}) is inconsistent with reasoning of {len} chars")]
    SpanOutOfRange {
        token: usize,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("steps do not tile the reasoning text (gap or overlap at step {0})")]
    StepsNotContiguous(usize),
    #[error("confidence needs at least one log-probability")]
    NoLogprobs,
    #[error("non-finite log-probability {0}")]
    NonFiniteLogprob(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Attention,
    Confidence,
    Random,
}

impl std::str::FromStr for ScorerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "attention" => Ok(ScorerKind::Attention),
            "confidence" => Ok(ScorerKind::Confidence),
            "random" => Ok(ScorerKind::Random),
            other => Err(format!("unknown scorer '{other}'")),
        }
    }
}

/// Per-token attention mass from the close delimiter over the reasoning
/// tokens only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRow<T> {
    pub values: Vec<T>,
    pub layer_count: usize,
    pub head_count: usize,
    pub pre_aggregated: bool,
}

impl<T: Scalar> AttentionRow<T> {
    /// Wraps a row a producer already averaged.
    pub fn from_aggregated(values: Vec<T>) -> Result<Self, ScoringError> {
        check_values(&values)?;
        Ok(AttentionRow {
            values,
            layer_count: 1,
            head_count: 1,
            pre_aggregated: true,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn check_values<T: Scalar>(values: &[T]) -> Result<(), ScoringError> {
    match values
        .iter()
        .position(|v| !v.is_finite() || *v < T::zero())
    {
        Some(token) => Err(ScoringError::InvalidValue {
            token,
            value: values[token].to_f64().unwrap_or(f64::NAN),
        }),
        None => Ok(()),
    }
}

/// Means a `[layer][head][token]` attention tensor over layers and heads.
pub fn aggregate_attention<T: Scalar>(raw: &[Vec<Vec<T>>]) -> Result<AttentionRow<T>, ScoringError> {
    let layers = raw.len();
    let first_layer = raw.first().ok_or(ScoringError::EmptyDimension("layers"))?;
    let heads = first_layer.len();
    let tokens = first_layer
        .first()
        .ok_or(ScoringError::EmptyDimension("heads"))?
        .len();
    if tokens == 0 {
        return Err(ScoringError::EmptyDimension("tokens"));
    }

    let mut sums = vec![T::zero(); tokens];
    for (layer, per_head) in raw.iter().enumerate() {
        if per_head.len() != heads {
            return Err(ScoringError::RaggedHeads {
                layer,
                expected: heads,
                found: per_head.len(),
            });
        }
        for (head, row) in per_head.iter().enumerate() {
            if row.len() != tokens {
                return Err(ScoringError::RaggedAttention {
                    layer,
                    head,
                    expected: tokens,
                    found: row.len(),
                });
            }
            check_values(row)?;
            for (acc, &v) in sums.iter_mut().zip(row) {
                *acc = *acc + v;
            }
        }
    }

    let denom = T::from_count(layers * heads);
    Ok(AttentionRow {
        values: sums.into_iter().map(|s| s / denom).collect(),
        layer_count: layers,
        head_count: heads,
        pre_aggregated: true,
    })
}

/// Importance of each reasoning step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepScores<T> {
    pub per_step: Vec<T>,
    pub scorer_kind: ScorerKind,
}

impl<T> StepScores<T> {
    pub fn len(&self) -> usize {
        self.per_step.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_step.is_empty()
    }
}

/// Maps every token to the step holding its first char.
///
/// A token whose span straddles a step boundary belongs to the step it
/// starts in. A zero-width token at the very end of the text belongs to the
/// last step.
pub fn assign_tokens(
    steps: &[ReasoningStep],
    token_spans: &[(usize, usize)],
) -> Result<Vec<usize>, ScoringError> {
    let mut expected_start = 0;
    for step in steps {
        if step.char_span.0 != expected_start || step.char_span.1 < step.char_span.0 {
            return Err(ScoringError::StepsNotContiguous(step.index));
        }
        expected_start = step.char_span.1;
    }
    let text_len = expected_start;

    let mut owner = Vec::with_capacity(token_spans.len());
    for (token, &(start, end)) in token_spans.iter().enumerate() {
        let out_of_range = ScoringError::SpanOutOfRange {
            token,
            start,
            end,
            len: text_len,
        };
        if start > end || end > text_len || steps.is_empty() {
            return Err(out_of_range);
        }
        // steps tile [0, text_len), so the owner is the last step starting at or before `start`
        let k = steps.partition_point(|s| s.char_span.0 <= start);
        let mut k = k.saturating_sub(1);
        // skip zero-width steps that cannot contain the char
        while k + 1 < steps.len() && steps[k].char_span.1 <= start {
            k += 1;
        }
        owner.push(k);
    }
    Ok(owner)
}

/// Mean token score per step; a step with no tokens scores 0.
pub fn step_means<T: Scalar>(
    token_scores: &[T],
    owners: &[usize],
    step_count: usize,
    kind: ScorerKind,
) -> StepScores<T> {
    let mut sums = vec![T::zero(); step_count];
    let mut counts = vec![0usize; step_count];
    for (&score, &k) in token_scores.iter().zip(owners) {
        sums[k] = sums[k] + score;
        counts[k] += 1;
    }
    let per_step = sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| if c == 0 { T::zero() } else { s / T::from_count(c) })
        .collect();
    StepScores {
        per_step,
        scorer_kind: kind,
    }
}

/// Step importance from an attention row: the mean attention of the tokens
/// inside each step.
pub fn step_importance<T: Scalar>(
    row: &AttentionRow<T>,
    steps: &[ReasoningStep],
    token_spans: &[(usize, usize)],
) -> Result<StepScores<T>, ScoringError> {
    check_values(&row.values)?;
    if token_spans.len() != row.len() {
        return Err(ScoringError::SpanCountMismatch {
            spans: token_spans.len(),
            tokens: row.len(),
        });
    }
    let owners = assign_tokens(steps, token_spans)?;
    Ok(step_means(&row.values, &owners, steps.len(), ScorerKind::Attention))
}

/// Normalized inverse entropy of a token's top-k distribution, in [0, 1].
pub fn confidence_score<T: Scalar>(topk_logprobs: &[T]) -> Result<T, ScoringError> {
    if let Some(bad) = topk_logprobs.iter().find(|v| !v.is_finite()) {
        return Err(ScoringError::NonFiniteLogprob(bad.to_f64().unwrap_or(f64::NAN)));
    }
    let k = topk_logprobs.len();
    match k {
        0 => return Err(ScoringError::NoLogprobs),
        1 => return Ok(T::one()),
        _ => {}
    }
    // shifting by the max leaves the normalized distribution unchanged
    let max = topk_logprobs
        .iter()
        .copied()
        .fold(T::neg_infinity(), T::max);
    let weights: Vec<T> = topk_logprobs.iter().map(|&l| (l - max).exp()).collect();
    let z = weights.iter().fold(T::zero(), |a, &w| a + w);
    let eps = T::lit(ENTROPY_EPSILON);
    let entropy = weights.iter().fold(T::zero(), |h, &w| {
        let p = w / z;
        h - p * (p + eps).ln()
    });
    let h_max = T::from_count(k).ln();
    let c = T::one() - entropy / h_max;
    Ok(c.max(T::zero()).min(T::one()))
}

/// Step scores from per-token top-k log-probabilities.
pub fn confidence_step_scores<T: Scalar>(
    topk_logprobs: &[Vec<T>],
    steps: &[ReasoningStep],
    token_spans: &[(usize, usize)],
) -> Result<StepScores<T>, ScoringError> {
    if token_spans.len() != topk_logprobs.len() {
        return Err(ScoringError::SpanCountMismatch {
            spans: token_spans.len(),
            tokens: topk_logprobs.len(),
        });
    }
    let token_scores = topk_logprobs
        .iter()
        .map(|l| confidence_score(l))
        .collect::<Result<Vec<T>, _>>()?;
    let owners = assign_tokens(steps, token_spans)?;
    Ok(step_means(&token_scores, &owners, steps.len(), ScorerKind::Confidence))
}

/// Uniform scores in [0, 1) drawn from a ChaCha8 stream seeded with `seed`.
pub fn random_scores<T: Scalar>(step_count: usize, seed: u64) -> StepScores<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_step = (0..step_count)
        .map(|_| T::lit(rng.random::<f64>()))
        .map(|v| if v >= T::one() { T::zero() } else { v })
        .collect();
    StepScores {
        per_step,
        scorer_kind: ScorerKind::Random,
    }
}
