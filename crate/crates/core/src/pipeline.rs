//! Record-level stages behind the CLI: segment, score, compress, reward,
//! advantage. Each stage fills in its field of [`RolloutRecord`] and leaves
//! the rest untouched.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::advantage::{group_advantages_with, AdvantageError};
use crate::compression::{compress, compress_at_test_time, CompressionError, CompressionPlan};
use crate::config::EngineConfig;
use crate::difficulty::{estimate_difficulty, DifficultyError, DifficultyLabel};
use crate::records::{AdvantageOutput, CompressionOutput, RewardOutput, RolloutRecord};
use crate::rewards::{total_reward, RewardError, WindowStats};
use crate::scoring::{
    aggregate_attention, assign_tokens, confidence_step_scores, random_scores, step_importance,
    AttentionRow, ScorerKind, ScoringError,
};
use crate::trajectory::{segment_steps_with, SplitTokens};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{id}: {source}")]
    Scoring { id: String, source: ScoringError },
    #[error("{id}: {source}")]
    Compression { id: String, source: CompressionError },
    #[error("{id}: missing {what}")]
    MissingInput { id: String, what: &'static str },
    #[error("group {group}: {source}")]
    Advantage { group: String, source: AdvantageError },
    #[error("group {group}: {source}")]
    Difficulty { group: String, source: DifficultyError },
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("cannot group by unknown field '{0}' (use problem_id, rollout_id or step)")]
    UnknownGroupField(String),
}

fn record_id(r: &RolloutRecord) -> String {
    format!("{}/{}", r.problem_id, r.rollout_id)
}

/// Fills `steps` from the reasoning text.
pub fn segment_record(record: &mut RolloutRecord, tokens: &SplitTokens) {
    let reasoning = record.trajectory().reasoning_text;
    record.steps = Some(segment_steps_with(&reasoning, tokens));
}

/// Fills `step_scores` (segmenting first if needed).
///
/// The random scorer draws from `seed`; callers vary it per record.
pub fn score_record(
    record: &mut RolloutRecord,
    scorer: ScorerKind,
    seed: u64,
    tokens: &SplitTokens,
) -> Result<(), PipelineError> {
    if record.steps.is_none() {
        segment_record(record, tokens);
    }
    let steps = record.steps.as_deref().unwrap_or_default();
    let id = || record_id(record);
    let scoring = |source| PipelineError::Scoring { id: id(), source };
    let scores = match scorer {
        ScorerKind::Attention => {
            let row = match (&record.attention_row, &record.attention_raw) {
                (Some(row), _) => AttentionRow::from_aggregated(row.clone()).map_err(scoring)?,
                (None, Some(raw)) => aggregate_attention(raw).map_err(scoring)?,
                (None, None) => {
                    return Err(PipelineError::MissingInput {
                        id: id(),
                        what: "attention_row or attention_raw",
                    })
                }
            };
            step_importance(&row, steps, &record.token_char_spans).map_err(scoring)?
        }
        ScorerKind::Confidence => {
            let lp = record.topk_logprobs.as_ref().ok_or_else(|| PipelineError::MissingInput {
                id: id(),
                what: "topk_logprobs",
            })?;
            confidence_step_scores(lp, steps, &record.token_char_spans).map_err(scoring)?
        }
        ScorerKind::Random => random_scores(steps.len(), seed),
    };
    record.step_scores = Some(scores);
    Ok(())
}

/// Compresses one record at rate `tau`.
///
/// With `test_time` set, a record whose reasoning never closed is left
/// uncompressed. Returns the plan that was applied.
pub fn compress_record(
    record: &mut RolloutRecord,
    tau: f64,
    test_time: bool,
    tokens: &SplitTokens,
) -> Result<Option<CompressionPlan<f64>>, PipelineError> {
    if record.step_scores.is_none() {
        score_record(record, ScorerKind::Attention, 0, tokens)?;
    }
    let trajectory = record.trajectory();
    let steps = record.steps.as_deref().unwrap_or_default();
    let scores = record.step_scores.as_ref().expect("scored above");
    let compression = |source| PipelineError::Compression {
        id: record_id(record),
        source,
    };
    let result = if test_time {
        compress_at_test_time(&trajectory, steps, scores, tau).map_err(compression)?
    } else {
        Some(compress(&trajectory, steps, scores, tau).map_err(compression)?)
    };
    let Some((text, plan)) = result else {
        record.compression = None;
        return Ok(None);
    };

    let owners = assign_tokens(steps, &record.token_char_spans).map_err(|source| {
        PipelineError::Scoring {
            id: record_id(record),
            source,
        }
    })?;
    let mut kept = vec![false; steps.len()];
    for &k in &plan.kept_indices {
        kept[k] = true;
    }
    let kept_token_count = owners.iter().filter(|&&k| kept[k]).count();

    record.compression = Some(CompressionOutput {
        compressed_reasoning: text,
        kept_token_count,
        plan: plan.clone(),
    });
    Ok(Some(plan))
}

fn group_indices_by<F>(records: &[RolloutRecord], key: F) -> BTreeMap<String, Vec<usize>>
where
    F: Fn(&RolloutRecord) -> String,
{
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry(key(r)).or_default().push(i);
    }
    groups
}

/// Bins every (step, problem) group by pass rate and stores the bin on its
/// records.
pub fn assign_difficulty(records: &mut [RolloutRecord], config: &EngineConfig) -> Result<(), PipelineError> {
    let groups = group_indices_by(records, |r| format!("{}\u{0}{}", r.step.unwrap_or(0), r.problem_id));
    for (group, idx) in groups {
        let flags: Vec<bool> = idx.iter().map(|&i| records[i].correct).collect();
        let bin = estimate_difficulty(&flags, &config.bin_thresholds, &config.compression_rates)
            .map_err(|source| PipelineError::Difficulty {
                group: group.replace('\u{0}', "/"),
                source,
            })?;
        for i in idx {
            records[i].difficulty = Some(bin);
        }
    }
    Ok(())
}

/// Compresses each record at its group's difficulty-calibrated rate.
pub fn compress_by_difficulty(
    records: &mut [RolloutRecord],
    config: &EngineConfig,
    tokens: &SplitTokens,
) -> Result<(), PipelineError> {
    assign_difficulty(records, config)?;
    for r in records.iter_mut() {
        let tau = r.difficulty.expect("assigned above").compression_rate;
        compress_record(r, tau, false, tokens)?;
    }
    Ok(())
}

/// Rewards every record, processing training steps in ascending order.
///
/// Length rewards at step `t` use the window as it stood after step `t-1`;
/// the window for each bin then absorbs step `t`'s original lengths.
/// Compressed counterparts inherit the original's correctness.
pub fn reward_records(records: &mut [RolloutRecord], config: &EngineConfig) -> Result<(), PipelineError> {
    let params = config.reward_params();
    let mut window = WindowStats::new(config.window)?;
    let missing: Vec<usize> = (0..records.len()).filter(|&i| records[i].difficulty.is_none()).collect();
    if !missing.is_empty() {
        assign_difficulty(records, config)?;
    }

    let mut by_step: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_step.entry(r.step.unwrap_or(0)).or_default().push(i);
    }
    for idx in by_step.values() {
        let mut step_lengths: BTreeMap<DifficultyLabel, Vec<u64>> = BTreeMap::new();
        for &i in idx {
            let r = &mut records[i];
            let bin = r.difficulty.expect("assigned above").label;
            let snapshot = window.snapshot(bin);
            let trajectory = r.trajectory();
            let original = total_reward(&trajectory, r.correct, snapshot.as_ref(), &params);
            let compressed = r.compression.as_ref().map(|c| {
                let t = trajectory.with_reasoning(c.compressed_reasoning.clone(), c.kept_token_count);
                total_reward(&t, r.correct, snapshot.as_ref(), &params)
            });
            r.reward = Some(RewardOutput { original, compressed });
            step_lengths
                .entry(bin)
                .or_default()
                .push(r.reasoning_token_count as u64);
        }
        for (bin, lengths) in step_lengths {
            window.update(bin, &lengths)?;
        }
    }
    Ok(())
}

fn field_value(r: &RolloutRecord, field: &str) -> Option<String> {
    match field {
        "problem_id" => Some(r.problem_id.clone()),
        "rollout_id" => Some(r.rollout_id.clone()),
        "step" => Some(r.step.unwrap_or(0).to_string()),
        _ => None,
    }
}

/// Group-normalized advantages over original and compressed rewards.
///
/// `group_by` lists record fields whose joint value defines a group.
pub fn advantage_records(
    records: &mut [RolloutRecord],
    group_by: &[String],
    std_epsilon: f64,
) -> Result<(), PipelineError> {
    if let Some(bad) = group_by.iter().find(|f| field_value(&RolloutRecord::from_raw("", "", "", false), f).is_none()) {
        return Err(PipelineError::UnknownGroupField(bad.clone()));
    }
    let groups = group_indices_by(records, |r| {
        group_by
            .iter()
            .map(|f| field_value(r, f).expect("checked above"))
            .collect::<Vec<_>>()
            .join("/")
    });
    for (group, idx) in groups {
        let mut rewards = Vec::with_capacity(idx.len() * 2);
        let mut slots = Vec::with_capacity(idx.len() * 2);
        for &i in &idx {
            let reward = records[i].reward.as_ref().ok_or_else(|| PipelineError::MissingInput {
                id: record_id(&records[i]),
                what: "reward",
            })?;
            rewards.push(reward.original.total);
            slots.push((i, false));
            if let Some(c) = &reward.compressed {
                rewards.push(c.total);
                slots.push((i, true));
            }
        }
        let adv = group_advantages_with(&rewards, std_epsilon).map_err(|source| PipelineError::Advantage {
            group: group.clone(),
            source,
        })?;
        for &i in &idx {
            records[i].advantage = Some(AdvantageOutput {
                group: group.clone(),
                original: 0.0,
                compressed: None,
            });
        }
        for ((i, compressed), a) in slots.into_iter().zip(adv) {
            let out = records[i].advantage.as_mut().expect("initialized above");
            if compressed {
                out.compressed = Some(a);
            } else {
                out.original = a;
            }
        }
    }
    Ok(())
}
