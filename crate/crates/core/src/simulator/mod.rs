//! Closed-loop training simulator.
//!
//! A synthetic policy emits rollout groups, the rollouts run through the
//! same difficulty, compression, reward and advantage code as real records,
//! and the advantages nudge the policy's per-tier mean length and its skill.

mod synth;

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advantage::{group_advantages_with, AdvantageError};
use crate::compression::{self, CompressionError};
use crate::config::{ConfigError, EngineConfig, PerTier};
use crate::difficulty::{estimate_difficulty, DifficultyError, DifficultyLabel};
use crate::records::{write_jsonl, AdvantageOutput, CompressionOutput, RewardOutput, RolloutRecord};
use crate::rewards::{total_reward, RewardError, WindowStats};
use crate::scoring::{step_importance, AttentionRow, ScoringError};
use crate::trajectory::{segment_steps_with, SplitTokens};

pub use synth::{
    generate_rollouts, make_problems, success_probability, PolicyParams, SyntheticPolicy, SyntheticProblem,
    SyntheticRollout, MIN_LENGTH,
};

/// Iterations averaged at each end of a run for the summary accuracies.
pub const SUMMARY_SPAN: usize = 10;
const COMPRESSION_STREAM: u64 = 0x5eed_c0de;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("rollout group needs at least 2 rollouts, got {0}")]
    GroupTooSmall(usize),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Compression(#[from] CompressionError),
    #[error(transparent)]
    Advantage(#[from] AdvantageError),
    #[error(transparent)]
    Difficulty(#[from] DifficultyError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("rollout {rollout}: segmentation found {found} steps, {generated} were generated")]
    Segmentation {
        rollout: String,
        found: usize,
        generated: usize,
    },
    #[error("writing report: {0}")]
    Io(#[from] io::Error),
}

/// Per-iteration statistics of one bin or tier. `None` when it was empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub problems: usize,
    pub rollouts: usize,
    pub mean_length: Option<f64>,
    pub accuracy: Option<f64>,
    pub mean_eviction: Option<f64>,
    pub mean_compressed_length: Option<f64>,
    pub mean_reward: Option<f64>,
}

#[derive(Default, Clone, Copy)]
struct Accum {
    problems: usize,
    rollouts: usize,
    length: f64,
    correct: usize,
    eviction: f64,
    compressed_length: f64,
    reward: f64,
}

impl Accum {
    fn finish(&self) -> BinStats {
        let per = |x: f64| (self.rollouts > 0).then(|| x / self.rollouts as f64);
        BinStats {
            problems: self.problems,
            rollouts: self.rollouts,
            mean_length: per(self.length),
            accuracy: per(self.correct as f64),
            mean_eviction: per(self.eviction),
            mean_compressed_length: per(self.compressed_length),
            mean_reward: per(self.reward),
        }
    }
}

fn finish_all(acc: &[Accum; 3]) -> PerTier<BinStats> {
    PerTier {
        easy: acc[0].finish(),
        medium: acc[1].finish(),
        hard: acc[2].finish(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub iteration: usize,
    /// Policy the rollouts of this iteration were drawn from.
    pub policy: PolicyParams,
    /// Grouped by estimated difficulty bin.
    pub bins: PerTier<BinStats>,
    /// Grouped by the latent tier the problem was drawn from.
    pub tiers: PerTier<BinStats>,
}

pub struct StepOutcome {
    pub policy: SyntheticPolicy,
    pub window: WindowStats,
    pub report: StepReport,
    /// Annotated rollout records, when requested.
    pub records: Vec<RolloutRecord>,
}

/// One training iteration. Inputs are left untouched; the updated policy
/// and window come back in the outcome.
pub fn train_step(
    policy: &SyntheticPolicy,
    window: &WindowStats,
    problems: &[SyntheticProblem],
    config: &EngineConfig,
    iteration: usize,
    keep_records: bool,
) -> Result<StepOutcome, SimError> {
    let sim = &config.simulator;
    let params = config.reward_params();
    let tokens = SplitTokens::default();
    let n = config.rollouts;

    let mut next = policy.clone();
    let mut bins = [Accum::default(); 3];
    let mut tiers = [Accum::default(); 3];
    let mut drift = [(0.0f64, 0usize); 3];
    let mut skill_signal = 0.0;
    let mut bin_lengths: [Vec<u64>; 3] = Default::default();
    let mut records = Vec::new();

    for problem in problems {
        let seed = next.next_seed();
        let rollouts = generate_rollouts(&policy.params, problem, n, seed, sim)?;
        let flags: Vec<bool> = rollouts.iter().map(|r| r.record.correct).collect();
        let bin = estimate_difficulty(&flags, &config.bin_thresholds, &config.compression_rates)?;
        let snapshot = window.snapshot(bin.label);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ COMPRESSION_STREAM);

        let mut rewards = Vec::with_capacity(2 * n);
        let mut lengths = Vec::with_capacity(2 * n);
        let mut correct = Vec::with_capacity(2 * n);
        let mut compressed = Vec::with_capacity(n);
        let mut annotated = Vec::new();

        for r in &rollouts {
            let traj = r.record.trajectory();
            let steps = segment_steps_with(&traj.reasoning_text, &tokens);
            if steps.len() != r.step_tokens.len() {
                return Err(SimError::Segmentation {
                    rollout: r.record.rollout_id.clone(),
                    found: steps.len(),
                    generated: r.step_tokens.len(),
                });
            }
            let row = AttentionRow::from_aggregated(r.record.attention_row.clone().unwrap_or_default())?;
            let scores = step_importance(&row, &steps, &r.record.token_char_spans)?;
            let len = r.record.reasoning_token_count as u64;
            let reward = total_reward(&traj, r.record.correct, snapshot.as_ref(), &params);

            rewards.push(reward.total);
            lengths.push(len as f64);
            correct.push(r.record.correct);
            bin_lengths[bin.label.index()].push(len);

            let (text, plan) = if sim.compression_enabled {
                compression::compress(&traj, &steps, &scores, bin.compression_rate)?
            } else {
                (traj.reasoning_text.clone(), compression::plan(&scores.per_step, 0.0)?)
            };
            let kept: usize = plan.kept_indices.iter().map(|&k| r.step_tokens[k]).sum();
            let keep_draw: f64 = rng.random();

            let mut comp_reward = None;
            if sim.compression_enabled {
                let coverage = r.solution_coverage(&plan.kept_indices);
                let ok = r.record.correct && keep_draw < coverage.powf(sim.underthinking_exponent);
                let ct = traj.with_reasoning(text.clone(), kept);
                let cr = total_reward(&ct, ok, snapshot.as_ref(), &params);
                compressed.push((cr.total, kept as f64, ok));
                comp_reward = Some(cr);
            }

            for acc in [&mut bins[bin.label.index()], &mut tiers[problem.tier.index()]] {
                acc.rollouts += 1;
                acc.length += len as f64;
                acc.correct += r.record.correct as usize;
                acc.eviction += plan.eviction_percentage;
                acc.compressed_length += kept as f64;
                acc.reward += reward.total;
            }

            if keep_records {
                let mut rec = r.record.clone();
                rec.step = Some(iteration as u64);
                rec.step_scores = Some(scores);
                rec.difficulty = Some(bin);
                rec.compression = Some(CompressionOutput {
                    compressed_reasoning: text,
                    kept_token_count: kept,
                    plan,
                });
                rec.reward = Some(RewardOutput {
                    original: reward,
                    compressed: comp_reward,
                });
                annotated.push(rec);
            }
        }
        bins[bin.label.index()].problems += 1;
        tiers[problem.tier.index()].problems += 1;

        for &(r, l, c) in &compressed {
            rewards.push(r);
            lengths.push(l);
            correct.push(c);
        }
        let adv = group_advantages_with(&rewards, config.epsilon.advantage_std)?;

        // score-function step on the log of the mean length; compressed
        // counterparts count as if the policy had emitted them
        let m = policy.params.mean_lengths.get(problem.tier);
        let mu = m.ln() - 0.5 * policy.params.spread * policy.params.spread;
        let d = &mut drift[problem.tier.index()];
        d.0 += adv.iter().zip(&lengths).map(|(a, l)| a * (l.ln() - mu)).sum::<f64>() / adv.len() as f64;
        d.1 += 1;
        skill_signal += adv
            .iter()
            .zip(&correct)
            .map(|(a, &c)| if c { *a } else { 0.0 })
            .sum::<f64>()
            / adv.len() as f64;

        if keep_records {
            let has_compressed = !compressed.is_empty();
            for (i, rec) in annotated.iter_mut().enumerate() {
                rec.advantage = Some(AdvantageOutput {
                    group: problem.id.clone(),
                    original: adv[i],
                    compressed: has_compressed.then(|| adv[n + i]),
                });
            }
            records.extend(annotated);
        }
    }

    let eta = sim.learning_rate;
    for tier in DifficultyLabel::ALL {
        let (sum, count) = drift[tier.index()];
        if count > 0 {
            let m = next.params.mean_lengths.get(tier);
            let stepped = (m * (eta * sum / count as f64).exp()).max(MIN_LENGTH as f64);
            next.params.mean_lengths.set(tier, stepped);
        }
    }
    if !problems.is_empty() {
        let s = next.params.skill + eta * sim.skill_gain * skill_signal / problems.len() as f64;
        next.params.skill = s.clamp(0.0, 1.0);
    }

    let mut next_window = window.clone();
    for label in DifficultyLabel::ALL {
        let ls = &bin_lengths[label.index()];
        if !ls.is_empty() {
            next_window.update(label, ls)?;
        }
    }

    Ok(StepOutcome {
        policy: next,
        window: next_window,
        report: StepReport {
            iteration,
            policy: policy.params,
            bins: finish_all(&bins),
            tiers: finish_all(&tiers),
        },
        records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthChange {
    pub initial: f64,
    pub last: f64,
    /// `(initial - last) / initial`; positive when lengths shrank.
    pub relative_drop: f64,
}

/// A per-iteration series averaged over the first and the last
/// [`SUMMARY_SPAN`] iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Endpoints {
    pub initial: Option<f64>,
    pub last: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Mean eviction per estimated bin over the whole run.
    pub mean_eviction: PerTier<Option<f64>>,
    /// Policy mean emission length per tier, before and after training.
    pub emission_length: PerTier<LengthChange>,
    pub tier_accuracy: PerTier<Endpoints>,
    pub bin_length: PerTier<Endpoints>,
    pub bin_accuracy: PerTier<Endpoints>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub config: EngineConfig,
    pub final_policy: PolicyParams,
    pub summary: Summary,
    #[serde(skip)]
    pub iterations: Vec<StepReport>,
    #[serde(skip)]
    pub records: Vec<RolloutRecord>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn per_tier<T>(f: impl Fn(DifficultyLabel) -> T) -> PerTier<T> {
    PerTier {
        easy: f(DifficultyLabel::Easy),
        medium: f(DifficultyLabel::Medium),
        hard: f(DifficultyLabel::Hard),
    }
}

fn summarize(iterations: &[StepReport], initial: &PolicyParams, last: &PolicyParams) -> Summary {
    let span = SUMMARY_SPAN.min(iterations.len());
    let head = &iterations[..span];
    let tail = &iterations[iterations.len() - span..];
    let ends = |field: &dyn Fn(&StepReport) -> Option<f64>| Endpoints {
        initial: mean_of(head.iter().map(field)),
        last: mean_of(tail.iter().map(field)),
    };
    Summary {
        mean_eviction: per_tier(|l| mean_of(iterations.iter().map(|r| r.bins.get_ref(l).mean_eviction))),
        emission_length: per_tier(|l| {
            let a = initial.mean_lengths.get(l);
            let b = last.mean_lengths.get(l);
            LengthChange {
                initial: a,
                last: b,
                relative_drop: (a - b) / a,
            }
        }),
        tier_accuracy: per_tier(|l| ends(&|r| r.tiers.get_ref(l).accuracy)),
        bin_length: per_tier(|l| ends(&|r| r.bins.get_ref(l).mean_length)),
        bin_accuracy: per_tier(|l| ends(&|r| r.bins.get_ref(l).accuracy)),
    }
}

/// Runs `config.simulator.iterations` training steps from the configured
/// initial policy.
pub fn run_simulation(config: &EngineConfig) -> Result<SimulationReport, SimError> {
    config.validate()?;
    let sim = &config.simulator;
    let problems = make_problems(&sim.problems, sim.seed);
    let mut policy = SyntheticPolicy::from_config(sim);
    let initial = policy.params;
    let mut window = WindowStats::new(config.window)?;
    let mut iterations = Vec::with_capacity(sim.iterations);
    let mut records = Vec::new();

    for k in 0..sim.iterations {
        let out = train_step(&policy, &window, &problems, config, k, sim.write_records)?;
        policy = out.policy;
        window = out.window;
        iterations.push(out.report);
        records.extend(out.records);
    }

    Ok(SimulationReport {
        config: config.clone(),
        final_policy: policy.params,
        summary: summarize(&iterations, &initial, &policy.params),
        iterations,
        records,
    })
}

/// Writes `iterations.jsonl` and `summary.json` (and `records.jsonl` when
/// records were kept) into `dir`.
pub fn write_report(report: &SimulationReport, dir: impl AsRef<Path>) -> io::Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_jsonl(BufWriter::new(fs::File::create(dir.join("iterations.jsonl"))?), &report.iterations)?;
    let mut summary = BufWriter::new(fs::File::create(dir.join("summary.json"))?);
    serde_json::to_writer_pretty(&mut summary, report)?;
    summary.write_all(b"\n")?;
    summary.flush()?;
    if !report.records.is_empty() {
        write_jsonl(BufWriter::new(fs::File::create(dir.join("records.jsonl"))?), &report.records)?;
    }
    Ok(())
}
