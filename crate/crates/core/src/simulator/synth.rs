//! Synthetic problems, policy and rollouts.
//!
//! A rollout's reasoning is a sequence of steps. The first `ideal_length`
//! tokens are solution steps; anything beyond is filler (re-checks and
//! detours) interleaved among them. Attention from the close delimiter puts
//! most mass on solution steps, so pruning has something to find.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::config::{PerTier, SimulatorConfig};
use crate::difficulty::DifficultyLabel;
use crate::records::RolloutRecord;
use crate::trajectory::{CLOSE_TAG, OPEN_TAG};

const SOLUTION_MARKERS: [&str; 8] = ["First", "Then", "So", "Therefore", "Now", "Compute", "Thus", "Similarly"];
const FILLER_MARKERS: [&str; 8] = [
    "Wait",
    "Hmm",
    "Alternatively",
    "But wait",
    "Hold on",
    "Let me double-check",
    "Maybe",
    "Looking back",
];
const BODY_WORDS: [&str; 6] = ["we", "get", "the", "sum", "of", "terms"];
const STEP_TOKENS_MIN: usize = 12;
const STEP_TOKENS_MAX: usize = 30;
/// Shortest reasoning the policy will emit.
pub const MIN_LENGTH: u64 = 4;

/// Latent difficulty range and ideal-length range of one tier.
struct TierProfile {
    latent: (f64, f64),
    ideal: (u64, u64),
}

fn profile(tier: DifficultyLabel) -> TierProfile {
    match tier {
        DifficultyLabel::Easy => TierProfile {
            latent: (0.05, 0.30),
            ideal: (60, 120),
        },
        DifficultyLabel::Medium => TierProfile {
            latent: (0.35, 0.60),
            ideal: (150, 300),
        },
        DifficultyLabel::Hard => TierProfile {
            latent: (0.65, 0.90),
            ideal: (350, 600),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProblem {
    pub id: String,
    /// Tier the problem was drawn from; selects the policy's length.
    pub tier: DifficultyLabel,
    pub latent_difficulty: f64,
    /// Length at which the success probability stops being penalized.
    pub ideal_length: u64,
}

/// Problems for every tier, drawn from `seed`.
pub fn make_problems(counts: &PerTier<usize>, seed: u64) -> Vec<SyntheticProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for tier in DifficultyLabel::ALL {
        let p = profile(tier);
        for i in 0..counts.get(tier) {
            out.push(SyntheticProblem {
                id: format!("{tier}-{i:03}"),
                tier,
                latent_difficulty: rng.random_range(p.latent.0..=p.latent.1),
                ideal_length: rng.random_range(p.ideal.0..=p.ideal.1),
            });
        }
    }
    out
}

/// The learnable parameters of a [`SyntheticPolicy`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    /// Mean emitted reasoning length per tier.
    pub mean_lengths: PerTier<f64>,
    /// Log-normal spread of emitted lengths.
    pub spread: f64,
    pub skill: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPolicy {
    pub params: PolicyParams,
    pub(crate) rng: ChaCha8Rng,
}

impl SyntheticPolicy {
    pub fn new(params: PolicyParams, seed: u64) -> Self {
        SyntheticPolicy {
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn from_config(sim: &SimulatorConfig) -> Self {
        Self::new(
            PolicyParams {
                mean_lengths: sim.initial_lengths,
                spread: sim.length_spread,
                skill: sim.initial_skill,
            },
            sim.seed ^ 0x9e37_79b9_7f4a_7c15,
        )
    }

    pub(crate) fn next_seed(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

/// Probability the policy answers correctly with `len` reasoning tokens.
///
/// Linear in `skill - latent_difficulty` around one half, clamped to [0, 1],
/// then scaled by `(len / ideal)^underthinking_exponent` below the ideal
/// length and by `(ideal / len)^overthinking_exponent` above it.
pub fn success_probability(skill: f64, problem: &SyntheticProblem, len: u64, knobs: &SimulatorConfig) -> f64 {
    let base = (0.5 + knobs.skill_slope * (skill - problem.latent_difficulty)).clamp(0.0, 1.0);
    let ratio = len as f64 / problem.ideal_length as f64;
    if ratio < 1.0 {
        base * ratio.powf(knobs.underthinking_exponent)
    } else {
        base * ratio.powf(-knobs.overthinking_exponent)
    }
}

/// One generated rollout plus the ground truth the simulator needs later.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRollout {
    pub record: RolloutRecord,
    /// Per generated step: true for solution content.
    pub solution_steps: Vec<bool>,
    /// Tokens in each generated step.
    pub step_tokens: Vec<usize>,
    pub success_probability: f64,
}

impl SyntheticRollout {
    /// Fraction of solution tokens among `kept` steps.
    pub fn solution_coverage(&self, kept: &[usize]) -> f64 {
        let total: usize = self
            .step_tokens
            .iter()
            .zip(&self.solution_steps)
            .filter(|(_, &s)| s)
            .map(|(&t, _)| t)
            .sum();
        if total == 0 {
            return 1.0;
        }
        let kept_solution: usize = kept
            .iter()
            .filter(|&&k| self.solution_steps[k])
            .map(|&k| self.step_tokens[k])
            .sum();
        kept_solution as f64 / total as f64
    }
}

fn split_tokens(total: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut sizes = Vec::new();
    let mut left = total;
    while left > 0 {
        let mut s = rng.random_range(STEP_TOKENS_MIN..=STEP_TOKENS_MAX).min(left);
        if left - s < 2 {
            s = left;
        }
        sizes.push(s);
        left -= s;
    }
    sizes
}

/// Draws `n` rollouts for `problem`. Fully determined by `seed`.
pub fn generate_rollouts(
    policy: &PolicyParams,
    problem: &SyntheticProblem,
    n: usize,
    seed: u64,
    knobs: &SimulatorConfig,
) -> Result<Vec<SyntheticRollout>, SimError> {
    if n < 2 {
        return Err(SimError::GroupTooSmall(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = policy.mean_lengths.get(problem.tier);
    let sigma = policy.spread;

    (0..n)
        .map(|i| {
            let z: f64 = rng.sample(StandardNormal);
            let len = (mean * (sigma * z - 0.5 * sigma * sigma).exp())
                .round()
                .max(MIN_LENGTH as f64) as u64;
            let p = success_probability(policy.skill, problem, len, knobs);
            let correct = rng.random::<f64>() < p;
            Ok(build_rollout(problem, i, len, correct, p, knobs.filler_attention, &mut rng))
        })
        .collect()
}

fn build_rollout(
    problem: &SyntheticProblem,
    index: usize,
    len: u64,
    correct: bool,
    p: f64,
    filler_attention: f64,
    rng: &mut ChaCha8Rng,
) -> SyntheticRollout {
    let len = len as usize;
    let solution = len.min(problem.ideal_length as usize);
    let solution_sizes = split_tokens(solution, rng);
    let filler_sizes = split_tokens(len - solution, rng);

    // first step always carries solution content; the rest are shuffled
    // with solution steps keeping their relative order
    let mut kinds: Vec<bool> = std::iter::repeat_n(true, solution_sizes.len() - 1)
        .chain(std::iter::repeat_n(false, filler_sizes.len()))
        .collect();
    kinds.shuffle(rng);
    kinds.insert(0, true);

    let mut sol = solution_sizes.into_iter();
    let mut fil = filler_sizes.into_iter();
    let step_tokens: Vec<usize> = kinds
        .iter()
        .map(|&s| if s { sol.next() } else { fil.next() }.expect("sizes match kinds"))
        .collect();

    let mut reasoning = String::with_capacity(len * 5);
    let mut spans = Vec::with_capacity(len);
    let mut attention = Vec::with_capacity(len);
    // generated text is ASCII, so byte offsets are char offsets
    for (k, (&is_solution, &tokens)) in kinds.iter().zip(&step_tokens).enumerate() {
        let marker = if is_solution {
            SOLUTION_MARKERS[rng.random_range(0..SOLUTION_MARKERS.len())]
        } else {
            FILLER_MARKERS[rng.random_range(0..FILLER_MARKERS.len())]
        };
        let level: f64 = (0.5 * rng.sample::<f64, _>(StandardNormal)).exp();
        let level = if is_solution { level } else { level * filler_attention };
        let last_step = k + 1 == kinds.len();

        for t in 0..tokens {
            let last_token = t + 1 == tokens;
            let mut word = if t == 0 {
                marker.to_string()
            } else {
                BODY_WORDS[rng.random_range(0..BODY_WORDS.len())].to_string()
            };
            if last_token {
                word.push('.');
            } else if t == 0 {
                word.push(',');
            }
            spans.push((reasoning.len(), reasoning.len() + word.len()));
            reasoning.push_str(&word);
            if !(last_token && last_step) {
                reasoning.push(' ');
            }
            attention.push(level * rng.random_range(0.5..1.5));
        }
    }

    let total: f64 = attention.iter().sum();
    for a in &mut attention {
        *a /= total;
    }

    let raw = format!("{OPEN_TAG}{reasoning}{CLOSE_TAG}The answer is 42.");
    let mut record = RolloutRecord::from_raw(problem.id.clone(), format!("{}-r{index}", problem.id), raw, correct);
    record.reasoning_token_count = len;
    record.token_char_spans = spans;
    record.attention_row = Some(attention);
    record.attention_meta = Some("synthetic: post-softmax, close-delimiter query".into());

    SyntheticRollout {
        record,
        solution_steps: kinds,
        step_tokens,
        success_probability: p,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::segment_steps;

    fn problem(latent: f64, ideal: u64) -> SyntheticProblem {
        SyntheticProblem {
            id: "t".into(),
            tier: DifficultyLabel::Medium,
            latent_difficulty: latent,
            ideal_length: ideal,
        }
    }

    fn params(skill: f64, mean: f64) -> PolicyParams {
        PolicyParams {
            mean_lengths: PerTier {
                easy: mean,
                medium: mean,
                hard: mean,
            },
            spread: 0.3,
            skill,
        }
    }

    #[test]
    fn saturated_success_and_failure() {
        let mut knobs = SimulatorConfig::default();
        knobs.overthinking_exponent = 0.0;
        let p = problem(0.0, 20);
        let all = generate_rollouts(&params(1.0, 400.0), &p, 8, 1, &knobs).unwrap();
        assert!(all.iter().all(|r| r.record.correct));
        let none = generate_rollouts(&params(0.0, 400.0), &problem(1.0, 20), 8, 1, &knobs).unwrap();
        assert!(none.iter().all(|r| !r.record.correct));
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let knobs = SimulatorConfig::default();
        let p = problem(0.4, 200);
        let a = generate_rollouts(&params(0.5, 300.0), &p, 8, 42, &knobs).unwrap();
        let b = generate_rollouts(&params(0.5, 300.0), &p, 8, 42, &knobs).unwrap();
        assert_eq!(a, b);
        let c = generate_rollouts(&params(0.5, 300.0), &p, 8, 43, &knobs).unwrap();
        assert_ne!(a, c);
        assert!(matches!(
            generate_rollouts(&params(0.5, 300.0), &p, 1, 42, &knobs),
            Err(SimError::GroupTooSmall(1))
        ));
    }

    #[test]
    fn records_validate_and_segment_like_generated() {
        let knobs = SimulatorConfig::default();
        let p = problem(0.4, 150);
        for r in generate_rollouts(&params(0.5, 350.0), &p, 8, 7, &knobs).unwrap() {
            r.record.validate().unwrap();
            let t = r.record.trajectory();
            let steps = segment_steps(&t.reasoning_text);
            assert_eq!(steps.len(), r.step_tokens.len());
            assert_eq!(r.step_tokens.iter().sum::<usize>(), r.record.reasoning_token_count);
            assert!(r.solution_steps[0]);
            let row: f64 = r.record.attention_row.as_ref().unwrap().iter().sum();
            assert!((row - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn coverage_counts_solution_tokens() {
        let knobs = SimulatorConfig::default();
        let p = problem(0.4, 100);
        let r = &generate_rollouts(&params(0.5, 400.0), &p, 2, 3, &knobs).unwrap()[0];
        let all: Vec<usize> = (0..r.step_tokens.len()).collect();
        assert_eq!(r.solution_coverage(&all), 1.0);
        assert_eq!(r.solution_coverage(&[]), 0.0);
    }

    #[test]
    fn success_peaks_at_the_ideal_length() {
        let knobs = SimulatorConfig::default();
        let p = problem(0.2, 200);
        let full = success_probability(0.6, &p, 200, &knobs);
        assert_eq!(full, 1.0);
        let half = success_probability(0.6, &p, 100, &knobs);
        assert!((half - 0.5f64.powf(knobs.underthinking_exponent)).abs() < 1e-12);
        let double = success_probability(0.6, &p, 400, &knobs);
        assert!((double - 2f64.powf(-knobs.overthinking_exponent)).abs() < 1e-12);
        assert!(success_probability(0.6, &p, 190, &knobs) < full);
        assert!(success_probability(0.6, &p, 210, &knobs) < full);
    }
}
