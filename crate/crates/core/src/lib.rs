//! Difficulty-adaptive, attention-guided pruning of reasoning traces.
//!
//! The numeric modules are generic over [`Scalar`] (`f32`/`f64`); the
//! metrics additionally accept exact rationals. Aliases below fix the scalar
//! for the common cases.

pub mod advantage;
pub mod compression;
pub mod config;
pub mod difficulty;
pub mod metrics;
pub mod num;
pub mod pipeline;
pub mod records;
pub mod rewards;
pub mod scoring;
pub mod simulator;
pub mod trajectory;

pub use num::Scalar;

pub use advantage::group_advantages;
pub use compression::{compress, eviction_percentage, uniformity_score};
pub use config::{validate_config, EngineConfig};
pub use difficulty::{estimate_difficulty, DifficultyBin, DifficultyLabel};
pub use metrics::{auc_oaa, oaa, otb_f1, EvalReport, EvalSample};
pub use records::{load_records, RolloutRecord};
pub use rewards::{total_reward, WindowSnapshot, WindowStats};
pub use trajectory::{parse_output, segment_steps, ReasoningStep, Trajectory};

pub type AttentionRowF64 = scoring::AttentionRow<f64>;
pub type AttentionRowF32 = scoring::AttentionRow<f32>;
pub type StepScoresF64 = scoring::StepScores<f64>;
pub type StepScoresF32 = scoring::StepScores<f32>;
pub type CompressionPlanF64 = compression::CompressionPlan<f64>;
pub type CompressionPlanF32 = compression::CompressionPlan<f32>;
pub type RewardParamsF64 = rewards::RewardParams<f64>;
pub type RewardBreakdownF64 = rewards::RewardBreakdown<f64>;
pub type RewardBreakdownF32 = rewards::RewardBreakdown<f32>;
/// Exact metric values, e.g. `auc_oaa::<ExactRatio>(..)`.
pub type ExactRatio = num_rational::Ratio<u64>;
