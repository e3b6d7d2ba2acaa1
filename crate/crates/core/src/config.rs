//! Engine configuration: JSON on disk, every field optional.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::difficulty::{BinThresholds, CompressionRates, DifficultyLabel};
use crate::metrics::DEFAULT_T_MAX;
use crate::rewards::RewardParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] io::Error),
    #[error("config is not valid JSON: {0}")]
    Parse(String),
    #[error("{path}: {value} is out of range ({expected})")]
    Range {
        path: String,
        value: f64,
        expected: &'static str,
    },
    #[error("{path}: unknown difficulty bin '{bin}'")]
    UnknownBin { path: String, bin: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

impl ConfigError {
    pub fn is_io(&self) -> bool {
        matches!(self, ConfigError::Io(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub correctness: f64,
    pub format: f64,
    pub length: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            correctness: 4.0,
            format: 1.0,
            length: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Epsilons {
    /// Floor on `L_max - L_min` in the length normalizer.
    pub length_norm: f64,
    /// Added to the group standard deviation.
    pub advantage_std: f64,
}

impl Default for Epsilons {
    fn default() -> Self {
        Epsilons {
            length_norm: 1e-6,
            advantage_std: 1e-8,
        }
    }
}

/// Per-tier counts or values for the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerTier<T> {
    pub easy: T,
    pub medium: T,
    pub hard: T,
}

impl<T> PerTier<T> {
    pub fn get_ref(&self, label: DifficultyLabel) -> &T {
        match label {
            DifficultyLabel::Easy => &self.easy,
            DifficultyLabel::Medium => &self.medium,
            DifficultyLabel::Hard => &self.hard,
        }
    }

    pub fn set(&mut self, label: DifficultyLabel, value: T) {
        match label {
            DifficultyLabel::Easy => self.easy = value,
            DifficultyLabel::Medium => self.medium = value,
            DifficultyLabel::Hard => self.hard = value,
        }
    }
}

impl<T: Copy> PerTier<T> {
    pub fn get(&self, label: DifficultyLabel) -> T {
        *self.get_ref(label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulatorConfig {
    /// Training iterations K.
    pub iterations: usize,
    pub seed: u64,
    /// Step size of the mean-length drift.
    pub learning_rate: f64,
    /// Skill step per unit of learning rate.
    pub skill_gain: f64,
    pub compression_enabled: bool,
    /// Problems per latent difficulty tier.
    pub problems: PerTier<usize>,
    pub initial_skill: f64,
    /// Starting mean reasoning length per tier, in tokens.
    pub initial_lengths: PerTier<f64>,
    /// Log-normal spread of emitted lengths.
    pub length_spread: f64,
    /// Attention mass of filler steps relative to solution steps.
    pub filler_attention: f64,
    /// Exponent of the penalty for stopping before the ideal length.
    pub underthinking_exponent: f64,
    /// Exponent of the penalty for running past the ideal length.
    pub overthinking_exponent: f64,
    /// Slope of success probability in `skill - latent_difficulty`.
    pub skill_slope: f64,
    /// Emit every rollout record alongside the report.
    pub write_records: bool,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig {
            iterations: 200,
            seed: 20_251_015,
            learning_rate: 0.05,
            skill_gain: 0.002,
            compression_enabled: true,
            problems: PerTier {
                easy: 40,
                medium: 40,
                hard: 40,
            },
            initial_skill: 0.55,
            initial_lengths: PerTier {
                easy: 400.0,
                medium: 500.0,
                hard: 600.0,
            },
            length_spread: 0.3,
            filler_attention: 0.05,
            underthinking_exponent: 2.0,
            overthinking_exponent: 0.1,
            skill_slope: 1.5,
            write_records: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Rollouts per problem, N.
    pub rollouts: usize,
    /// Sliding-window length W in training steps.
    pub window: usize,
    pub compression_rates: CompressionRates,
    pub bin_thresholds: BinThresholds,
    pub reward_weights: RewardWeights,
    pub epsilon: Epsilons,
    /// Compression rate for inference-time compression.
    pub static_tau: f64,
    pub t_max: u64,
    pub simulator: SimulatorConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            rollouts: 8,
            window: 10,
            compression_rates: CompressionRates::default(),
            bin_thresholds: BinThresholds::default(),
            reward_weights: RewardWeights::default(),
            epsilon: Epsilons::default(),
            static_tau: 0.40,
            t_max: DEFAULT_T_MAX,
            simulator: SimulatorConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn reward_params(&self) -> RewardParams<f64> {
        RewardParams {
            correctness: self.reward_weights.correctness,
            format: self.reward_weights.format,
            length: self.reward_weights.length,
            length_epsilon: self.epsilon.length_norm,
        }
    }

    /// Parses and validates a JSON document. Blank input yields defaults.
    pub fn from_json_str(s: &str) -> Result<Self, ConfigError> {
        let value: Value = if s.trim().is_empty() {
            Value::Object(Default::default())
        } else {
            serde_json::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))?
        };
        check_bin_keys(&value, "compression_rates", &["easy", "medium", "hard"])?;
        check_bin_keys(&value, "bin_thresholds", &["easy", "hard"])?;
        let config: EngineConfig =
            serde_json::from_value(value).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let unit = "expected a value in [0, 1]";
        let rates = [
            ("compression_rates.easy", self.compression_rates.easy),
            ("compression_rates.medium", self.compression_rates.medium),
            ("compression_rates.hard", self.compression_rates.hard),
            ("bin_thresholds.easy", self.bin_thresholds.easy),
            ("bin_thresholds.hard", self.bin_thresholds.hard),
            ("static_tau", self.static_tau),
            ("simulator.initial_skill", self.simulator.initial_skill),
            ("simulator.filler_attention", self.simulator.filler_attention),
        ];
        for (path, value) in rates {
            if !(0.0..=1.0).contains(&value) {
                return Err(range(path, value, unit));
            }
        }
        let positive = [
            ("rollouts", self.rollouts as f64),
            ("window", self.window as f64),
            ("t_max", self.t_max as f64),
            ("simulator.iterations", self.simulator.iterations as f64),
            ("simulator.initial_lengths.easy", self.simulator.initial_lengths.easy),
            ("simulator.initial_lengths.medium", self.simulator.initial_lengths.medium),
            ("simulator.initial_lengths.hard", self.simulator.initial_lengths.hard),
            ("epsilon.length_norm", self.epsilon.length_norm),
            ("epsilon.advantage_std", self.epsilon.advantage_std),
        ];
        for (path, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(range(path, value, "expected a positive value"));
            }
        }
        let non_negative = [
            ("reward_weights.correctness", self.reward_weights.correctness),
            ("reward_weights.format", self.reward_weights.format),
            ("reward_weights.length", self.reward_weights.length),
            ("simulator.learning_rate", self.simulator.learning_rate),
            ("simulator.skill_gain", self.simulator.skill_gain),
            ("simulator.length_spread", self.simulator.length_spread),
            ("simulator.underthinking_exponent", self.simulator.underthinking_exponent),
            ("simulator.overthinking_exponent", self.simulator.overthinking_exponent),
            ("simulator.skill_slope", self.simulator.skill_slope),
        ];
        for (path, value) in non_negative {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(range(path, value, "expected a finite value >= 0"));
            }
        }
        if self.rollouts < 2 {
            return Err(range("rollouts", self.rollouts as f64, "expected at least 2"));
        }
        if self.simulator.learning_rate > 1.0 {
            return Err(range(
                "simulator.learning_rate",
                self.simulator.learning_rate,
                "expected a value in [0, 1]",
            ));
        }
        if self.bin_thresholds.hard >= self.bin_thresholds.easy {
            return Err(ConfigError::Invalid {
                path: "bin_thresholds".into(),
                message: format!(
                    "hard cut {} must be below easy cut {}",
                    self.bin_thresholds.hard, self.bin_thresholds.easy
                ),
            });
        }
        let p = self.simulator.problems;
        if p.easy + p.medium + p.hard == 0 {
            return Err(ConfigError::Invalid {
                path: "simulator.problems".into(),
                message: "at least one problem is required".into(),
            });
        }
        Ok(())
    }
}

fn range(path: &str, value: f64, expected: &'static str) -> ConfigError {
    ConfigError::Range {
        path: path.to_string(),
        value,
        expected,
    }
}

fn check_bin_keys(root: &Value, field: &str, allowed: &[&str]) -> Result<(), ConfigError> {
    if let Some(Value::Object(map)) = root.get(field) {
        if let Some(bad) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(ConfigError::UnknownBin {
                path: format!("{field}.{bad}"),
                bin: bad.clone(),
            });
        }
    }
    Ok(())
}

/// Reads and validates a config file.
pub fn validate_config(path: impl AsRef<Path>) -> Result<EngineConfig, ConfigError> {
    EngineConfig::from_json_str(&fs::read_to_string(path)?)
}
