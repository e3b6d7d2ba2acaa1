//! Pass-rate difficulty bins and their compression rates.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DifficultyError {
    #[error("cannot estimate difficulty from an empty rollout group")]
    EmptyGroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DifficultyLabel {
    Easy,
    Medium,
    Hard,
}

impl DifficultyLabel {
    pub const ALL: [DifficultyLabel; 3] = [Self::Easy, Self::Medium, Self::Hard];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Easy => "easy",
            Self::Medium => "medium",
            Self::Hard => "hard",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for DifficultyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DifficultyLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "easy" => Ok(Self::Easy),
            "medium" => Ok(Self::Medium),
            "hard" => Ok(Self::Hard),
            other => Err(format!("unknown difficulty bin '{other}'")),
        }
    }
}

/// Compression rate per bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompressionRates {
    pub easy: f64,
    pub medium: f64,
    pub hard: f64,
}

impl Default for CompressionRates {
    fn default() -> Self {
        CompressionRates {
            easy: 0.60,
            medium: 0.40,
            hard: 0.20,
        }
    }
}

impl CompressionRates {
    pub fn get(&self, label: DifficultyLabel) -> f64 {
        match label {
            DifficultyLabel::Easy => self.easy,
            DifficultyLabel::Medium => self.medium,
            DifficultyLabel::Hard => self.hard,
        }
    }
}

/// Pass-rate cut points. A group is easy at or above `easy`, hard at or
/// below `hard`, medium in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BinThresholds {
    pub easy: f64,
    pub hard: f64,
}

impl Default for BinThresholds {
    fn default() -> Self {
        BinThresholds {
            easy: 5.0 / 8.0,
            hard: 1.0 / 8.0,
        }
    }
}

impl BinThresholds {
    pub fn label(&self, pass_rate: f64) -> DifficultyLabel {
        if pass_rate >= self.easy {
            DifficultyLabel::Easy
        } else if pass_rate <= self.hard {
            DifficultyLabel::Hard
        } else {
            DifficultyLabel::Medium
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifficultyBin {
    pub label: DifficultyLabel,
    pub pass_rate: f64,
    pub compression_rate: f64,
}

/// Bins a rollout group by the fraction of correct rollouts.
pub fn estimate_difficulty(
    correct_flags: &[bool],
    thresholds: &BinThresholds,
    rates: &CompressionRates,
) -> Result<DifficultyBin, DifficultyError> {
    if correct_flags.is_empty() {
        return Err(DifficultyError::EmptyGroup);
    }
    let passed = correct_flags.iter().filter(|&&c| c).count();
    let pass_rate = passed as f64 / correct_flags.len() as f64;
    let label = thresholds.label(pass_rate);
    Ok(DifficultyBin {
        label,
        pass_rate,
        compression_rate: rates.get(label),
    })
}
