//! Correctness, format and length rewards, and the per-bin sliding window
//! of recent rollout lengths the length reward is measured against.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::difficulty::DifficultyLabel;
use crate::num::Scalar;
use crate::trajectory::Trajectory;

/// Sigmoid temperature as a fraction of the window median.
pub const BONUS_SCALE: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("window update needs at least one length")]
    EmptyLengths,
    #[error("window capacity must be positive")]
    ZeroCapacity,
}

/// Component weights and the length normalizer's epsilon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams<T> {
    pub correctness: T,
    pub format: T,
    pub length: T,
    pub length_epsilon: T,
}

impl<T: Scalar> Default for RewardParams<T> {
    fn default() -> Self {
        RewardParams {
            correctness: T::lit(4.0),
            format: T::lit(1.0),
            length: T::lit(2.0),
            length_epsilon: T::lit(1e-6),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown<T> {
    pub correctness: T,
    pub format: T,
    pub length: T,
    pub total: T,
}

pub fn correctness_reward<T: Scalar>(correct: bool, params: &RewardParams<T>) -> T {
    if correct {
        params.correctness
    } else {
        T::zero()
    }
}

/// Half credit for having both tags, the other half for proper enclosure.
pub fn format_reward<T: Scalar>(t: &Trajectory, params: &RewardParams<T>) -> T {
    let half = T::lit(0.5);
    let mut r = T::zero();
    if t.had_open_tag && t.had_close_tag {
        r = r + half;
        if t.properly_enclosed {
            r = r + half;
        }
    }
    r * params.format
}

/// Pooled length statistics of one bin's window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSnapshot {
    pub min: u64,
    pub max: u64,
    /// Mean of the two middle values for an even count.
    pub median: f64,
}

impl WindowSnapshot {
    pub fn from_lengths(lengths: &[u64]) -> Option<Self> {
        if lengths.is_empty() {
            return None;
        }
        let mut sorted = lengths.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2] as f64
        } else {
            (sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64) / 2.0
        };
        Some(WindowSnapshot {
            min: sorted[0],
            max: sorted[n - 1],
            median,
        })
    }
}

/// Last `capacity` training steps of rollout lengths, per difficulty bin.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowStats {
    capacity: usize,
    entries: [VecDeque<Vec<u64>>; 3],
    snapshots: [Option<WindowSnapshot>; 3],
}

impl Default for WindowStats {
    fn default() -> Self {
        Self::new(10).expect("positive capacity")
    }
}

impl WindowStats {
    pub fn new(capacity: usize) -> Result<Self, RewardError> {
        if capacity == 0 {
            return Err(RewardError::ZeroCapacity);
        }
        Ok(WindowStats {
            capacity,
            entries: Default::default(),
            snapshots: [None; 3],
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Number of training steps currently held for `bin`.
    pub fn depth(&self, bin: DifficultyLabel) -> usize {
        self.entries[bin.index()].len()
    }

    pub fn entries(&self, bin: DifficultyLabel) -> impl Iterator<Item = &[u64]> {
        self.entries[bin.index()].iter().map(Vec::as_slice)
    }

    /// `None` while the bin's window is empty.
    pub fn snapshot(&self, bin: DifficultyLabel) -> Option<WindowSnapshot> {
        self.snapshots[bin.index()]
    }

    /// Pushes one training step's lengths, dropping the oldest step beyond
    /// capacity.
    pub fn update(&mut self, bin: DifficultyLabel, lengths: &[u64]) -> Result<(), RewardError> {
        if lengths.is_empty() {
            return Err(RewardError::EmptyLengths);
        }
        let buf = &mut self.entries[bin.index()];
        buf.push_back(lengths.to_vec());
        while buf.len() > self.capacity {
            buf.pop_front();
        }
        let pooled: Vec<u64> = buf.iter().flatten().copied().collect();
        self.snapshots[bin.index()] = WindowSnapshot::from_lengths(&pooled);
        Ok(())
    }
}

/// Functional form of [`WindowStats::update`].
pub fn update_window(
    stats: &WindowStats,
    bin: DifficultyLabel,
    lengths: &[u64],
) -> Result<WindowStats, RewardError> {
    let mut next = stats.clone();
    next.update(bin, lengths)?;
    Ok(next)
}

/// `(L_max - len) / max(L_max - L_min, eps)`, clamped to [0, 1].
pub fn normalized_length<T: Scalar>(len: u64, w: &WindowSnapshot, eps: T) -> T {
    let span = T::from_u64(w.max - w.min).expect("u64 fits scalar").max(eps);
    let above = T::from_u64(w.max).expect("u64 fits scalar") - T::from_u64(len).expect("u64 fits scalar");
    (above / span).max(T::zero()).min(T::one())
}

/// Sigmoid bonus centred on the window median; 0 when the median is 0.
pub fn length_bonus<T: Scalar>(len: u64, median: f64) -> T {
    if median <= 0.0 {
        return T::zero();
    }
    let median = T::lit(median);
    let len = T::from_u64(len).expect("u64 fits scalar");
    let z = (len - median) / (T::lit(BONUS_SCALE) * median);
    T::one() / (T::one() + z.exp())
}

/// Length reward for a rollout of `len` reasoning tokens.
///
/// Zero for incorrect rollouts and for a bin with no history yet.
pub fn length_reward<T: Scalar>(
    len: u64,
    window: Option<&WindowSnapshot>,
    correct: bool,
    params: &RewardParams<T>,
) -> T {
    let Some(w) = window.filter(|_| correct) else {
        return T::zero();
    };
    let norm = normalized_length(len, w, params.length_epsilon);
    let bonus = length_bonus::<T>(len, w.median);
    params.length * norm.max(bonus)
}

pub fn total_reward<T: Scalar>(
    t: &Trajectory,
    correct: bool,
    window: Option<&WindowSnapshot>,
    params: &RewardParams<T>,
) -> RewardBreakdown<T> {
    let correctness = correctness_reward(correct, params);
    let format = format_reward(t, params);
    let length = length_reward(t.reasoning_token_count as u64, window, correct, params);
    RewardBreakdown {
        correctness,
        format,
        length,
        total: correctness + format + length,
    }
}
