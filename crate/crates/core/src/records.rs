//! JSONL rollout records: one JSON object per line.
//!
//! Unknown fields are ignored on read. Stage outputs (`steps`,
//! `step_scores`, `compression`, `reward`, `advantage`) are optional fields
//! of the same record, so every stage's output is a valid input to the next.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::error::Category;
use thiserror::Error;

use crate::compression::CompressionPlan;
use crate::difficulty::DifficultyBin;
use crate::rewards::RewardBreakdown;
use crate::scoring::StepScores;
use crate::trajectory::{parse_output, ReasoningStep, Trajectory};

#[derive(Debug, Error)]
pub enum RecordErrorKind {
    #[error("malformed JSON: {0}")]
    Parse(String),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("inconsistent record: {0}")]
    Consistency(String),
}

#[derive(Debug, Error)]
#[error("line {line}: {kind}")]
pub struct LoadError {
    pub line: usize,
    pub kind: RecordErrorKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionOutput {
    pub compressed_reasoning: String,
    pub kept_token_count: usize,
    pub plan: CompressionPlan<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardOutput {
    pub original: RewardBreakdown<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compressed: Option<RewardBreakdown<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageOutput {
    pub group: String,
    pub original: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compressed: Option<f64>,
}

/// One sampled response and whatever the pipeline has attached to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub problem_id: String,
    pub rollout_id: String,
    /// Training step the rollout was sampled at; orders window updates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_text: Option<String>,
    pub correct: bool,
    pub reasoning_token_count: usize,
    /// Char offsets into the reasoning text, one pair per token.
    pub token_char_spans: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention_row: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention_raw: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topk_logprobs: Option<Vec<Vec<f64>>>,
    /// Producer's note on softmax stage and query position.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention_meta: Option<String>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<Vec<ReasoningStep>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_scores: Option<StepScores<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<DifficultyBin>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compression: Option<CompressionOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advantage: Option<AdvantageOutput>,
}

impl RolloutRecord {
    /// A bare record around a raw output; spans and attention left empty.
    pub fn from_raw(problem_id: impl Into<String>, rollout_id: impl Into<String>, raw: impl Into<String>, correct: bool) -> Self {
        RolloutRecord {
            problem_id: problem_id.into(),
            rollout_id: rollout_id.into(),
            step: None,
            raw_text: Some(raw.into()),
            reasoning_text: None,
            answer_text: None,
            correct,
            reasoning_token_count: 0,
            token_char_spans: Vec::new(),
            attention_row: None,
            attention_raw: None,
            topk_logprobs: None,
            attention_meta: None,
            steps: None,
            step_scores: None,
            difficulty: None,
            compression: None,
            reward: None,
            advantage: None,
        }
    }

    /// The parsed output, carrying the record's token count.
    pub fn trajectory(&self) -> Trajectory {
        let t = match (&self.raw_text, &self.reasoning_text) {
            (Some(raw), _) => parse_output(raw),
            (None, Some(r)) => Trajectory::from_parts(r.clone(), self.answer_text.clone().unwrap_or_default()),
            (None, None) => Trajectory::from_parts("", ""),
        };
        t.with_token_count(self.reasoning_token_count)
    }

    /// Checks every cross-field invariant. Messages name the values that
    /// disagree.
    pub fn validate(&self) -> Result<(), RecordErrorKind> {
        let bad = |msg: String| Err(RecordErrorKind::Consistency(msg));
        match (&self.raw_text, &self.reasoning_text) {
            (Some(_), Some(_)) => return bad("both raw_text and reasoning_text are set".into()),
            (None, None) => {
                return Err(RecordErrorKind::Schema(
                    "one of raw_text or reasoning_text is required".into(),
                ))
            }
            (Some(_), None) if self.answer_text.is_some() => {
                return bad("answer_text is only allowed with reasoning_text".into())
            }
            _ => {}
        }
        let n = self.reasoning_token_count;
        if self.token_char_spans.len() != n {
            return bad(format!(
                "token_char_spans has {} entries but reasoning_token_count is {n}",
                self.token_char_spans.len()
            ));
        }
        let sources = [
            self.attention_row.is_some(),
            self.attention_raw.is_some(),
            self.topk_logprobs.is_some(),
        ];
        if sources.iter().filter(|&&s| s).count() > 1 {
            return bad("at most one of attention_row, attention_raw, topk_logprobs may be set".into());
        }
        if let Some(row) = &self.attention_row {
            if row.len() != n {
                return bad(format!(
                    "attention_row has length {} but reasoning_token_count is {n}",
                    row.len()
                ));
            }
            if let Some(i) = row.iter().position(|v| !v.is_finite() || *v < 0.0) {
                return bad(format!("attention_row[{i}] = {} is negative or non-finite", row[i]));
            }
        }
        if let Some(raw) = &self.attention_raw {
            for (l, heads) in raw.iter().enumerate() {
                for (h, row) in heads.iter().enumerate() {
                    if row.len() != n {
                        return bad(format!(
                            "attention_raw[{l}][{h}] has length {} but reasoning_token_count is {n}",
                            row.len()
                        ));
                    }
                }
            }
        }
        if let Some(lp) = &self.topk_logprobs {
            if lp.len() != n {
                return bad(format!(
                    "topk_logprobs has {} entries but reasoning_token_count is {n}",
                    lp.len()
                ));
            }
            if let Some(i) = lp.iter().position(Vec::is_empty) {
                return bad(format!("topk_logprobs[{i}] is empty"));
            }
        }

        let reasoning = self.trajectory().reasoning_text;
        let chars = reasoning.chars().count();
        for (i, &(s, e)) in self.token_char_spans.iter().enumerate() {
            if s > e || e > chars {
                return bad(format!(
                    "token_char_spans[{i}] = ({s}, {e}) does not fit reasoning of {chars} chars"
                ));
            }
        }
        if let Some(steps) = &self.steps {
            let joined: String = steps.iter().map(|s| s.text.as_str()).collect();
            if joined != reasoning {
                return bad("steps do not reconstruct the reasoning text".into());
            }
            if let Some(scores) = &self.step_scores {
                if scores.len() != steps.len() {
                    return bad(format!(
                        "step_scores has {} entries for {} steps",
                        scores.len(),
                        steps.len()
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Parses one line into a validated record.
pub fn parse_record(line: &str) -> Result<RolloutRecord, RecordErrorKind> {
    let record: RolloutRecord = serde_json::from_str(line).map_err(|e| match e.classify() {
        Category::Data => RecordErrorKind::Schema(e.to_string()),
        _ => RecordErrorKind::Parse(e.to_string()),
    })?;
    record.validate()?;
    Ok(record)
}

/// Streams validated records from a JSONL source. Blank lines are skipped.
pub struct RecordReader<R> {
    lines: io::Lines<R>,
    line: usize,
}

impl<R: BufRead> RecordReader<R> {
    pub fn new(reader: R) -> Self {
        RecordReader {
            lines: reader.lines(),
            line: 0,
        }
    }
}

/// Item error: either the read failed or line `n` was rejected.
#[derive(Debug, Error)]
pub enum ReadError {
    #[error("read failed at line {line}: {source}")]
    Io { line: usize, source: io::Error },
    #[error(transparent)]
    Record(#[from] LoadError),
}

impl<R: BufRead> Iterator for RecordReader<R> {
    type Item = Result<RolloutRecord, ReadError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(source) => {
                    return Some(Err(ReadError::Io {
                        line: self.line + 1,
                        source,
                    }))
                }
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            let line = self.line;
            return Some(parse_record(&text).map_err(|kind| LoadError { line, kind }.into()));
        }
    }
}

/// Opens `path` for streaming.
pub fn load_records(path: impl AsRef<Path>) -> io::Result<RecordReader<BufReader<File>>> {
    Ok(RecordReader::new(BufReader::new(File::open(path)?)))
}

/// Loads every record, stopping at the first error.
pub fn read_all(path: impl AsRef<Path>) -> Result<Vec<RolloutRecord>, ReadError> {
    let reader = load_records(path).map_err(|source| ReadError::Io { line: 0, source })?;
    reader.collect()
}

/// Writes values as JSON lines.
pub fn write_jsonl<W: Write, T: Serialize>(mut out: W, items: &[T]) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
