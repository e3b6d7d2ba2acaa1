//! Parsing model outputs into reasoning and answer segments, and splitting
//! the reasoning into steps at control phrases.
//!
//! All spans are measured in Unicode scalar values (`char`s), not bytes, so
//! they line up with the offset maps emitted by Python tokenizers.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub const OPEN_TAG: &str = "<think>";
pub const CLOSE_TAG: &str = "</think>";

/// Suffix appended after the reasoning before attention is read off the
/// close delimiter. Its tokens are never part of an attention row.
pub const AUXILIARY_PROMPT: &str = "Time is up. I should stop thinking and now write a summary containing all key steps required to solve the problem.";

const DEFAULT_SPLIT_TOKENS: &str = include_str!("../data/split_tokens.txt");

/// A parsed model output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub reasoning_text: String,
    pub answer_text: String,
    pub had_open_tag: bool,
    pub had_close_tag: bool,
    /// Exactly one open tag at offset 0, exactly one close tag after it.
    pub properly_enclosed: bool,
    /// Token count as reported by whoever produced the record.
    pub reasoning_token_count: usize,
}

impl Trajectory {
    /// A trajectory from already separated segments, treated as well formed.
    pub fn from_parts(reasoning: impl Into<String>, answer: impl Into<String>) -> Self {
        Trajectory {
            reasoning_text: reasoning.into(),
            answer_text: answer.into(),
            had_open_tag: true,
            had_close_tag: true,
            properly_enclosed: true,
            reasoning_token_count: 0,
        }
    }

    pub fn with_token_count(mut self, count: usize) -> Self {
        self.reasoning_token_count = count;
        self
    }

    /// `<think>` + reasoning + `</think>` + answer.
    pub fn render(&self) -> String {
        let mut out = String::with_capacity(
            OPEN_TAG.len() + self.reasoning_text.len() + CLOSE_TAG.len() + self.answer_text.len(),
        );
        out.push_str(OPEN_TAG);
        out.push_str(&self.reasoning_text);
        out.push_str(CLOSE_TAG);
        out.push_str(&self.answer_text);
        out
    }

    /// Same answer, reasoning replaced (used for compressed counterparts).
    pub fn with_reasoning(&self, reasoning: impl Into<String>, token_count: usize) -> Self {
        Trajectory {
            reasoning_text: reasoning.into(),
            reasoning_token_count: token_count,
            ..self.clone()
        }
    }
}

/// Splits `raw` at the first close delimiter.
///
/// Missing delimiters never fail: they are recorded in the tag flags so the
/// format reward can score malformed outputs.
pub fn parse_output(raw: &str) -> Trajectory {
    let (before, answer, had_close_tag) = match raw.find(CLOSE_TAG) {
        Some(pos) => (&raw[..pos], &raw[pos + CLOSE_TAG.len()..], true),
        None => (raw, "", false),
    };
    let open_pos = before.find(OPEN_TAG);
    let reasoning = match open_pos {
        Some(pos) => &before[pos + OPEN_TAG.len()..],
        None => before,
    };
    let had_open_tag = open_pos.is_some();
    let properly_enclosed = had_open_tag
        && had_close_tag
        && raw.starts_with(OPEN_TAG)
        && raw.matches(OPEN_TAG).count() == 1
        && raw.matches(CLOSE_TAG).count() == 1;

    Trajectory {
        reasoning_text: reasoning.to_string(),
        answer_text: answer.to_string(),
        had_open_tag,
        had_close_tag,
        properly_enclosed,
        reasoning_token_count: 0,
    }
}

/// One step of a segmented reasoning trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningStep {
    pub index: usize,
    pub text: String,
    /// Half-open `[start, end)` in chars of the reasoning text.
    pub char_span: (usize, usize),
    pub leading_marker: Option<String>,
}

impl ReasoningStep {
    pub fn char_len(&self) -> usize {
        self.char_span.1 - self.char_span.0
    }
}

/// The list of control phrases that open a new reasoning step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitTokens {
    /// Sorted longest first so the reported marker is the longest match.
    literals: Vec<String>,
}

impl Default for SplitTokens {
    fn default() -> Self {
        Self::parse(DEFAULT_SPLIT_TOKENS)
    }
}

impl SplitTokens {
    pub fn new<I, S>(literals: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut literals: Vec<String> = literals
            .into_iter()
            .map(Into::into)
            .filter(|s| !s.is_empty())
            .collect();
        literals.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        literals.dedup();
        SplitTokens { literals }
    }

    /// One literal per line; blank lines and `#` comments are skipped.
    /// Surrounding whitespace is not trimmed except for the line ending.
    pub fn parse(contents: &str) -> Self {
        Self::new(
            contents
                .lines()
                .map(|l| l.trim_end_matches('\r'))
                .filter(|l| !l.trim().is_empty() && !l.starts_with('#')),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> io::Result<Self> {
        Ok(Self::parse(&fs::read_to_string(path)?))
    }

    pub fn literals(&self) -> &[String] {
        &self.literals
    }

    /// Longest literal that starts `rest` and ends on a word boundary.
    fn match_at<'a>(&'a self, rest: &str) -> Option<&'a str> {
        self.literals
            .iter()
            .find(|lit| {
                rest.starts_with(lit.as_str())
                    && rest[lit.len()..]
                        .chars()
                        .next()
                        .is_none_or(|c| !c.is_alphanumeric())
            })
            .map(String::as_str)
    }
}

impl fmt::Display for SplitTokens {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} split literals", self.literals.len())
    }
}

/// Segments with the default split-token list.
pub fn segment_steps(reasoning_text: &str) -> Vec<ReasoningStep> {
    segment_steps_with(reasoning_text, &SplitTokens::default())
}

/// Splits `text` wherever a split literal opens a sentence.
///
/// A position opens a sentence when it is the start of the text, follows a
/// newline (possibly with more whitespace in between), or follows `.`, `!`
/// or `?` plus at least one whitespace char. Leading whitespace at the start
/// of the text also counts. The concatenation of the returned steps is
/// always `text`.
pub fn segment_steps_with(text: &str, tokens: &SplitTokens) -> Vec<ReasoningStep> {
    if text.is_empty() {
        return Vec::new();
    }

    // (byte offset, char offset, marker) of every boundary.
    let mut cuts: Vec<(usize, usize, Option<&str>)> = Vec::new();
    // True while the current whitespace run follows a sentence end.
    let mut after_terminal = true;
    let mut in_space_run = true;
    let mut prev: Option<char> = None;

    for (char_idx, (byte_idx, c)) in text.char_indices().enumerate() {
        let sentence_start = match prev {
            None => true,
            Some(p) if p.is_whitespace() => after_terminal,
            _ => false,
        };
        if sentence_start {
            if let Some(marker) = tokens.match_at(&text[byte_idx..]) {
                cuts.push((byte_idx, char_idx, Some(marker)));
            }
        }

        if c == '\n' {
            after_terminal = true;
            in_space_run = true;
        } else if c.is_whitespace() {
            if !in_space_run {
                after_terminal = matches!(prev, Some('.' | '!' | '?'));
                in_space_run = true;
            }
        } else {
            in_space_run = false;
            after_terminal = false;
        }
        prev = Some(c);
    }

    if cuts.first().is_none_or(|&(b, _, _)| b != 0) {
        cuts.insert(0, (0, 0, None));
    }
    let total_chars = text.chars().count();

    cuts.iter()
        .enumerate()
        .map(|(index, &(start_b, start_c, marker))| {
            let (end_b, end_c) = cuts
                .get(index + 1)
                .map_or((text.len(), total_chars), |&(b, c, _)| (b, c));
            ReasoningStep {
                index,
                text: text[start_b..end_b].to_string(),
                char_span: (start_c, end_c),
                leading_marker: marker.map(str::to_string),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(steps: &[ReasoningStep]) -> Vec<&str> {
        steps.iter().map(|s| s.text.as_str()).collect()
    }

    #[test]
    fn parse_well_formed() {
        let t = parse_output("<think>r</think>a");
        assert_eq!(t.reasoning_text, "r");
        assert_eq!(t.answer_text, "a");
        assert!(t.had_open_tag && t.had_close_tag && t.properly_enclosed);
    }

    #[test]
    fn parse_without_tags() {
        let t = parse_output("no tags at all");
        assert_eq!(t.reasoning_text, "no tags at all");
        assert_eq!(t.answer_text, "");
        assert!(!t.had_open_tag && !t.had_close_tag && !t.properly_enclosed);
    }

    #[test]
    fn parse_splits_at_first_close() {
        let raw = "<think>r</think>a</think>b";
        let t = parse_output(raw);
        // substring-scan oracle for the first close tag
        let first = (0..raw.len())
            .find(|&i| raw[i..].starts_with(CLOSE_TAG))
            .unwrap();
        assert_eq!(t.answer_text, &raw[first + CLOSE_TAG.len()..]);
        assert_eq!(t.answer_text, "a</think>b");
        assert_eq!(t.reasoning_text, "r");
        assert!(!t.properly_enclosed);
    }

    #[test]
    fn parse_open_only_and_leading_junk() {
        let t = parse_output("<think>still going");
        assert_eq!(t.reasoning_text, "still going");
        assert!(t.had_open_tag && !t.had_close_tag);
        assert!(t.answer_text.is_empty());

        let t = parse_output("x<think>r</think>a");
        assert_eq!(t.reasoning_text, "r");
        assert!(t.had_open_tag && t.had_close_tag && !t.properly_enclosed);
    }

    #[test]
    fn render_round_trips() {
        let t = Trajectory::from_parts("step one. So two.", "42");
        assert_eq!(parse_output(&t.render()), t);
    }

    #[test]
    fn segments_at_sentence_initial_markers() {
        let steps = segment_steps("First, a. Wait, b. So c.");
        assert_eq!(texts(&steps), ["First, a. ", "Wait, b. ", "So c."]);
        assert_eq!(steps[1].char_span, (10, 19));
        assert_eq!(steps[2].leading_marker.as_deref(), Some("So"));
    }

    #[test]
    fn no_markers_gives_one_step() {
        let steps = segment_steps("abc def");
        assert_eq!(texts(&steps), ["abc def"]);
        assert_eq!(steps[0].leading_marker, None);
        assert!(segment_steps("").is_empty());
    }

    #[test]
    fn mid_word_and_mid_sentence_markers_ignored() {
        let steps = segment_steps("Nowhere to go. Nowhere else. It said So what.");
        assert_eq!(steps.len(), 1);
        let steps = segment_steps("x\nNow y.\n  Hmm z");
        assert_eq!(texts(&steps), ["x\n", "Now y.\n  ", "Hmm z"]);
    }

    #[test]
    fn longest_marker_is_reported() {
        let steps = segment_steps("Let me double-check this. Let me see.");
        assert_eq!(
            steps[0].leading_marker.as_deref(),
            Some("Let me double-check")
        );
        assert_eq!(steps[1].leading_marker.as_deref(), Some("Let me"));
    }

    #[test]
    fn spans_count_chars_not_bytes() {
        let steps = segment_steps("π ≈ 3.14. So done.");
        assert_eq!(steps[0].char_span, (0, 10));
        assert_eq!(steps[1].char_span, (10, 18));
    }

    #[test]
    fn default_list_has_every_literal() {
        let tokens = SplitTokens::default();
        assert_eq!(tokens.literals().len(), 32);
        assert!(tokens.literals().iter().any(|l| l == "I don't see any errors"));
    }
}
