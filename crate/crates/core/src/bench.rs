//! Infilling benchmark generation at three levels: single-line, multi-line,
//! and random character span.
//!
//! Every task reconstructs its source exactly: `prefix + canonical_middle +
//! suffix == source text`. Line-level spans are drawn uniformly without
//! replacement over the eligible line ranges; random spans reuse the
//! character-split rule.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text_split::{split_at, Document};

/// Benchmark difficulty level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    #[serde(rename = "single_line")]
    SingleLine,
    #[serde(rename = "multi_line")]
    MultiLine,
    #[serde(rename = "random_span")]
    RandomSpan,
}

impl Level {
    pub fn tag(self) -> &'static str {
        match self {
            Level::SingleLine => "single_line",
            Level::MultiLine => "multi_line",
            Level::RandomSpan => "random_span",
        }
    }
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for Level {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single_line" => Ok(Level::SingleLine),
            "multi_line" => Ok(Level::MultiLine),
            "random_span" => Ok(Level::RandomSpan),
            other => Err(BenchError::UnknownLevel(other.to_string())),
        }
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown benchmark level {0:?}")]
    UnknownLevel(String),
}

/// Source location a task was cut from, as a character span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskOrigin {
    pub source_id: String,
    pub a: usize,
    pub b: usize,
}

/// One benchmark record: fill the gap between `prefix` and `suffix`; the
/// exact-match reference is `canonical_middle`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfillTask {
    pub task_id: String,
    pub level: Level,
    pub prefix: String,
    pub suffix: String,
    pub canonical_middle: String,
    pub origin: TaskOrigin,
}

impl InfillTask {
    /// Reassembles the source text.
    pub fn reconstruct(&self) -> String {
        format!("{}{}{}", self.prefix, self.canonical_middle, self.suffix)
    }
}

/// Knobs for task generation.
#[derive(Debug, Clone)]
pub struct TaskOptions {
    /// Let blank-only lines be single-line targets (off by default, since a
    /// blank middle makes exact match degenerate).
    pub include_blank_lines: bool,
    /// Upper bound on the multi-line span length (spans are uniform over
    /// `[2, min(max_span_lines, line_count - 1)]`).
    pub max_span_lines: usize,
}

impl Default for TaskOptions {
    fn default() -> Self {
        Self {
            include_blank_lines: false,
            max_span_lines: 8,
        }
    }
}

/// Char-position starts of each line (lines keep their terminator; an
/// unterminated last line still counts).
fn line_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = 0usize;
    let mut pos = 0usize;
    for c in text.chars() {
        pos += 1;
        if c == '\n' {
            spans.push((start, pos));
            start = pos;
        }
    }
    if pos > start {
        spans.push((start, pos));
    }
    spans
}

fn slice_chars(text: &str, a: usize, b: usize) -> (String, String, String) {
    let s = split_at(text, a, b).expect("span within bounds");
    (s.prefix, s.middle, s.suffix)
}

/// Generates up to `count` distinct tasks from one source document. Returns
/// an empty list (with a diagnostic) when the source is too short for the
/// requested level.
pub fn make_tasks<R: Rng + ?Sized>(
    source: &Document,
    level: Level,
    rng: &mut R,
    count: usize,
    opts: &TaskOptions,
) -> Vec<InfillTask> {
    let mut spans: Vec<(usize, usize)> = match level {
        Level::SingleLine => {
            let lines = line_spans(&source.text);
            lines
                .iter()
                .filter(|&&(a, b)| {
                    opts.include_blank_lines || !char_range(&source.text, a, b).trim().is_empty()
                })
                .copied()
                .collect()
        }
        Level::MultiLine => {
            let lines = line_spans(&source.text);
            let max_k = opts.max_span_lines.min(lines.len().saturating_sub(1));
            let mut pairs = Vec::new();
            for k in 2..=max_k {
                for w in lines.windows(k) {
                    pairs.push((w[0].0, w[k - 1].1));
                }
            }
            pairs
        }
        Level::RandomSpan => {
            let len = source.text.chars().count();
            if len == 0 {
                Vec::new()
            } else {
                let mut seen = std::collections::HashSet::new();
                let mut out = Vec::new();
                let mut attempts = 0usize;
                while out.len() < count && attempts < count.saturating_mul(64).max(64) {
                    attempts += 1;
                    let x = rng.random_range(0..=len);
                    let y = rng.random_range(0..=len);
                    let (a, b) = if x <= y { (x, y) } else { (y, x) };
                    if seen.insert((a, b)) {
                        out.push((a, b));
                    }
                }
                out
            }
        }
    };

    if spans.is_empty() {
        log::warn!(
            "source {} too short for {} tasks (len {} chars)",
            source.id,
            level,
            source.text.chars().count()
        );
        return Vec::new();
    }

    if level != Level::RandomSpan {
        spans.shuffle(rng);
        spans.truncate(count);
    }

    spans
        .into_iter()
        .map(|(a, b)| {
            let (prefix, middle, suffix) = slice_chars(&source.text, a, b);
            InfillTask {
                task_id: format!("{}:{}:{}-{}", source.id, level, a, b),
                level,
                prefix,
                suffix,
                canonical_middle: middle,
                origin: TaskOrigin {
                    source_id: source.id.clone(),
                    a,
                    b,
                },
            }
        })
        .collect()
}

fn char_range(text: &str, a: usize, b: usize) -> String {
    text.chars().skip(a).take(b - a).collect()
}
