//! End-to-end infilling: build the prompt, obtain a completion, verify the
//! start/end constraints, strip them, and score.
//!
//! The post check mirrors the constrained formats: a generation passes when
//! it begins with the expected start affix and ends with the expected end
//! affix (for the plain PSM/SPM-v1 layouts those are `l_prefix` and
//! `f_suffix`); the affixes are then removed and the remainder is the
//! completed middle. A length guard runs first so overlapping affixes are
//! never double-counted.

mod generators;

pub use generators::{
    FixedTextGenerator, Generation, GenerationRequest, Generator, GeneratorError, HttpGenerator,
    MixGenerator, OracleGenerator, RecordingGenerator, TruncatingOracleGenerator,
};

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::InfillTask;
use crate::formats::{assemble_inference_prompt, FormatError, FormatMode};
use crate::text_split::{refine, CharSplit, RefinedSplit};
use crate::tok::{SpecialToken, TokError, TokenId, TokenizerHandle};

/// Decoding knobs forwarded to the generator.
#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub max_new_tokens: usize,
    pub temperature: f64,
    /// Id generation should halt at.
    pub stop_on: TokenId,
    /// Post-check failures trigger up to this many regenerations.
    pub retries: u32,
}

impl GeneratorConfig {
    /// Defaults bound to a tokenizer's end marker.
    pub fn for_tokenizer(t: &TokenizerHandle) -> Self {
        Self {
            max_new_tokens: 256,
            temperature: 0.0,
            stop_on: t.special_id(SpecialToken::Eot),
            retries: 0,
        }
    }
}

/// Post-check result for one generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "pass")]
    Pass,
    #[serde(rename = "fail_start")]
    FailStart,
    #[serde(rename = "fail_end")]
    FailEnd,
    #[serde(rename = "fail_overlap")]
    FailOverlap,
    #[serde(rename = "fail_no_eot")]
    FailNoEot,
}

impl Verdict {
    pub fn tag(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::FailStart => "fail_start",
            Verdict::FailEnd => "fail_end",
            Verdict::FailOverlap => "fail_overlap",
            Verdict::FailNoEot => "fail_no_eot",
        }
    }
}

/// One generation with its verdict; `middle` is present exactly when the
/// post check passed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationOutcome {
    pub raw_text: String,
    pub verdict: Verdict,
    pub middle: Option<String>,
}

/// Aggregate scores for one evaluation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub total: u64,
    /// Fraction of generations complying with the post check.
    pub pcp_rate: f64,
    /// Fraction whose stripped middle equals the canonical middle.
    pub exact_match_rate: f64,
    pub verdicts: BTreeMap<String, u64>,
    /// Keyed by `floor((|l_prefix| + |f_suffix|) / bucket_width)`.
    pub buckets: BTreeMap<u64, BucketStats>,
    /// Unbiased pass@1 estimate; present when more than one sample per task
    /// was drawn.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pass_at_1: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BucketStats {
    pub count: u64,
    pub pcp_rate: f64,
    pub exact_match_rate: f64,
}

#[derive(Debug, Error)]
pub enum InferError {
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Tok(#[from] TokError),
    #[error("evaluation needs at least one task")]
    NoTasks,
    #[error("{0}")]
    Domain(String),
}

/// Rebuilds the five-section view of a task's insertion point.
pub fn task_refined(task: &InfillTask) -> RefinedSplit {
    let a = task.prefix.chars().count();
    let b = a + task.canonical_middle.chars().count();
    refine(&CharSplit {
        prefix: task.prefix.clone(),
        middle: task.canonical_middle.clone(),
        suffix: task.suffix.clone(),
        split_points: (a, b),
    })
}

/// Post-check affixes per mode; `None` for the unconstrained modes, which
/// skip the check entirely.
fn post_check_affixes(mode: FormatMode, r: &RefinedSplit) -> Option<(String, String)> {
    match mode {
        FormatMode::FimsePsm | FormatMode::FimseSpmV1 => {
            Some((r.l_prefix.clone(), r.f_suffix.clone()))
        }
        // v2 regenerates R-Prefix before the constrained span.
        FormatMode::FimseSpmV2 => {
            Some((format!("{}{}", r.r_prefix, r.l_prefix), r.f_suffix.clone()))
        }
        // v3's trainable region carries its own markers.
        FormatMode::FimseSpmV3 => Some((
            format!("{}{}", SpecialToken::Start.marker(), r.l_prefix),
            format!("{}{}", SpecialToken::End.marker(), r.f_suffix),
        )),
        FormatMode::FimPsm
        | FormatMode::FimSpm
        | FormatMode::FimSpmVariant
        | FormatMode::PlainL2r => None,
    }
}

/// Applies the stop/overlap/start/end checks and strips the affixes.
fn post_check(gen: &Generation, start: &str, end: &str) -> GenerationOutcome {
    let raw = gen.text.clone();
    if !gen.saw_stop {
        return GenerationOutcome {
            raw_text: raw,
            verdict: Verdict::FailNoEot,
            middle: None,
        };
    }
    if raw.len() < start.len() + end.len() {
        return GenerationOutcome {
            raw_text: raw,
            verdict: Verdict::FailOverlap,
            middle: None,
        };
    }
    if !raw.starts_with(start) {
        return GenerationOutcome {
            raw_text: raw,
            verdict: Verdict::FailStart,
            middle: None,
        };
    }
    if !raw.ends_with(end) {
        return GenerationOutcome {
            raw_text: raw,
            verdict: Verdict::FailEnd,
            middle: None,
        };
    }
    let middle = raw[start.len()..raw.len() - end.len()].to_string();
    GenerationOutcome {
        raw_text: raw,
        verdict: Verdict::Pass,
        middle: Some(middle),
    }
}

fn run_attempt(
    task: &InfillTask,
    gen: &dyn Generator,
    cfg: &GeneratorConfig,
    prompt_ids: &[TokenId],
    prompt_text: &str,
    affixes: &Option<(String, String)>,
    attempt: u32,
) -> Result<GenerationOutcome, InferError> {
    let (start, end) = match affixes {
        Some((s, e)) => (s.as_str(), e.as_str()),
        None => ("", ""),
    };
    let req = GenerationRequest {
        prompt_text,
        prompt_ids,
        stop_marker: SpecialToken::Eot.marker(),
        max_new_tokens: cfg.max_new_tokens,
        temperature: cfg.temperature,
        attempt,
        task_id: &task.task_id,
        start_affix: start,
        end_affix: end,
        canonical_middle: &task.canonical_middle,
    };
    let generation = gen.generate(&req)?;
    Ok(match affixes {
        Some((s, e)) => post_check(&generation, s, e),
        None => GenerationOutcome {
            raw_text: generation.text.clone(),
            verdict: Verdict::Pass,
            middle: Some(generation.text),
        },
    })
}

/// Runs one infilling attempt (plus configured retries) for a task.
///
/// The prompt is assembled from the task's refined insertion point; the
/// constrained modes verify and strip the affixes, the vanilla modes take
/// the raw generation as the middle.
pub fn run_infill(
    task: &InfillTask,
    mode: FormatMode,
    gen: &dyn Generator,
    cfg: &GeneratorConfig,
    t: &TokenizerHandle,
) -> Result<GenerationOutcome, InferError> {
    run_infill_attempt(task, mode, gen, cfg, t, 0)
}

/// Like [`run_infill`] but with the retry counter offset by a sampling
/// round, so repeated draws stay distinguishable to the generator.
pub fn run_infill_attempt(
    task: &InfillTask,
    mode: FormatMode,
    gen: &dyn Generator,
    cfg: &GeneratorConfig,
    t: &TokenizerHandle,
    base_attempt: u32,
) -> Result<GenerationOutcome, InferError> {
    let refined = task_refined(task);
    let prompt_ids = assemble_inference_prompt(&refined, mode, t)?;
    let prompt_text = t.decode(&prompt_ids)?;
    let affixes = post_check_affixes(mode, &refined);
    let mut outcome = None;
    for retry in 0..=cfg.retries {
        let o = run_attempt(
            task,
            gen,
            cfg,
            &prompt_ids,
            &prompt_text,
            &affixes,
            base_attempt + retry,
        )?;
        let passed = o.verdict == Verdict::Pass;
        outcome = Some(o);
        if passed {
            break;
        }
    }
    Ok(outcome.expect("at least one attempt runs"))
}

/// Evaluates every task once and aggregates PCP/exact-match rates, overall
/// and per combined-constraint-length bucket.
pub fn evaluate(
    tasks: &[InfillTask],
    mode: FormatMode,
    gen: &dyn Generator,
    cfg: &GeneratorConfig,
    t: &TokenizerHandle,
    bucket_width: usize,
) -> Result<EvalReport, InferError> {
    evaluate_sampled(tasks, mode, gen, cfg, t, bucket_width, 1)
}

/// Evaluates with `samples_per_task` generations per task. Rates cover all
/// generations; with more than one sample the unbiased pass@1 estimate over
/// exact-match correctness is included.
pub fn evaluate_sampled(
    tasks: &[InfillTask],
    mode: FormatMode,
    gen: &dyn Generator,
    cfg: &GeneratorConfig,
    t: &TokenizerHandle,
    bucket_width: usize,
    samples_per_task: u32,
) -> Result<EvalReport, InferError> {
    if tasks.is_empty() {
        return Err(InferError::NoTasks);
    }
    if samples_per_task == 0 {
        return Err(InferError::Domain(
            "samples_per_task must be at least 1".to_string(),
        ));
    }
    let width = bucket_width.max(1) as u64;

    let per_task: Vec<(u64, Vec<GenerationOutcome>)> = tasks
        .par_iter()
        .map(|task| -> Result<_, InferError> {
            let refined = task_refined(task);
            let lf_len =
                (refined.l_prefix.chars().count() + refined.f_suffix.chars().count()) as u64;
            let mut outs = Vec::with_capacity(samples_per_task as usize);
            for s in 0..samples_per_task {
                // separate attempt streams per sampling round
                let base = s * (cfg.retries + 1);
                outs.push(run_infill_attempt(task, mode, gen, cfg, t, base)?);
            }
            Ok((lf_len / width, outs))
        })
        .collect::<Result<_, _>>()?;

    let mut verdicts: BTreeMap<String, u64> = BTreeMap::new();
    let mut buckets: BTreeMap<u64, (u64, u64, u64)> = BTreeMap::new();
    let mut passes = 0u64;
    let mut exacts = 0u64;
    let mut total = 0u64;
    let mut pass1_sum = 0.0f64;

    for ((bucket, outs), task) in per_task.iter().zip(tasks) {
        let mut correct = 0u64;
        for o in outs {
            total += 1;
            *verdicts.entry(o.verdict.tag().to_string()).or_default() += 1;
            let slot = buckets.entry(*bucket).or_default();
            slot.0 += 1;
            if o.verdict == Verdict::Pass {
                passes += 1;
                slot.1 += 1;
            }
            if o.middle.as_deref() == Some(task.canonical_middle.as_str()) {
                exacts += 1;
                slot.2 += 1;
                correct += 1;
            }
        }
        pass1_sum += pass_at_k(samples_per_task as u64, correct, 1)
            .expect("correct count bounded by samples");
    }

    Ok(EvalReport {
        total,
        pcp_rate: passes as f64 / total as f64,
        exact_match_rate: exacts as f64 / total as f64,
        verdicts,
        buckets: buckets
            .into_iter()
            .map(|(k, (n, p, e))| {
                (
                    k,
                    BucketStats {
                        count: n,
                        pcp_rate: p as f64 / n as f64,
                        exact_match_rate: e as f64 / n as f64,
                    },
                )
            })
            .collect(),
        pass_at_1: (samples_per_task > 1).then(|| pass1_sum / tasks.len() as f64),
    })
}

/// `C(n, k)` when it fits in a u128.
fn binomial_u128(n: u64, k: u64) -> Option<u128> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 1..=k {
        acc = acc.checked_mul((n - k + i) as u128)?;
        acc /= i as u128;
    }
    Some(acc)
}

/// Unbiased estimator `1 - C(n-c, k) / C(n, k)`.
///
/// The binomials are taken exactly in integer arithmetic while they fit;
/// beyond that the ratio is evaluated as a sum of log-space terms, which
/// stays stable for arbitrarily large counts.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64, InferError> {
    if c > n {
        return Err(InferError::Domain(format!(
            "correct count {c} exceeds attempts {n}"
        )));
    }
    if k == 0 || k > n {
        return Err(InferError::Domain(format!(
            "k must satisfy 1 <= k <= n, got k={k}, n={n}"
        )));
    }
    if n - c < k {
        return Ok(1.0);
    }
    if c == 0 {
        return Ok(0.0);
    }
    if let (Some(num), Some(den)) = (binomial_u128(n - c, k), binomial_u128(n, k)) {
        return Ok(1.0 - num as f64 / den as f64);
    }
    let log_ratio: f64 = (1..=k)
        .map(|i| {
            let num = (n - c - k + i) as f64;
            let den = (n - k + i) as f64;
            num.ln() - den.ln()
        })
        .sum();
    Ok(1.0 - log_ratio.exp())
}
