//! Corpus transformation: read documents, decide per document whether to
//! apply an infilling transform (and which format), split/refine/assemble,
//! and emit training samples plus a run report.
//!
//! Every document gets its own random stream derived by hashing the run
//! seed with the document id, so output is a pure function of (corpus,
//! config) — independent of worker count and input order. Samples are
//! emitted in stable document-id order.
//!
//! Over-length samples are dropped rather than truncated: truncation could
//! sever the end constraint from its target and silently corrupt the
//! sample's semantics.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::formats::{assemble_training, FormatMode, SampleMeta, SplitPoints, TrainingSample};
use crate::text_split::{refine, split_random, CharSplit, Document};
use crate::tok::TokenizerHandle;

/// Transformation knobs.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Probability that a document is infilling-transformed at all.
    pub fim_rate: f64,
    /// Relative weights of the transform formats, drawn once the document
    /// passes the rate gate.
    pub mode_weights: Vec<(FormatMode, f64)>,
    pub seed: u64,
    /// Samples longer than this many tokens are dropped and counted.
    pub max_sample_tokens: usize,
    pub mask_lf_loss: bool,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(0.0..=1.0).contains(&self.fim_rate) {
            return Err(PipelineError::InvalidConfig(format!(
                "fim_rate must lie in [0, 1], got {}",
                self.fim_rate
            )));
        }
        if self.mode_weights.is_empty() {
            return Err(PipelineError::InvalidConfig(
                "at least one transform mode is required".to_string(),
            ));
        }
        let mut sum = 0.0;
        for (mode, w) in &self.mode_weights {
            if *w < 0.0 || !w.is_finite() {
                return Err(PipelineError::InvalidConfig(format!(
                    "weight for {mode} must be finite and nonnegative, got {w}"
                )));
            }
            sum += w;
        }
        if sum <= 0.0 {
            return Err(PipelineError::InvalidConfig(
                "mode weights must sum to a positive value".to_string(),
            ));
        }
        if self.max_sample_tokens == 0 {
            return Err(PipelineError::InvalidConfig(
                "max_sample_tokens must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

/// Counters describing one transformation run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub documents_in: u64,
    pub samples_out: u64,
    pub dropped_overlength: u64,
    pub skipped_malformed: u64,
    pub filtered_out: u64,
    pub encode_failures: u64,
    pub per_mode: BTreeMap<String, u64>,
    pub total_tokens: u64,
    pub trainable_tokens: u64,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("failed to read input: {0}")]
    Io(#[from] io::Error),
}

/// One parsed input line: a document, or a diagnostic for a bad record.
#[derive(Debug)]
pub enum DocRecord {
    Doc(Document),
    Malformed { line_no: usize, error: String },
}

/// Reads line-delimited document records (`{"id": ..., "text": ...}`).
/// Blank lines are ignored; unparseable lines surface as
/// [`DocRecord::Malformed`] so the caller can count and skip them.
pub fn read_documents<R: BufRead>(reader: R) -> impl Iterator<Item = io::Result<DocRecord>> {
    reader
        .lines()
        .enumerate()
        .filter_map(|(i, line)| match line {
            Err(e) => Some(Err(e)),
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(Ok(match serde_json::from_str::<Document>(&l) {
                Ok(doc) => DocRecord::Doc(doc),
                Err(e) => DocRecord::Malformed {
                    line_no: i + 1,
                    error: e.to_string(),
                },
            })),
        })
}

/// Serialized sample record layout.
#[derive(Debug, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub mode: FormatMode,
    pub ids: Vec<u32>,
    pub loss_mask: Vec<u8>,
    pub split: Option<SplitPoints>,
    pub seed: u64,
}

impl From<&TrainingSample> for SampleRecord {
    fn from(s: &TrainingSample) -> Self {
        SampleRecord {
            id: s.meta.doc_id.clone(),
            mode: s.mode,
            ids: s.ids.iter().map(|t| t.0).collect(),
            loss_mask: s.loss_mask.clone(),
            split: s.meta.split,
            seed: s.meta.seed,
        }
    }
}

/// Writes samples as line-delimited records.
pub fn write_samples<W: Write>(mut w: W, samples: &[TrainingSample]) -> io::Result<()> {
    for s in samples {
        let record = SampleRecord::from(s);
        serde_json::to_writer(&mut w, &record)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Keeps documents whose id carries one of the allowed filename extensions.
#[derive(Debug, Clone)]
pub struct ExtensionAllowlist {
    exts: Vec<String>,
}

impl ExtensionAllowlist {
    pub fn new<S: AsRef<str>>(exts: impl IntoIterator<Item = S>) -> Self {
        Self {
            exts: exts
                .into_iter()
                .map(|e| e.as_ref().trim_start_matches('.').to_string())
                .collect(),
        }
    }

    pub fn allows(&self, doc: &Document) -> bool {
        match doc.id.rsplit_once('.') {
            Some((_, ext)) => self.exts.iter().any(|e| e == ext),
            None => false,
        }
    }
}

/// Record predicate deciding which documents enter the transform.
pub type DocFilter<'a> = &'a (dyn Fn(&Document) -> bool + Sync);

/// The independent random stream for one document: run seed hashed with the
/// document id, so streams do not depend on worker count or input order.
pub fn per_doc_rng(seed: u64, doc_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(doc_id.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn draw_mode<R: Rng>(rng: &mut R, weights: &[(FormatMode, f64)]) -> FormatMode {
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (mode, w) in weights {
        acc += w;
        if u < acc {
            return *mode;
        }
    }
    weights.last().expect("weights validated nonempty").0
}

enum DocOutcome {
    Sample(Box<TrainingSample>),
    Overlength,
    EncodeFailure(String),
}

fn transform_document(doc: &Document, cfg: &PipelineConfig, t: &TokenizerHandle) -> DocOutcome {
    let mut rng = per_doc_rng(cfg.seed, &doc.id);
    let apply_fim = rng.random::<f64>() < cfg.fim_rate;
    let (mode, split) = if apply_fim {
        let mode = draw_mode(&mut rng, &cfg.mode_weights);
        let split = split_random(doc, &mut rng);
        (mode, Some(split))
    } else {
        (FormatMode::PlainL2r, None)
    };
    let refined = match &split {
        Some(s) => refine(s),
        None => refine(&CharSplit {
            prefix: String::new(),
            middle: String::new(),
            suffix: doc.text.clone(),
            split_points: (0, 0),
        }),
    };
    let sample = match assemble_training(&refined, mode, t, cfg.mask_lf_loss) {
        Ok(s) => s,
        Err(e) => return DocOutcome::EncodeFailure(e.to_string()),
    };
    if sample.ids.len() > cfg.max_sample_tokens {
        return DocOutcome::Overlength;
    }
    let meta = SampleMeta {
        doc_id: doc.id.clone(),
        split: split.map(|s| SplitPoints {
            a: s.split_points.0,
            b: s.split_points.1,
        }),
        seed: cfg.seed,
    };
    DocOutcome::Sample(Box::new(sample.with_meta(meta)))
}

/// Transforms a corpus into training samples.
///
/// Malformed records are counted and skipped (with a diagnostic); only an
/// unreadable source is fatal. Output is sorted by document id (stable for
/// duplicate ids) and byte-identical across worker counts.
pub fn transform_corpus(
    input: impl Iterator<Item = io::Result<DocRecord>>,
    cfg: &PipelineConfig,
    t: &TokenizerHandle,
    filter: Option<DocFilter<'_>>,
) -> Result<(Vec<TrainingSample>, RunReport), PipelineError> {
    cfg.validate()?;
    let mut report = RunReport::default();
    let mut docs: Vec<Document> = Vec::new();
    for record in input {
        match record? {
            DocRecord::Doc(doc) => {
                report.documents_in += 1;
                if filter.is_none_or(|f| f(&doc)) {
                    docs.push(doc);
                } else {
                    report.filtered_out += 1;
                }
            }
            DocRecord::Malformed { line_no, error } => {
                log::warn!("skipping malformed record at line {line_no}: {error}");
                report.skipped_malformed += 1;
            }
        }
    }

    let outcomes: Vec<(usize, DocOutcome)> = docs
        .par_iter()
        .enumerate()
        .map(|(i, doc)| (i, transform_document(doc, cfg, t)))
        .collect();

    let mut samples = Vec::with_capacity(outcomes.len());
    for (i, outcome) in outcomes {
        match outcome {
            DocOutcome::Sample(s) => samples.push(*s),
            DocOutcome::Overlength => report.dropped_overlength += 1,
            DocOutcome::EncodeFailure(e) => {
                log::warn!("skipping document {}: {e}", docs[i].id);
                report.encode_failures += 1;
            }
        }
    }
    samples.sort_by(|a, b| a.meta.doc_id.cmp(&b.meta.doc_id));

    for s in &samples {
        report.samples_out += 1;
        *report.per_mode.entry(s.mode.tag().to_string()).or_default() += 1;
        report.total_tokens += s.ids.len() as u64;
        report.trainable_tokens += s.trainable_tokens() as u64;
    }
    Ok((samples, report))
}
