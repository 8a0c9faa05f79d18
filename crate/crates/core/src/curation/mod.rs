//! Curation of chain-of-thought training data: rewrite manual rationales,
//! score raw and rewritten candidates with a judge model, keep the better
//! one and drop anything scoring below the threshold.

mod prompts;
mod score;

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::TextModel;
use crate::error::{Error, Result};
use crate::selfverify::ChoiceOption;

pub use prompts::{
    build_rewrite_prompt, build_score_prompt, expand, question_block, NO_DESCRIPTION, REWRITE_SYSTEM,
    REWRITE_TEMPLATE, SCORE_SYSTEM, SCORE_TEMPLATE,
};
pub use score::parse_overall_score;

pub const DEFAULT_THRESHOLD: f64 = 0.6;

/// Split names that mark evaluation data.
pub const HELD_OUT_SPLITS: [&str; 4] = ["test", "val", "validation", "dev"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    /// Human-written rationale; rewritten before scoring.
    Manual,
    /// Model-generated rationale; scored as is.
    AiGenerated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurationRecord {
    pub id: String,
    pub image_ref: String,
    pub question: String,
    #[serde(default)]
    pub options: Vec<ChoiceOption>,
    pub raw_cot: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewritten_cot: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewritten_score: Option<f64>,
    pub source_kind: SourceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_description: Option<String>,
}

impl CurationRecord {
    /// Rejects records tagged with an evaluation split.
    pub fn check_ingest(&self) -> Result<()> {
        if let Some(split) = &self.split {
            if HELD_OUT_SPLITS.contains(&split.trim().to_ascii_lowercase().as_str()) {
                return Err(Error::HeldOutSplit {
                    id: self.id.clone(),
                    split: split.clone(),
                });
            }
        }
        if self.id.trim().is_empty() {
            return Err(Error::Config("record id must not be empty".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CotSource {
    Raw,
    Rewritten,
}

/// Single-turn instruction/response pair that passed the filter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CuratedInstance {
    pub id: String,
    pub image_ref: String,
    pub instruction: String,
    pub cot_response: String,
    pub overall_score: f64,
    pub chosen: CotSource,
}

fn check_score(id: &str, what: &str, s: Option<f64>) -> Result<f64> {
    match s {
        Some(v) if (0.0..=1.0).contains(&v) => Ok(v),
        Some(v) => Err(Error::PipelineOrder {
            id: id.into(),
            message: format!("{what} score {v} outside [0, 1]"),
        }),
        None => Err(Error::PipelineOrder {
            id: id.into(),
            message: format!("{what} score missing"),
        }),
    }
}

/// Keeps the higher-scoring CoT (ties go to the rewritten one) and drops the
/// record when that score is below `threshold`.
pub fn select_and_filter(rec: &CurationRecord, threshold: f64) -> Result<Option<CuratedInstance>> {
    let raw = check_score(&rec.id, "raw", rec.raw_score)?;
    let (cot, score, chosen) = match rec.source_kind {
        SourceKind::AiGenerated => (rec.raw_cot.as_str(), raw, CotSource::Raw),
        SourceKind::Manual => {
            let text = rec.rewritten_cot.as_deref().ok_or_else(|| Error::PipelineOrder {
                id: rec.id.clone(),
                message: "manual record has not been rewritten".into(),
            })?;
            let rw = check_score(&rec.id, "rewritten", rec.rewritten_score)?;
            if rw >= raw {
                (text, rw, CotSource::Rewritten)
            } else {
                (rec.raw_cot.as_str(), raw, CotSource::Raw)
            }
        }
    };
    if score < threshold {
        return Ok(None);
    }
    Ok(Some(CuratedInstance {
        id: rec.id.clone(),
        image_ref: rec.image_ref.clone(),
        instruction: question_block(&rec.question, &rec.options),
        cot_response: cot.trim().to_string(),
        overall_score: score,
        chosen,
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurationConfig {
    pub threshold: f64,
    /// Upper bound on concurrent judge/rewriter calls.
    pub max_in_flight: usize,
}

impl Default for CurationConfig {
    fn default() -> Self {
        CurationConfig {
            threshold: DEFAULT_THRESHOLD,
            max_in_flight: 4,
        }
    }
}

impl CurationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold must lie in [0, 1], got {}", self.threshold)));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be >= 1".into()));
        }
        Ok(())
    }
}

/// Rewrites (manual records) and scores whatever is still missing.
pub fn complete_record<M: TextModel + ?Sized>(rec: &CurationRecord, model: &M) -> Result<CurationRecord> {
    let mut rec = rec.clone();
    if rec.source_kind == SourceKind::Manual && rec.rewritten_cot.is_none() {
        let reply = model.complete(REWRITE_SYSTEM, &build_rewrite_prompt(&rec)?)?;
        let text = reply.trim();
        if text.is_empty() {
            return Err(Error::PipelineOrder {
                id: rec.id.clone(),
                message: "rewriter returned an empty CoT".into(),
            });
        }
        rec.rewritten_cot = Some(text.to_string());
    }
    if rec.raw_score.is_none() {
        let reply = model.complete(SCORE_SYSTEM, &build_score_prompt(&rec, &rec.raw_cot)?)?;
        rec.raw_score = Some(parse_overall_score(&reply)?);
    }
    if rec.source_kind == SourceKind::Manual && rec.rewritten_score.is_none() {
        let cot = rec.rewritten_cot.clone().unwrap_or_default();
        let reply = model.complete(SCORE_SYSTEM, &build_score_prompt(&rec, &cot)?)?;
        rec.rewritten_score = Some(parse_overall_score(&reply)?);
    }
    Ok(rec)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Kept,
    Dropped,
    Errored,
}

/// Per-record audit line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordOutcome {
    pub id: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rewritten_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chosen_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CurationStats {
    pub input: usize,
    pub rejected: usize,
    pub kept: usize,
    pub dropped: usize,
    pub errored: usize,
    pub threshold: f64,
    /// Chosen scores in ten bins of width 0.1; the last bin includes 1.0.
    pub histogram: [usize; 10],
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurationOutput {
    pub instances: Vec<CuratedInstance>,
    pub outcomes: Vec<RecordOutcome>,
    pub stats: CurationStats,
}

fn bin(score: f64) -> usize {
    ((score * 10.0).floor() as usize).min(9)
}

/// Runs every record through rewrite, scoring and filtering. Records are
/// processed concurrently; output order follows input order.
pub fn run_pipeline<M: TextModel + ?Sized>(
    records: &[CurationRecord],
    model: &M,
    cfg: &CurationConfig,
) -> Result<CurationOutput> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.max_in_flight)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<(Result<CurationRecord>, Option<Result<Option<CuratedInstance>>>)> = pool.install(|| {
        records
            .par_iter()
            .map(|r| match r.check_ingest().and_then(|_| complete_record(r, model)) {
                Ok(done) => {
                    let sel = select_and_filter(&done, cfg.threshold);
                    (Ok(done), Some(sel))
                }
                Err(e) => (Err(e), None),
            })
            .collect()
    });

    let mut stats = CurationStats {
        input: records.len(),
        threshold: cfg.threshold,
        ..CurationStats::default()
    };
    let mut instances = Vec::new();
    let mut outcomes = Vec::with_capacity(records.len());
    for (rec, (done, sel)) in records.iter().zip(results) {
        let mut outcome = RecordOutcome {
            id: rec.id.clone(),
            status: Status::Errored,
            raw_score: None,
            rewritten_score: None,
            chosen_score: None,
            error: None,
        };
        match (done, sel) {
            (Ok(done), Some(Ok(kept))) => {
                outcome.raw_score = done.raw_score;
                outcome.rewritten_score = done.rewritten_score;
                let chosen = match done.source_kind {
                    SourceKind::AiGenerated => done.raw_score,
                    SourceKind::Manual => done.raw_score.zip(done.rewritten_score).map(|(a, b)| a.max(b)),
                };
                outcome.chosen_score = chosen;
                if let Some(c) = chosen {
                    stats.histogram[bin(c)] += 1;
                }
                match kept {
                    Some(inst) => {
                        outcome.status = Status::Kept;
                        stats.kept += 1;
                        instances.push(inst);
                    }
                    None => {
                        outcome.status = Status::Dropped;
                        stats.dropped += 1;
                    }
                }
            }
            (Ok(_), Some(Err(e))) | (Err(e), _) => {
                log::warn!("curation of {} failed: {e}", rec.id);
                if matches!(e, Error::HeldOutSplit { .. }) {
                    stats.rejected += 1;
                } else {
                    stats.errored += 1;
                }
                outcome.error = Some(e.to_string());
            }
            (Ok(_), None) => unreachable!("selection always runs after completion"),
        }
        outcomes.push(outcome);
    }
    Ok(CurationOutput {
        instances,
        outcomes,
        stats,
    })
}

/// Parses a JSONL file of records. Held-out and malformed lines are
/// returned separately; duplicate ids are an error.
pub fn load_records(path: &Path) -> Result<(Vec<CurationRecord>, Vec<String>)> {
    let text = fs::read_to_string(path)?;
    let mut records = Vec::new();
    let mut rejected = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: CurationRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                rejected.push(format!("line {}: {e}", n + 1));
                continue;
            }
        };
        if let Err(e) = rec.check_ingest() {
            rejected.push(format!("line {}: {e}", n + 1));
            continue;
        }
        if !seen.insert(rec.id.clone()) {
            return Err(Error::DuplicateId(rec.id));
        }
        records.push(rec);
    }
    Ok((records, rejected))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut f, item)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}
