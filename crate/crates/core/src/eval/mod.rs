//! Benchmark evaluation: direct, CoT and self-verification strategies,
//! alpha sweeps and report emission.

mod cache;
pub mod fixtures;
mod grid;
mod report;

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendRequest, InferenceConfig};
use crate::error::{Error, Result};
use crate::selfverify::{
    check_alpha, extract_answer, self_verify, AuditRecord, Branch, ChoiceOption, GenerationTrace, PromptMode,
    ScoredResponse, DEFAULT_ALPHA,
};

pub use cache::TraceCache;
pub use grid::AlphaGrid;
pub use report::{emit_report, emit_sweep, load_report, render_summary, render_sweep};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkInstance {
    pub id: String,
    pub image_ref: String,
    pub question: String,
    #[serde(default)]
    pub options: Vec<ChoiceOption>,
    /// Option letter, or free text when there are no options.
    pub gold_answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

impl BenchmarkInstance {
    pub fn validate(&self) -> Result<()> {
        if self.id.trim().is_empty() {
            return Err(Error::Config("instance id must not be empty".into()));
        }
        if self.gold_answer.trim().is_empty() {
            return Err(Error::Config(format!("instance {} has an empty gold answer", self.id)));
        }
        let mut letters = HashSet::new();
        for o in &self.options {
            if !letters.insert(o.letter.trim().to_ascii_uppercase()) {
                return Err(Error::Config(format!("instance {} repeats option {}", self.id, o.letter)));
            }
        }
        if !self.options.is_empty() && !letters.contains(&self.gold_answer.trim().to_ascii_uppercase()) {
            return Err(Error::Config(format!(
                "instance {}: gold answer {:?} is not an option letter",
                self.id, self.gold_answer
            )));
        }
        Ok(())
    }

    /// Letter answers compare case-insensitively; free text compares exactly after trimming.
    pub fn is_correct(&self, predicted: &str) -> bool {
        if self.options.is_empty() {
            predicted.trim() == self.gold_answer.trim()
        } else {
            predicted.trim().eq_ignore_ascii_case(self.gold_answer.trim())
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadedBenchmark {
    pub instances: Vec<BenchmarkInstance>,
    /// `line N: reason` for every skipped line.
    pub rejected: Vec<String>,
}

pub fn load_benchmark(path: &Path) -> Result<LoadedBenchmark> {
    let text = fs::read_to_string(path)?;
    let mut instances = Vec::new();
    let mut rejected = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let inst = serde_json::from_str::<BenchmarkInstance>(line)
            .map_err(Error::from)
            .and_then(|i| i.validate().map(|_| i));
        match inst {
            Ok(i) => {
                if !seen.insert(i.id.clone()) {
                    return Err(Error::DuplicateId(i.id));
                }
                instances.push(i);
            }
            Err(e) => {
                log::warn!("{}: line {} rejected: {e}", path.display(), n + 1);
                rejected.push(format!("line {}: {e}", n + 1));
            }
        }
    }
    if instances.is_empty() {
        return Err(Error::EmptyBenchmark {
            path: path.to_path_buf(),
            rejected: rejected.len(),
        });
    }
    Ok(LoadedBenchmark { instances, rejected })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Direct,
    Cot,
    #[default]
    Sv,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Direct => "direct",
            Strategy::Cot => "cot",
            Strategy::Sv => "sv",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "direct" => Ok(Strategy::Direct),
            "cot" => Ok(Strategy::Cot),
            "sv" => Ok(Strategy::Sv),
            other => Err(Error::Config(format!("unknown strategy {other:?} (direct|cot|sv)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub strategy: Strategy,
    pub alpha: f64,
    pub inference: InferenceConfig,
    /// Instances evaluated concurrently.
    pub workers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            strategy: Strategy::Sv,
            alpha: DEFAULT_ALPHA,
            inference: InferenceConfig::default(),
            workers: 4,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        self.inference.validate()?;
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub id: String,
    pub gold: String,
    pub predicted: Option<String>,
    pub correct: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub branch: Option<Branch>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audit: Option<AuditRecord>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchCounts {
    pub cot_by_agreement: usize,
    pub cot_by_score: usize,
    pub direct_by_score: usize,
    pub errored: usize,
}

impl BranchCounts {
    pub fn total(&self) -> usize {
        self.cot_by_agreement + self.cot_by_score + self.direct_by_score + self.errored
    }

    fn add(&mut self, r: &InstanceResult) {
        match r.branch {
            Some(Branch::CotByAgreement) => self.cot_by_agreement += 1,
            Some(Branch::CotByScore) => self.cot_by_score += 1,
            Some(Branch::DirectByScore) => self.direct_by_score += 1,
            None => self.errored += 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strategy: Strategy,
    pub alpha: f64,
    pub n_instances: usize,
    pub n_correct: usize,
    pub n_errors: usize,
    pub accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub branch_counts: Option<BranchCounts>,
    pub instances: Vec<InstanceResult>,
}

impl EvalReport {
    fn assemble(strategy: Strategy, alpha: f64, instances: Vec<InstanceResult>) -> Self {
        let n = instances.len();
        let n_correct = instances.iter().filter(|r| r.correct).count();
        let n_errors = instances.iter().filter(|r| r.error.is_some()).count();
        let branch_counts = (strategy == Strategy::Sv).then(|| {
            let mut c = BranchCounts::default();
            instances.iter().for_each(|r| c.add(r));
            c
        });
        EvalReport {
            strategy,
            alpha,
            n_instances: n,
            n_correct,
            n_errors,
            accuracy: if n == 0 { 0.0 } else { n_correct as f64 / n as f64 },
            branch_counts,
            instances,
        }
    }
}

fn generate<B: Backend + ?Sized>(
    backend: &B,
    inst: &BenchmarkInstance,
    mode: PromptMode,
    cfg: &InferenceConfig,
    cache: Option<&TraceCache>,
) -> Result<GenerationTrace> {
    let run = || {
        let req = BackendRequest::new(&inst.image_ref, &inst.question, &inst.options, mode, cfg.for_mode(mode));
        req.validate()?;
        backend.generate(&req)
    };
    let out = match cache {
        Some(c) => c.get_or_generate(&inst.id, mode, run),
        None => run(),
    };
    out.map_err(|e| Error::Branch {
        mode: mode.as_str(),
        source: Box::new(e),
    })
}

/// Both responses scored at `alpha`.
fn scored_pair<B: Backend + ?Sized>(
    backend: &B,
    inst: &BenchmarkInstance,
    cfg: &EvalConfig,
    cache: Option<&TraceCache>,
) -> ScoredPair {
    let d = generate(backend, inst, PromptMode::Direct, &cfg.inference, cache)?;
    let c = generate(backend, inst, PromptMode::Cot, &cfg.inference, cache)?;
    Ok((
        ScoredResponse::score(d, &inst.options, cfg.alpha)?,
        ScoredResponse::score(c, &inst.options, cfg.alpha)?,
    ))
}

type ScoredPair = Result<(ScoredResponse, ScoredResponse)>;

fn decide(inst: &BenchmarkInstance, pair: &ScoredPair, alpha: f64) -> InstanceResult {
    let mut r = InstanceResult {
        id: inst.id.clone(),
        gold: inst.gold_answer.clone(),
        predicted: None,
        correct: false,
        branch: None,
        error: None,
        audit: None,
    };
    let decision = match pair {
        Ok((d, c)) => self_verify(d, c, alpha).map_err(|e| e.to_string()),
        Err(e) => Err(e.to_string()),
    };
    match decision {
        Ok(dec) => {
            r.correct = inst.is_correct(&dec.final_answer);
            r.predicted = Some(dec.final_answer.clone());
            r.branch = Some(dec.branch);
            r.audit = Some(AuditRecord::from(&dec));
        }
        Err(e) => r.error = Some(e),
    }
    r
}

fn evaluate_one<B: Backend + ?Sized>(
    backend: &B,
    inst: &BenchmarkInstance,
    cfg: &EvalConfig,
    cache: Option<&TraceCache>,
) -> InstanceResult {
    let single = |mode: PromptMode| {
        let mut r = InstanceResult {
            id: inst.id.clone(),
            gold: inst.gold_answer.clone(),
            predicted: None,
            correct: false,
            branch: None,
            error: None,
            audit: None,
        };
        match generate(backend, inst, mode, &cfg.inference, cache) {
            Ok(t) => {
                let answer = extract_answer(&t.text, &inst.options);
                r.correct = inst.is_correct(&answer);
                r.predicted = Some(answer);
            }
            Err(e) => r.error = Some(e.to_string()),
        }
        r
    };
    match cfg.strategy {
        Strategy::Direct => single(PromptMode::Direct),
        Strategy::Cot => single(PromptMode::Cot),
        Strategy::Sv => {
            decide(inst, &scored_pair(backend, inst, cfg, cache), cfg.alpha)
        }
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Evaluates every instance. Backend failures are recorded per instance.
pub fn run_eval<B: Backend + ?Sized>(
    backend: &B,
    instances: &[BenchmarkInstance],
    cfg: &EvalConfig,
    cache: Option<&TraceCache>,
) -> Result<EvalReport> {
    cfg.validate()?;
    let results = pool(cfg.workers)?.install(|| {
        instances
            .par_iter()
            .map(|inst| evaluate_one(backend, inst, cfg, cache))
            .collect::<Vec<_>>()
    });
    Ok(EvalReport::assemble(cfg.strategy, cfg.alpha, results))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub alpha: f64,
    pub accuracy: f64,
    pub n_correct: usize,
    pub branch_counts: BranchCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub n_instances: usize,
    pub points: Vec<SweepPoint>,
    /// Smallest alpha reaching the top accuracy.
    pub best_alpha: f64,
    pub best_accuracy: f64,
}

impl SweepReport {
    fn from_points(n_instances: usize, points: Vec<SweepPoint>) -> Self {
        let mut best = 0;
        for (i, p) in points.iter().enumerate() {
            if p.accuracy > points[best].accuracy {
                best = i;
            }
        }
        SweepReport {
            n_instances,
            best_alpha: points[best].alpha,
            best_accuracy: points[best].accuracy,
            points,
        }
    }
}

/// Self-verification accuracy at every alpha of `grid`.
///
/// With a cache, each branch is generated once per instance and only the
/// decision rule is re-run per alpha. Without one, every alpha runs a full
/// evaluation.
pub fn alpha_sweep<B: Backend + ?Sized>(
    backend: &B,
    instances: &[BenchmarkInstance],
    grid: &AlphaGrid,
    cfg: &EvalConfig,
    cache: Option<&TraceCache>,
) -> Result<SweepReport> {
    let alphas = grid.points()?;
    let base = EvalConfig {
        strategy: Strategy::Sv,
        alpha: alphas[0],
        ..cfg.clone()
    };
    base.validate()?;
    let to_point = |r: EvalReport| SweepPoint {
        alpha: r.alpha,
        accuracy: r.accuracy,
        n_correct: r.n_correct,
        branch_counts: r.branch_counts.unwrap_or_default(),
    };
    let points = match cache {
        None => alphas
            .iter()
            .map(|&alpha| run_eval(backend, instances, &EvalConfig { alpha, ..base.clone() }, None).map(to_point))
            .collect::<Result<Vec<_>>>()?,
        Some(cache) => {
            let pairs: Vec<ScoredPair> = pool(base.workers)?.install(|| {
                instances
                    .par_iter()
                    .map(|inst| scored_pair(backend, inst, &base, Some(cache)))
                    .collect()
            });
            alphas
                .iter()
                .map(|&alpha| {
                    let results = instances
                        .iter()
                        .zip(&pairs)
                        .map(|(inst, p)| decide(inst, p, alpha))
                        .collect();
                    to_point(EvalReport::assemble(Strategy::Sv, alpha, results))
                })
                .collect()
        }
    };
    Ok(SweepReport::from_points(instances.len(), points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{MockBackend, MockScript};

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    const LINE: &str = r#"{"id":"ID","image_ref":"i.png","question":"q","options":[{"letter":"A","text":"x"},{"letter":"B","text":"y"}],"gold_answer":"B"}"#;

    #[test]
    fn loads_valid_lines() {
        let dir = tempfile::tempdir().unwrap();
        let body: String = ["a", "b", "c"].iter().map(|id| LINE.replace("ID", id) + "\n").collect();
        let b = load_benchmark(&write(dir.path(), "b.jsonl", &body)).unwrap();
        assert_eq!(b.instances.len(), 3);
        assert!(b.rejected.is_empty());
    }

    #[test]
    fn bad_line_rejected_others_kept() {
        let dir = tempfile::tempdir().unwrap();
        let missing = r#"{"id":"x","image_ref":"i","question":"q"}"#;
        let body = format!("{}\n{missing}\n{}\n", LINE.replace("ID", "a"), LINE.replace("ID", "b"));
        let b = load_benchmark(&write(dir.path(), "b.jsonl", &body)).unwrap();
        assert_eq!(b.instances.len(), 2);
        assert_eq!(b.rejected.len(), 1);
        assert!(b.rejected[0].starts_with("line 2"));
    }

    #[test]
    fn duplicates_and_empty_files_fail() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{}\n{}\n", LINE.replace("ID", "a"), LINE.replace("ID", "a"));
        match load_benchmark(&write(dir.path(), "d.jsonl", &body)) {
            Err(Error::DuplicateId(id)) => assert_eq!(id, "a"),
            other => panic!("{other:?}"),
        }
        let e = load_benchmark(&write(dir.path(), "e.jsonl", "garbage\n")).unwrap_err();
        assert!(matches!(e, Error::EmptyBenchmark { rejected: 1, .. }));
    }

    #[test]
    fn matching_rules() {
        let mut inst: BenchmarkInstance = serde_json::from_str(&LINE.replace("ID", "a")).unwrap();
        assert!(inst.is_correct(" b "));
        inst.options.clear();
        inst.gold_answer = "Blue".into();
        assert!(inst.is_correct(" Blue\n"));
        assert!(!inst.is_correct("blue"));
        assert!(!inst.is_correct("Blue car"));
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("SV".parse::<Strategy>().unwrap(), Strategy::Sv);
        assert!("both".parse::<Strategy>().is_err());
    }

    #[test]
    fn backend_errors_are_contained() {
        let (instances, script) = fixtures::easy_hard();
        let mut script: MockScript = script;
        for e in script.entries.iter_mut().filter(|e| e.question == instances[0].question) {
            e.trace = None;
            e.error = Some("boom".into());
        }
        let backend = MockBackend::new(script).unwrap();
        let r = run_eval(&backend, &instances, &EvalConfig::default(), None).unwrap();
        assert_eq!(r.n_instances, 4);
        assert_eq!(r.n_errors, 1);
        assert!(!r.instances[0].correct);
        assert_eq!(r.branch_counts.unwrap().errored, 1);
        assert_eq!(r.branch_counts.unwrap().total(), 4);
    }

    #[test]
    fn agreement_gives_flat_sweep() {
        let (instances, script) = fixtures::all_agree();
        let backend = MockBackend::new(script).unwrap();
        let s = alpha_sweep(&backend, &instances, &AlphaGrid::default(), &EvalConfig::default(), None).unwrap();
        assert_eq!(s.points.len(), 11);
        assert!(s.points.iter().all(|p| p.accuracy == 1.0));
    }

    #[test]
    fn cache_generates_each_branch_once() {
        let (instances, script) = fixtures::alpha_optimum();
        let backend = MockBackend::new(script).unwrap();
        let cache = TraceCache::in_memory();
        let cfg = EvalConfig::default();
        let with = alpha_sweep(&backend, &instances, &AlphaGrid::default(), &cfg, Some(&cache)).unwrap();
        assert_eq!(backend.calls(), 2 * instances.len());
        let without = alpha_sweep(&backend, &instances, &AlphaGrid::default(), &cfg, None).unwrap();
        assert_eq!(with, without);
    }
}
