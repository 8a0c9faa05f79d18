use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::Result;

use super::{EvalReport, SweepReport};

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    fs::write(path, body)?;
    Ok(())
}

pub fn render_summary(r: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "strategy  {}", r.strategy);
    let _ = writeln!(s, "alpha     {:.4}", r.alpha);
    let _ = writeln!(s, "instances {}", r.n_instances);
    let _ = writeln!(s, "correct   {}", r.n_correct);
    let _ = writeln!(s, "errors    {}", r.n_errors);
    let _ = writeln!(s, "accuracy  {:.4}", r.accuracy);
    if let Some(c) = r.branch_counts {
        let _ = writeln!(
            s,
            "branches  cot-by-agreement={} cot-by-score={} direct-by-score={} errored={}",
            c.cot_by_agreement, c.cot_by_score, c.direct_by_score, c.errored
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<16} {:<8} {:<12} {:<8} branch", "id", "gold", "predicted", "correct");
    for i in &r.instances {
        let branch = match (&i.branch, &i.error) {
            (Some(b), _) => b.as_str().to_string(),
            (None, Some(_)) => "error".to_string(),
            (None, None) => "-".to_string(),
        };
        let _ = writeln!(
            s,
            "{:<16} {:<8} {:<12} {:<8} {}",
            i.id,
            i.gold,
            i.predicted.as_deref().unwrap_or("-"),
            i.correct,
            branch
        );
    }
    s
}

/// Writes the JSON report to `path` and a text summary next to it (`.txt`).
pub fn emit_report(r: &EvalReport, path: &Path) -> Result<()> {
    write_json(path, r)?;
    fs::write(path.with_extension("txt"), render_summary(r))?;
    Ok(())
}

pub fn load_report(path: &Path) -> Result<EvalReport> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn render_sweep(r: &SweepReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<6} {:<9} {:<8} {:<6} {:<6} {:<7} errored", "alpha", "accuracy", "correct", "agree", "cot", "direct");
    for p in &r.points {
        let c = p.branch_counts;
        let _ = writeln!(
            s,
            "{:<6.2} {:<9.4} {:<8} {:<6} {:<6} {:<7} {}",
            p.alpha, p.accuracy, p.n_correct, c.cot_by_agreement, c.cot_by_score, c.direct_by_score, c.errored
        );
    }
    let _ = writeln!(s, "best alpha {:.2} (accuracy {:.4})", r.best_alpha, r.best_accuracy);
    s
}

pub fn emit_sweep(r: &SweepReport, path: &Path) -> Result<()> {
    write_json(path, r)?;
    fs::write(path.with_extension("txt"), render_sweep(r))?;
    Ok(())
}
