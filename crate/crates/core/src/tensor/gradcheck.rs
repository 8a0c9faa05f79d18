//! Central-difference gradient verification.

use serde::Serialize;

use crate::error::{Error, Result};

use super::dense::Tensor;
use super::graph::{Graph, Var};

/// Outcome of [`finite_diff_check`].
#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(parameter index, flat coordinate)` of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub n_coords: usize,
    pub loss: f64,
}

/// Fraction of the largest numeric gradient used as the denominator floor.
pub const SCALE_FLOOR: f64 = 1e-3;

/// Compares the tape gradient of `f` against central differences.
///
/// `f` receives a graph and one leaf per entry of `params` and must return a
/// scalar. The relative error per coordinate is
/// `|analytic - numeric| / max(|numeric|, 1e-3 * G, 1e-12)` where `G` is the
/// largest `|numeric|` over all coordinates. Components far below the
/// gradient's own scale are thus compared at that scale, where central
/// differences are limited by roundoff in the loss.
pub fn finite_diff_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!("eps must be positive, got {eps}")));
    }

    let mut graph = Graph::new();
    let leaves: Vec<Var> = params
        .iter()
        .map(|p| graph.leaf(p.clone().with_requires_grad()))
        .collect();
    let loss_var = f(&mut graph, &leaves)?;
    let loss = checked(graph.value(loss_var).item()?)?;
    graph.backward(loss_var)?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|&v| graph.grad(v).map(<[f64]>::to_vec).unwrap_or_default())
        .collect();

    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        checked(g.value(out).item()?)
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        n_coords: 0,
        loss,
    };
    let mut pairs = Vec::new();
    for (pi, grads) in analytic.iter().enumerate() {
        for ci in 0..params[pi].numel() {
            let orig = params[pi].data()[ci];
            work[pi].data_mut()[ci] = orig + eps;
            let plus = eval(&work)?;
            work[pi].data_mut()[ci] = orig - eps;
            let minus = eval(&work)?;
            work[pi].data_mut()[ci] = orig;
            pairs.push(((pi, ci), grads[ci], (plus - minus) / (2.0 * eps)));
        }
    }
    let scale = pairs.iter().fold(0.0f64, |m, p| m.max(p.2.abs()));
    let floor = (SCALE_FLOOR * scale).max(1e-12);
    for (coord, a, numeric) in pairs {
        let rel = (a - numeric).abs() / numeric.abs().max(floor);
        report.n_coords += 1;
        if rel > report.max_rel_err || report.n_coords == 1 {
            report.max_rel_err = rel;
            report.worst = coord;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    Ok(report)
}

fn checked(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("objective returned {v}")))
    }
}
