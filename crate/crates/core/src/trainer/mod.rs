//! Desk-scale alignment pretraining of the connector.
//!
//! Two frozen encoders, a frozen pooling map standing in for the language
//! model and a frozen readout are all fixed random linear maps. Only the
//! connector parameters are updated, by plain gradient descent.

mod schema;
mod task;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gatemixer::{forward_graph, ConnectorConfig, GateMixerParams, ParamVars};
use crate::objectives::{
    creg_loss_graph, generation_loss_graph, stage1_objective_graph, SimilarityMode, DEFAULT_LAMBDA, DEFAULT_TAU,
};
use crate::tensor::{finite_diff_check, GradCheckReport, Graph, Var};

pub use schema::{StageConfig, TrainingStage};
pub use task::{synth_batch, SyntheticBatch, SyntheticTask, LATENT_DIM, VOCAB};

/// Module names a stage can refer to.
pub const MODULES: [&str; 3] = ["vision_encoder", "gatemixer", "llm"];

/// RNG streams, kept clear of the ones used by parameter init.
const TASK_STREAM: u64 = 1 << 32;
const EVAL_STREAM_BASE: u64 = 1 << 36;
const BATCH_STREAM_BASE: u64 = 1 << 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Held-out batches (of `batch_size` items) averaged for the initial and final loss.
    pub eval_batches: usize,
    pub lr: f64,
    pub lambda: f64,
    pub tau: f64,
    pub similarity: SimilarityMode,
    pub seed: u64,
    pub frozen: Vec<String>,
    pub connector: ConnectorConfig,
    pub gradcheck_eps: f64,
    pub gradcheck_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 300,
            batch_size: 4,
            eval_batches: 8,
            lr: 0.2,
            lambda: DEFAULT_LAMBDA,
            tau: DEFAULT_TAU,
            similarity: SimilarityMode::ExpCosine,
            seed: 0,
            frozen: vec!["vision_encoder".into(), "llm".into()],
            connector: ConnectorConfig::default(),
            gradcheck_eps: 1e-5,
            gradcheck_tol: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.connector.validate()?;
        if self.batch_size == 0 || self.eval_batches == 0 {
            return Err(Error::Config("batch_size and eval_batches must be >= 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be >= 0, got {}", self.lr)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.gradcheck_eps > 0.0 && self.gradcheck_tol > 0.0) {
            return Err(Error::Config("gradcheck eps and tolerance must be positive".into()));
        }
        for name in &self.frozen {
            if !MODULES.contains(&name.as_str()) {
                return Err(Error::Config(format!("unknown module {name:?} in frozen list")));
            }
        }
        if self.frozen.iter().any(|m| m == "gatemixer") {
            return Err(Error::Config("gatemixer is the trained module and cannot be frozen".into()));
        }
        for required in ["vision_encoder", "llm"] {
            if !self.frozen.iter().any(|m| m == required) {
                return Err(Error::Config(format!("{required} must be frozen during alignment")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SgdState {
    pub step: usize,
}

/// Composed alignment objective for one batch, on the tape.
pub fn stage1_loss_graph(
    g: &mut Graph,
    task: &SyntheticTask,
    batch: &SyntheticBatch,
    p: &ParamVars,
    cfg: &TrainConfig,
) -> Result<Var> {
    let m = g.constant(task.m.clone());
    let r = g.constant(task.r.clone());
    let mut pooled = Vec::with_capacity(batch.len());
    for f in &batch.feats {
        let v_v = g.constant(f.v_v.clone());
        let v_c = g.constant(f.v_c.clone());
        let mix = forward_graph(g, v_v, v_c, p)?;
        let states = g.matmul(mix.h_img0, m)?;
        pooled.push(g.mean_pool(states)?);
    }
    let img = g.concat_rows(&pooled)?;
    let txt = g.constant(batch.txt_reps.clone());
    let logits = g.matmul(img, r)?;
    let gen = generation_loss_graph(g, logits, &batch.flat_targets())?;
    let creg = creg_loss_graph(g, img, txt, cfg.similarity, cfg.tau)?;
    stage1_objective_graph(g, gen, creg, cfg.lambda)
}

/// Loss value without recording gradients.
pub fn stage1_loss(task: &SyntheticTask, batch: &SyntheticBatch, params: &GateMixerParams, cfg: &TrainConfig) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = params.tensors().into_iter().map(|t| g.constant(t.clone())).collect();
    let loss = stage1_loss_graph(&mut g, task, batch, &ParamVars::from_slice(&vars), cfg)?;
    g.value(loss).item()
}

/// Loss and per-parameter gradients in checkpoint order.
pub fn stage1_gradients(
    task: &SyntheticTask,
    batch: &SyntheticBatch,
    params: &GateMixerParams,
    cfg: &TrainConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let pv = params.register(&mut g);
    let loss = stage1_loss_graph(&mut g, task, batch, &pv, cfg)?;
    let value = g.value(loss).item()?;
    g.backward(loss)?;
    let grads = pv
        .all()
        .iter()
        .map(|&v| g.grad(v).map(<[f64]>::to_vec).unwrap_or_default())
        .collect();
    Ok((value, grads))
}

/// One gradient-descent update; the loss is measured before the update.
pub fn train_step(
    task: &SyntheticTask,
    params: &GateMixerParams,
    batch: &SyntheticBatch,
    state: SgdState,
    cfg: &TrainConfig,
) -> Result<(f64, GateMixerParams, SgdState)> {
    let (loss, grads) = match stage1_gradients(task, batch, params, cfg) {
        Ok(v) => v,
        Err(Error::NonFinite(msg)) => {
            log::error!("non-finite gradient at step {}: {msg}", state.step);
            return Err(Error::Divergence {
                step: state.step,
                loss: f64::NAN,
            });
        }
        Err(e) => return Err(e),
    };
    if !loss.is_finite() {
        return Err(Error::Divergence { step: state.step, loss });
    }
    let mut next = params.clone();
    for (t, grad) in next.tensors_mut().into_iter().zip(&grads) {
        for (w, dw) in t.data_mut().iter_mut().zip(grad) {
            *w -= cfg.lr * dw;
        }
    }
    if next.tensors().iter().any(|t| t.data().iter().any(|v| !v.is_finite())) {
        return Err(Error::Divergence { step: state.step, loss });
    }
    Ok((loss, next, SgdState { step: state.step + 1 }))
}

/// Full composed objective checked against central differences.
pub fn stage1_gradcheck(
    task: &SyntheticTask,
    batch: &SyntheticBatch,
    params: &GateMixerParams,
    cfg: &TrainConfig,
) -> Result<GradCheckReport> {
    finite_diff_check(
        |g, vars| stage1_loss_graph(g, task, batch, &ParamVars::from_slice(vars), cfg),
        &params.to_vec(),
        cfg.gradcheck_eps,
    )
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainingReport {
    pub steps: usize,
    pub seed: u64,
    pub lr: f64,
    pub lambda: f64,
    /// Training-batch loss before each update.
    pub loss_curve: Vec<f64>,
    /// Mean held-out loss at initialization.
    pub initial_loss: f64,
    /// Mean held-out loss after the last update.
    pub final_loss: f64,
    pub gradcheck_max_rel_err: f64,
    pub gradcheck_coords: usize,
    /// Not serialized so reports stay byte-stable across runs.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl TrainingReport {
    pub fn reduction(&self) -> f64 {
        1.0 - self.final_loss / self.initial_loss
    }
}

/// Everything produced by a training run.
#[derive(Clone, Debug)]
pub struct Stage1Run {
    pub report: TrainingReport,
    pub params: GateMixerParams,
    pub task: SyntheticTask,
}

/// Frozen stand-ins for a config; rebuilding them gives bit-identical maps.
pub fn task_for(cfg: &TrainConfig) -> Result<SyntheticTask> {
    SyntheticTask::new(&cfg.connector, cfg.seed, TASK_STREAM)
}

fn held_out_loss(task: &SyntheticTask, eval: &[SyntheticBatch], params: &GateMixerParams, cfg: &TrainConfig) -> Result<f64> {
    let mut total = 0.0;
    for b in eval {
        total += stage1_loss(task, b, params, cfg)?;
    }
    Ok(total / eval.len() as f64)
}

pub fn run_stage1(cfg: &TrainConfig) -> Result<Stage1Run> {
    cfg.validate()?;
    let start = Instant::now();
    let task = task_for(cfg)?;
    let mut params = GateMixerParams::init(&cfg.connector, cfg.seed)?;
    let eval = (0..cfg.eval_batches as u64)
        .map(|i| task.batch(cfg.seed, EVAL_STREAM_BASE + i, cfg.batch_size))
        .collect::<Result<Vec<_>>>()?;
    let initial_loss = held_out_loss(&task, &eval, &params, cfg)?;

    let first = task.batch(cfg.seed, BATCH_STREAM_BASE, cfg.batch_size)?;
    let check = stage1_gradcheck(&task, &first, &params, cfg)?;
    if check.max_rel_err > cfg.gradcheck_tol {
        return Err(Error::GradCheck {
            max_rel_err: check.max_rel_err,
            tolerance: cfg.gradcheck_tol,
        });
    }

    let mut state = SgdState::default();
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = if step == 0 {
            first.clone()
        } else {
            task.batch(cfg.seed, BATCH_STREAM_BASE + step as u64, cfg.batch_size)?
        };
        let (loss, next, next_state) = train_step(&task, &params, &batch, state, cfg)?;
        curve.push(loss);
        params = next;
        state = next_state;
    }
    let final_loss = held_out_loss(&task, &eval, &params, cfg)?;
    if !final_loss.is_finite() {
        return Err(Error::Divergence {
            step: cfg.steps,
            loss: final_loss,
        });
    }
    let report = TrainingReport {
        steps: cfg.steps,
        seed: cfg.seed,
        lr: cfg.lr,
        lambda: cfg.lambda,
        loss_curve: curve,
        initial_loss,
        final_loss,
        gradcheck_max_rel_err: check.max_rel_err,
        gradcheck_coords: check.n_coords,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok(Stage1Run { report, params, task })
}

pub fn train_stage1(cfg: &TrainConfig) -> Result<TrainingReport> {
    Ok(run_stage1(cfg)?.report)
}

/// Flattened parameter vector, handy for update oracles.
pub fn flatten(params: &GateMixerParams) -> Vec<f64> {
    params.tensors().iter().flat_map(|t| t.data().iter().copied()).collect()
}
