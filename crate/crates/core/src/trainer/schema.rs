//! Hyperparameter records for the three training stages. Only the
//! alignment stage is executable here; the others are parsed and checked.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::MODULES;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainingStage {
    Alignment,
    Instruction,
    Reasoning,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub stage: TrainingStage,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub lr_schedule: String,
    pub warmup_ratio: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub optimizer: String,
    pub precision: String,
    pub deepspeed: String,
    pub training_modules: Vec<String>,
}

impl StageConfig {
    pub fn reference(stage: TrainingStage) -> Self {
        let (batch_size, peak_lr, epochs, deepspeed, modules): (usize, f64, usize, &str, &[&str]) = match stage {
            TrainingStage::Alignment => (256, 1e-3, 1, "zero2", &["gatemixer"]),
            TrainingStage::Instruction => (256, 2e-5, 1, "zero3", &["gatemixer", "llm"]),
            TrainingStage::Reasoning => (128, 2e-6, 3, "zero3", &["llm"]),
        };
        StageConfig {
            stage,
            batch_size,
            peak_lr,
            lr_schedule: "cosine".into(),
            warmup_ratio: 0.03,
            weight_decay: 0.0,
            epochs,
            optimizer: "adamw".into(),
            precision: "bf16".into(),
            deepspeed: deepspeed.into(),
            training_modules: modules.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be >= 1".into());
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return bad(format!("peak_lr must be positive, got {}", self.peak_lr));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return bad(format!("warmup_ratio must lie in [0, 1), got {}", self.warmup_ratio));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be >= 0".into());
        }
        if !["cosine", "linear", "constant"].contains(&self.lr_schedule.as_str()) {
            return bad(format!("unknown lr_schedule {:?}", self.lr_schedule));
        }
        if !["adamw", "sgd"].contains(&self.optimizer.as_str()) {
            return bad(format!("unknown optimizer {:?}", self.optimizer));
        }
        if !["bf16", "fp16", "fp32"].contains(&self.precision.as_str()) {
            return bad(format!("unknown precision {:?}", self.precision));
        }
        if !["zero2", "zero3"].contains(&self.deepspeed.as_str()) {
            return bad(format!("unknown deepspeed stage {:?}", self.deepspeed));
        }
        for m in &self.training_modules {
            if !MODULES.contains(&m.as_str()) {
                return bad(format!("unknown module {m:?}"));
            }
        }
        let trains = |m: &str| self.training_modules.iter().any(|x| x == m);
        if trains("vision_encoder") {
            return bad("the vision encoder stays frozen in every stage".into());
        }
        let ok = match self.stage {
            TrainingStage::Alignment => trains("gatemixer") && !trains("llm"),
            TrainingStage::Instruction => trains("gatemixer") && trains("llm"),
            TrainingStage::Reasoning => trains("llm") && !trains("gatemixer"),
        };
        if !ok {
            return bad(format!(
                "training modules {:?} do not fit stage {:?}",
                self.training_modules, self.stage
            ));
        }
        Ok(())
    }

    /// Only the alignment stage has a runnable desk-scale counterpart.
    pub fn is_executable(&self) -> bool {
        self.stage == TrainingStage::Alignment
    }
}
