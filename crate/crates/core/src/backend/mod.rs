//! Model backends that turn `(image, question, prompt mode)` into a
//! [`GenerationTrace`].

mod mock;
mod prompts;
mod remote;
mod text;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selfverify::{ChoiceOption, GenerationTrace, PromptMode};

pub use mock::{MockBackend, MockEntry, MockScript};
pub use prompts::{render_prompt, COT_TASK_PROMPT, DIRECT_TASK_PROMPT};
pub use remote::{HttpClient, RemoteBackend, RemoteConfig, API_KEY_ENV};
pub use text::{RemoteTextModel, ScriptRule, ScriptedTextModel, TextModel};

pub const DEFAULT_MAX_TOKENS: u32 = 1024;

/// Sampling parameters for one generation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Decoding {
    pub fn validate(&self) -> Result<()> {
        if self.max_tokens < 1 {
            return Err(Error::Config("max_tokens must be >= 1".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("top_p must lie in (0, 1], got {}", self.top_p)));
        }
        Ok(())
    }
}

/// Per-mode decoding. Only the temperature differs between modes by default.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    pub direct: Decoding,
    pub cot: Decoding,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            direct: Decoding {
                temperature: 1.0,
                top_p: 0.9,
                max_tokens: DEFAULT_MAX_TOKENS,
            },
            cot: Decoding {
                temperature: 0.4,
                top_p: 0.9,
                max_tokens: DEFAULT_MAX_TOKENS,
            },
        }
    }
}

impl InferenceConfig {
    pub fn for_mode(&self, mode: PromptMode) -> Decoding {
        match mode {
            PromptMode::Direct => self.direct,
            PromptMode::Cot => self.cot,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.direct.validate()?;
        self.cot.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    /// Opaque id or path; never dereferenced by this crate.
    pub image_ref: String,
    pub question: String,
    #[serde(default)]
    pub options: Vec<ChoiceOption>,
    pub prompt_mode: PromptMode,
    pub decoding: Decoding,
}

impl BackendRequest {
    pub fn new(
        image_ref: impl Into<String>,
        question: impl Into<String>,
        options: &[ChoiceOption],
        prompt_mode: PromptMode,
        decoding: Decoding,
    ) -> Self {
        BackendRequest {
            image_ref: image_ref.into(),
            question: question.into(),
            options: options.to_vec(),
            prompt_mode,
            decoding,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.decoding.validate()
    }

    /// Full prompt text sent to the model.
    pub fn prompt(&self) -> String {
        render_prompt(&self.question, &self.options, self.prompt_mode)
    }
}

/// Anything that can answer a [`BackendRequest`]. Shared across eval workers.
pub trait Backend: Send + Sync {
    fn generate(&self, req: &BackendRequest) -> Result<GenerationTrace>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn generate(&self, req: &BackendRequest) -> Result<GenerationTrace> {
        (**self).generate(req)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn generate(&self, req: &BackendRequest) -> Result<GenerationTrace> {
        (**self).generate(req)
    }
}

/// Generates the direct and the CoT response, in that order.
pub fn dual_generate<B: Backend + ?Sized>(
    backend: &B,
    image_ref: &str,
    question: &str,
    options: &[ChoiceOption],
    cfg: &InferenceConfig,
) -> Result<(GenerationTrace, GenerationTrace)> {
    let run = |mode: PromptMode| {
        let req = BackendRequest::new(image_ref, question, options, mode, cfg.for_mode(mode));
        req.validate()
            .and_then(|_| backend.generate(&req))
            .map_err(|e| Error::Branch {
                mode: mode.as_str(),
                source: Box::new(e),
            })
    };
    Ok((run(PromptMode::Direct)?, run(PromptMode::Cot)?))
}
