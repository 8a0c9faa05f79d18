//! Plain text-completion models, used by the curation pipeline.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};

use super::HttpClient;

pub trait TextModel: Send + Sync {
    fn complete(&self, system: &str, prompt: &str) -> Result<String>;
}

impl<T: TextModel + ?Sized> TextModel for &T {
    fn complete(&self, system: &str, prompt: &str) -> Result<String> {
        (**self).complete(system, prompt)
    }
}

impl<T: TextModel + ?Sized> TextModel for Box<T> {
    fn complete(&self, system: &str, prompt: &str) -> Result<String> {
        (**self).complete(system, prompt)
    }
}

/// Remote text model on the same wire protocol, without logprobs or embeddings.
#[derive(Debug)]
pub struct RemoteTextModel {
    client: HttpClient,
    temperature: f64,
    max_tokens: u32,
}

impl RemoteTextModel {
    pub fn new(client: HttpClient, temperature: f64, max_tokens: u32) -> Self {
        RemoteTextModel {
            client,
            temperature,
            max_tokens,
        }
    }
}

impl TextModel for RemoteTextModel {
    fn complete(&self, system: &str, prompt: &str) -> Result<String> {
        let body = json!({
            "model": self.client.config().model,
            "system": system,
            "prompt": prompt,
            "temperature": self.temperature,
            "top_p": 1.0,
            "max_tokens": self.max_tokens,
            "want_logprobs": false,
            "want_embeddings": false,
        });
        let reply = self.client.post_json(&body)?;
        reply
            .get("text")
            .and_then(|t| t.as_str())
            .map(str::to_string)
            .ok_or_else(|| Error::Capability("reply carries no text".into()))
    }
}

/// First rule whose `needle` occurs in the prompt supplies the reply.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    pub needle: String,
    pub reply: String,
}

/// Deterministic stand-in for a text model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptedTextModel {
    pub rules: Vec<ScriptRule>,
    /// Reply when no rule matches; `None` makes unmatched prompts an error.
    #[serde(default)]
    pub default_reply: Option<String>,
}

impl ScriptedTextModel {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn rule(mut self, needle: impl Into<String>, reply: impl Into<String>) -> Self {
        self.rules.push(ScriptRule {
            needle: needle.into(),
            reply: reply.into(),
        });
        self
    }
}

impl TextModel for ScriptedTextModel {
    fn complete(&self, _system: &str, prompt: &str) -> Result<String> {
        self.rules
            .iter()
            .find(|r| prompt.contains(&r.needle))
            .map(|r| r.reply.clone())
            .or_else(|| self.default_reply.clone())
            .ok_or_else(|| Error::Transport {
                attempts: 1,
                message: "no scripted reply matches the prompt".into(),
            })
    }
}
