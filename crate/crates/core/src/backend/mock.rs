use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selfverify::{GenerationTrace, PromptMode};

use super::{Backend, BackendRequest};

/// One scripted reply. Exactly one of `trace` and `error` must be set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MockEntry {
    pub image_ref: String,
    pub question: String,
    pub prompt_mode: PromptMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<GenerationTrace>,
    /// Simulated transport failure message.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// JSON script: `{"default": <trace>, "entries": [<entry>, ...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    pub default: GenerationTrace,
    #[serde(default)]
    pub entries: Vec<MockEntry>,
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self> {
        let script: MockScript = serde_json::from_str(&fs::read_to_string(path)?)?;
        Ok(script)
    }
}

type Key = (String, String, PromptMode);

/// Table-lookup backend; identical requests always yield identical traces.
#[derive(Debug)]
pub struct MockBackend {
    default: GenerationTrace,
    table: HashMap<Key, std::result::Result<GenerationTrace, String>>,
    calls: AtomicUsize,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Result<Self> {
        let mut table = HashMap::new();
        for e in script.entries {
            let value = match (e.trace, e.error) {
                (Some(t), None) => Ok(t),
                (None, Some(msg)) => Err(msg),
                _ => {
                    return Err(Error::Config(format!(
                        "mock entry ({}, {:?}, {}) needs exactly one of trace/error",
                        e.image_ref, e.question, e.prompt_mode
                    )))
                }
            };
            let key = (e.image_ref, e.question, e.prompt_mode);
            if table.insert(key.clone(), value).is_some() {
                return Err(Error::Config(format!("duplicate mock entry {key:?}")));
            }
        }
        Ok(MockBackend {
            default: script.default,
            table,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        MockBackend::new(MockScript::load(path)?)
    }

    /// Number of `generate` calls served so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl Backend for MockBackend {
    fn generate(&self, req: &BackendRequest) -> Result<GenerationTrace> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let key = (req.image_ref.clone(), req.question.clone(), req.prompt_mode);
        match self.table.get(&key) {
            Some(Ok(trace)) => Ok(trace.clone()),
            Some(Err(msg)) => Err(Error::Transport {
                attempts: 1,
                message: msg.clone(),
            }),
            None => Ok(self.default.clone()),
        }
    }
}
