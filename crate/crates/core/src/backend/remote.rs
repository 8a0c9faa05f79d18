//! HTTP client for a log-prob-capable inference service.
//!
//! Request body:
//! `{model, prompt, image_ref?, temperature, top_p, max_tokens, want_logprobs, want_embeddings}`.
//! Reply body:
//! `{text, logprobs: [float], embeddings: {prompt: [float], completion: [float]}}`.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::selfverify::GenerationTrace;

use super::{Backend, BackendRequest};

/// Environment variable holding the bearer token for remote services.
pub const API_KEY_ENV: &str = "MIXVERIFY_API_KEY";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: f64,
    /// Extra attempts after the first failure.
    pub retries: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: "http://127.0.0.1:8000/generate".into(),
            model: "default".into(),
            timeout_secs: 60.0,
            retries: 2,
            backoff_ms: 250,
            max_in_flight: 4,
        }
    }
}

impl RemoteConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.endpoint.starts_with("http://") || self.endpoint.starts_with("https://")) {
            return Err(Error::Config(format!("endpoint must be an http(s) URL: {}", self.endpoint)));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(Error::Config("timeout_secs must be positive".into()));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be >= 1".into()));
        }
        Ok(())
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct InFlight {
    used: Mutex<usize>,
    freed: Condvar,
    max: usize,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().expect("in-flight lock");
        while *used >= self.max {
            used = self.freed.wait(used).expect("in-flight lock");
        }
        *used += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().expect("in-flight lock") -= 1;
        self.0.freed.notify_one();
    }
}

/// Blocking JSON-over-HTTP client with retries and an in-flight bound.
#[derive(Debug)]
pub struct HttpClient {
    agent: ureq::Agent,
    cfg: RemoteConfig,
    api_key: Option<String>,
    gate: InFlight,
}

impl HttpClient {
    pub fn new(cfg: RemoteConfig, api_key: Option<String>) -> Result<Self> {
        cfg.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpClient {
            agent,
            gate: InFlight {
                used: Mutex::new(0),
                freed: Condvar::new(),
                max: cfg.max_in_flight,
            },
            cfg,
            api_key,
        })
    }

    /// Reads the API key from [`API_KEY_ENV`] if set.
    pub fn from_env(cfg: RemoteConfig) -> Result<Self> {
        HttpClient::new(cfg, std::env::var(API_KEY_ENV).ok())
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    pub fn post_json(&self, body: &Value) -> Result<Value> {
        let _permit = self.gate.acquire();
        let attempts = self.cfg.retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                let wait = self.cfg.backoff_ms.saturating_mul(1 << (attempt - 2).min(10));
                thread::sleep(Duration::from_millis(wait));
            }
            let mut req = self.agent.post(&self.cfg.endpoint);
            if let Some(key) = &self.api_key {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            match req.send_json(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if (200..300).contains(&status) {
                        return resp.body_mut().read_json::<Value>().map_err(|e| Error::Transport {
                            attempts: attempt,
                            message: format!("invalid JSON reply: {e}"),
                        });
                    }
                    last = format!("HTTP {status}");
                    if status != 429 && status < 500 {
                        return Err(Error::Transport {
                            attempts: attempt,
                            message: last,
                        });
                    }
                }
                Err(e) => last = e.to_string(),
            }
            log::warn!("request to {} failed (attempt {attempt}/{attempts}): {last}", self.cfg.endpoint);
        }
        Err(Error::Transport {
            attempts,
            message: last,
        })
    }
}

#[derive(Debug, Deserialize)]
struct Embeddings {
    #[serde(default)]
    prompt: Option<Vec<f64>>,
    #[serde(default)]
    completion: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
struct GenerateReply {
    text: String,
    #[serde(default)]
    logprobs: Option<Vec<f64>>,
    #[serde(default)]
    embeddings: Option<Embeddings>,
}

/// [`Backend`] over [`HttpClient`].
#[derive(Debug)]
pub struct RemoteBackend {
    client: HttpClient,
}

impl RemoteBackend {
    pub fn new(client: HttpClient) -> Self {
        RemoteBackend { client }
    }

    pub fn request_body(&self, req: &BackendRequest) -> Value {
        json!({
            "model": self.client.config().model,
            "prompt": req.prompt(),
            "image_ref": req.image_ref,
            "temperature": req.decoding.temperature,
            "top_p": req.decoding.top_p,
            "max_tokens": req.decoding.max_tokens,
            "want_logprobs": true,
            "want_embeddings": true,
        })
    }
}

impl Backend for RemoteBackend {
    fn generate(&self, req: &BackendRequest) -> Result<GenerationTrace> {
        req.validate()?;
        let raw = self.client.post_json(&self.request_body(req))?;
        let reply: GenerateReply = serde_json::from_value(raw)
            .map_err(|e| Error::Capability(format!("malformed reply: {e}")))?;
        let token_logprobs = reply
            .logprobs
            .ok_or_else(|| Error::Capability("reply carries no logprobs".into()))?;
        if token_logprobs.is_empty() && !reply.text.is_empty() {
            return Err(Error::Capability("reply carries an empty logprob list".into()));
        }
        let (img_rep, txt_rep) = match reply.embeddings {
            Some(Embeddings {
                prompt: Some(p),
                completion: Some(c),
            }) if !p.is_empty() && !c.is_empty() => (p, c),
            _ => {
                log::warn!("service returned no embeddings; similarity falls back to neutral");
                (Vec::new(), Vec::new())
            }
        };
        Ok(GenerationTrace {
            text: reply.text,
            token_logprobs,
            img_rep,
            txt_rep,
            prompt_mode: req.prompt_mode,
        })
    }
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    use super::*;
    use crate::backend::InferenceConfig;
    use crate::selfverify::PromptMode;

    /// Serves `replies` in order (repeating the last), one per connection.
    fn stub(replies: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/generate", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap_or(0);
                    }
                }
                let mut body = vec![0u8; len];
                let _ = reader.read_exact(&mut body);
                let i = counter.fetch_add(1, Ordering::SeqCst);
                let (status, text) = &replies[i.min(replies.len() - 1)];
                let resp = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{text}",
                    text.len()
                );
                let _ = stream.write_all(resp.as_bytes());
            }
        });
        (url, hits)
    }

    fn backend(url: String, retries: u32) -> RemoteBackend {
        let cfg = RemoteConfig {
            endpoint: url,
            retries,
            backoff_ms: 1,
            timeout_secs: 5.0,
            ..RemoteConfig::default()
        };
        RemoteBackend::new(HttpClient::new(cfg, Some("k".into())).unwrap())
    }

    fn request() -> BackendRequest {
        let cfg = InferenceConfig::default();
        BackendRequest::new("img", "q?", &[], PromptMode::Cot, cfg.cot)
    }

    #[test]
    fn parses_full_reply() {
        let body = r#"{"text":"The answer is B","logprobs":[-0.1,-0.2],"embeddings":{"prompt":[1,0],"completion":[0,1]}}"#;
        let (url, _) = stub(vec![(200, body.into())]);
        let t = backend(url, 0).generate(&request()).unwrap();
        assert_eq!(t.text, "The answer is B");
        assert_eq!(t.token_logprobs, vec![-0.1, -0.2]);
        assert_eq!(t.img_rep, vec![1.0, 0.0]);
        assert_eq!(t.prompt_mode, PromptMode::Cot);
    }

    #[test]
    fn missing_logprobs_is_capability_error() {
        let (url, _) = stub(vec![(200, r#"{"text":"B"}"#.into())]);
        let err = backend(url, 0).generate(&request()).unwrap_err();
        assert!(matches!(err, Error::Capability(_)), "{err}");
    }

    #[test]
    fn missing_embeddings_gives_neutral_similarity() {
        let (url, _) = stub(vec![(200, r#"{"text":"B","logprobs":[-0.5]}"#.into())]);
        let t = backend(url, 0).generate(&request()).unwrap();
        assert!(!t.has_reps());
        assert_eq!(t.similarity().unwrap(), 0.5);
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        let ok = r#"{"text":"A","logprobs":[-0.1]}"#.to_string();
        let (url, hits) = stub(vec![(503, "{}".into()), (500, "{}".into()), (200, ok)]);
        let t = backend(url, 2).generate(&request()).unwrap();
        assert_eq!(t.text, "A");
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn exhausted_retries_report_attempts() {
        let (url, hits) = stub(vec![(503, "{}".into())]);
        let err = backend(url, 2).generate(&request()).unwrap_err();
        assert!(matches!(err, Error::Transport { attempts: 3, .. }), "{err}");
        assert!(err.is_retryable());
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, hits) = stub(vec![(400, "{}".into())]);
        let err = backend(url, 3).generate(&request()).unwrap_err();
        assert!(matches!(err, Error::Transport { attempts: 1, .. }), "{err}");
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn config_validation() {
        assert!(RemoteConfig::default().validate().is_ok());
        let bad = RemoteConfig {
            endpoint: "ftp://x".into(),
            ..RemoteConfig::default()
        };
        assert!(bad.validate().is_err());
        let zero = RemoteConfig {
            max_in_flight: 0,
            ..RemoteConfig::default()
        };
        assert!(zero.validate().is_err());
    }
}
