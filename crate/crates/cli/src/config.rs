//! Layered configuration: built-in defaults, then the TOML file, then flags.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mixverify_core::backend::{InferenceConfig, RemoteConfig};
use mixverify_core::curation::CurationConfig;
use mixverify_core::gatemixer::ConnectorConfig;
use mixverify_core::selfverify::{check_alpha, DEFAULT_ALPHA};
use mixverify_core::trainer::TrainConfig;
use mixverify_core::Error;

/// Where model outputs come from.
#[derive(Clone, Debug, PartialEq)]
pub enum BackendSpec {
    Mock(PathBuf),
    Remote(String),
}

impl BackendSpec {
    pub fn parse(s: &str) -> Result<Self, Error> {
        match s.split_once(':') {
            Some(("mock", path)) if !path.is_empty() => Ok(BackendSpec::Mock(PathBuf::from(path))),
            Some(("remote", url)) if !url.is_empty() => Ok(BackendSpec::Remote(url.to_string())),
            _ => Err(Error::Config(format!("backend must be mock:<path> or remote:<url>, got {s:?}"))),
        }
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Mock(p) => write!(f, "mock:{}", p.display()),
            BackendSpec::Remote(u) => write!(f, "remote:{u}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub workers: usize,
    pub cache_dir: Option<PathBuf>,
    pub grid: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            workers: 4,
            cache_dir: None,
            grid: "0:1:0.1".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    /// `mock:<path>` or `remote:<url>`.
    pub backend: Option<String>,
    /// Model used by `curate`, same syntax as `backend`.
    pub judge: Option<String>,
    pub alpha: f64,
    pub out: PathBuf,
    pub connector: ConnectorConfig,
    pub inference: InferenceConfig,
    pub remote: RemoteConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub curation: CurationConfig,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            backend: None,
            judge: None,
            alpha: DEFAULT_ALPHA,
            out: PathBuf::from("out"),
            connector: ConnectorConfig::default(),
            inference: InferenceConfig::default(),
            remote: RemoteConfig::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
            curation: CurationConfig::default(),
        }
    }
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Error> {
        let mut cfg = match path {
            None => CliConfig::default(),
            Some(p) => {
                let text = fs::read_to_string(p)?;
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
        };
        cfg.train.connector = cfg.connector;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Error> {
        check_alpha(self.alpha)?;
        self.connector.validate()?;
        self.inference.validate()?;
        self.curation.validate()?;
        if self.eval.workers == 0 {
            return Err(Error::Config("eval.workers must be >= 1".into()));
        }
        Ok(())
    }

    /// The single configured backend.
    pub fn backend_spec(&self) -> Result<BackendSpec, Error> {
        let spec = self
            .backend
            .as_deref()
            .ok_or_else(|| Error::Config("no backend configured (use --backend mock:<path> or remote:<url>)".into()))?;
        BackendSpec::parse(spec)
    }

    pub fn judge_spec(&self) -> Result<BackendSpec, Error> {
        let spec = self
            .judge
            .as_deref()
            .ok_or_else(|| Error::Config("no judge configured (use --judge mock:<path> or remote:<url>)".into()))?;
        BackendSpec::parse(spec)
    }
}
