use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::selfverify::{GenerationTrace, PromptMode};

/// Generation traces keyed by instance id and prompt mode, held in memory
/// and optionally mirrored to `<dir>/<escaped id>.<mode>.json`.
#[derive(Debug, Default)]
pub struct TraceCache {
    mem: Mutex<HashMap<(String, PromptMode), GenerationTrace>>,
    dir: Option<PathBuf>,
    generated: AtomicUsize,
}

impl TraceCache {
    pub fn in_memory() -> Self {
        TraceCache::default()
    }

    pub fn with_dir(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(TraceCache {
            dir: Some(dir.to_path_buf()),
            ..TraceCache::default()
        })
    }

    /// Number of traces produced by the generator (cache misses).
    pub fn generated(&self) -> usize {
        self.generated.load(Ordering::Relaxed)
    }

    pub fn file_name(id: &str, mode: PromptMode) -> String {
        let mut out = String::with_capacity(id.len());
        for b in id.bytes() {
            if b.is_ascii_alphanumeric() || b == b'-' || b == b'_' {
                out.push(b as char);
            } else {
                out.push_str(&format!("%{b:02X}"));
            }
        }
        format!("{out}.{mode}.json")
    }

    pub fn get_or_generate<F>(&self, id: &str, mode: PromptMode, generate: F) -> Result<GenerationTrace>
    where
        F: FnOnce() -> Result<GenerationTrace>,
    {
        let key = (id.to_string(), mode);
        if let Some(t) = self.mem.lock().expect("cache lock").get(&key) {
            return Ok(t.clone());
        }
        let path = self.dir.as_ref().map(|d| d.join(Self::file_name(id, mode)));
        if let Some(p) = path.as_ref().filter(|p| p.exists()) {
            let trace: GenerationTrace = serde_json::from_str(&fs::read_to_string(p)?)
                .map_err(|e| Error::Config(format!("corrupt cache entry {}: {e}", p.display())))?;
            self.mem.lock().expect("cache lock").insert(key, trace.clone());
            return Ok(trace);
        }
        let trace = generate()?;
        self.generated.fetch_add(1, Ordering::Relaxed);
        if let Some(p) = path {
            let tmp = p.with_extension("json.tmp");
            fs::write(&tmp, serde_json::to_vec_pretty(&trace)?)?;
            fs::rename(&tmp, &p)?;
        }
        self.mem.lock().expect("cache lock").insert(key, trace.clone());
        Ok(trace)
    }
}
