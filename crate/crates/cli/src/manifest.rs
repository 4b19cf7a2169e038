//! Run manifests and atomic file output.
//!
//! Every command leaves a `run.json` next to its outputs recording the exact
//! invocation, the resolved configuration, and which files the determinism
//! guarantee covers: rerunning the recorded argv with the same inputs must
//! reproduce the `outputs` byte for byte. Timing sidecars and the manifest
//! itself (it holds wall time) live in `aux_outputs`.

use featflow_core::{Error, Result};
use serde::Serialize;
use std::path::{Path, PathBuf};

#[derive(Serialize)]
pub struct RunManifest<C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub argv: Vec<String>,
    pub threads: usize,
    pub config: C,
    /// Byte-reproducible artifacts of this run.
    pub outputs: Vec<String>,
    /// Artifacts that may differ between reruns (timing and this manifest).
    pub aux_outputs: Vec<String>,
    pub wall_ms: f64,
}

impl<C: Serialize> RunManifest<C> {
    pub fn new(command: &'static str, config: C) -> Self {
        RunManifest {
            tool: "featflow",
            version: env!("CARGO_PKG_VERSION"),
            command,
            argv: std::env::args().skip(1).collect(),
            threads: featflow_core::threads::thread_limit(),
            config,
            outputs: Vec::new(),
            aux_outputs: Vec::new(),
            wall_ms: 0.0,
        }
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.display().to_string());
        self
    }

    pub fn aux(&mut self, path: &Path) -> &mut Self {
        self.aux_outputs.push(path.display().to_string());
        self
    }

    pub fn write(mut self, path: &Path, started: std::time::Instant) -> Result<()> {
        self.aux_outputs.push(path.display().to_string());
        self.wall_ms = started.elapsed().as_secs_f64() * 1e3;
        write_json_pretty(path, &self)
    }
}

/// Write through a sibling temp file and rename, so readers never observe a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_vec_pretty(value).map_err(|e| Error::json(path, e))?;
    body.push(b'\n');
    write_atomic(path, &body)
}

pub fn write_json_compact<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = serde_json::to_vec(value).map_err(|e| Error::json(path, e))?;
    write_atomic(path, &body)
}

/// `<path>.suffix.json` beside an output file.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    s.push(".json");
    PathBuf::from(s)
}
