//! Run manifest and artifact writing. Every artifact carries the manifest
//! digest so outputs can be traced back to the run that made them.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    /// Location-independent name (`<role>/<file name>`).
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<InputDigest>,
    /// Stage names in execution order; their wall-clock times go to
    /// timings.json when requested.
    pub stages: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: impl Serialize, seed: Option<u64>) -> anyhow::Result<Self> {
        Ok(RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            seed,
            inputs: Vec::new(),
            stages: Vec::new(),
        })
    }

    /// Records the digest of an input file that exists.
    pub fn input(&mut self, role: &str, path: &Path) -> anyhow::Result<()> {
        if path.is_file() {
            let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            let file = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
            self.inputs.push(InputDigest {
                name: format!("{role}/{file}"),
                sha256: sha256_hex(&bytes),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }
}

/// Stage stopwatch.
#[derive(Debug, Default)]
pub struct Timings {
    stages: Vec<(String, f64)>,
}

impl Timings {
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.stages.push((stage.to_string(), t.elapsed().as_secs_f64() * 1e3));
        out
    }

    pub fn names(&self) -> Vec<String> {
        self.stages.iter().map(|s| s.0.clone()).collect()
    }

    pub fn to_json(&self) -> String {
        let map: serde_json::Map<String, serde_json::Value> = self
            .stages
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::json!({ "ms": v })))
            .collect();
        let mut s = serde_json::to_string_pretty(&map).expect("timings serialize");
        s.push('\n');
        s
    }
}

/// Output directory bound to one manifest.
pub struct Outputs {
    pub dir: PathBuf,
    pub digest: String,
}

impl Outputs {
    /// Creates the directory and writes manifest.json.
    pub fn create(dir: &Path, manifest: &RunManifest) -> anyhow::Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let out = Outputs {
            dir: dir.to_path_buf(),
            digest: manifest.digest(),
        };
        out.raw("manifest.json", manifest.to_json().as_bytes())?;
        Ok(out)
    }

    pub fn raw(&self, name: &str, bytes: &[u8]) -> anyhow::Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// CSV with a leading `# manifest=<digest>` comment line.
    pub fn csv(&self, name: &str, body: &str) -> anyhow::Result<PathBuf> {
        self.raw(name, format!("# manifest={}\n{body}", self.digest).as_bytes())
    }

    /// key=value file with a leading `manifest=<digest>` line.
    pub fn key_values(&self, name: &str, body: &str) -> anyhow::Result<PathBuf> {
        self.raw(name, format!("manifest={}\n{body}", self.digest).as_bytes())
    }

    pub fn timings(&self, t: &Timings) -> anyhow::Result<PathBuf> {
        self.raw("timings.json", t.to_json().as_bytes())
    }
}
