use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Record of one invocation, written next to the artifacts it produced.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: serde_json::Value,
    /// Input path to SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub wall_time_seconds: f64,
    /// Peak resident set size, where the platform reports it.
    pub peak_rss_kib: Option<u64>,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let mut file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn peak_rss_kib() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

pub struct ManifestBuilder {
    command: String,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
    seeds: BTreeMap<String, u64>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: &impl Serialize) -> anyhow::Result<Self> {
        Ok(ManifestBuilder {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            inputs: BTreeMap::new(),
            seeds: BTreeMap::new(),
            started: Instant::now(),
        })
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        let digest = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    /// Records a value resolved after the builder was created.
    pub fn record(&mut self, key: &str, value: &impl Serialize) -> anyhow::Result<()> {
        if let serde_json::Value::Object(map) = &mut self.config {
            map.insert(key.to_string(), serde_json::to_value(value)?);
        }
        Ok(())
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    pub fn finish(self) -> RunManifest {
        RunManifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: self.config,
            inputs: self.inputs,
            seeds: self.seeds,
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
            peak_rss_kib: peak_rss_kib(),
        }
    }

    /// Writes `manifest.json` into `dir`.
    pub fn write_in(self, dir: &Path) -> anyhow::Result<PathBuf> {
        self.write_to(dir.join("manifest.json"))
    }

    /// Writes `<file>.manifest.json` beside a single-file artifact.
    pub fn write_beside(self, file: &Path) -> anyhow::Result<PathBuf> {
        let mut name = file.as_os_str().to_owned();
        name.push(".manifest.json");
        self.write_to(PathBuf::from(name))
    }

    fn write_to(self, path: PathBuf) -> anyhow::Result<PathBuf> {
        let manifest = self.finish();
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
