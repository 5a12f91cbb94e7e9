use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Serialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: Option<String>,
}

/// Record of one command invocation, written when it starts and rewritten
/// when it ends.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub status: String,
    pub seed: u64,
    /// Resolved configuration with the source of every value.
    pub config: serde_json::Value,
    pub config_sources: serde_json::Value,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    path: PathBuf,
    #[serde(skip)]
    clock: Option<Instant>,
}

/// Hex SHA-256 of a file, or of every file under a directory taken in sorted
/// relative-path order with each path mixed into the digest.
pub fn hash_path(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, path, &mut files)?;
        files.sort();
        for rel in files {
            h.update(rel.to_string_lossy().as_bytes());
            h.update([0]);
            h.update(fs::read(path.join(&rel)).with_context(|| format!("reading {}", rel.display()))?);
        }
    } else {
        h.update(fs::read(path).with_context(|| format!("reading {}", path.display()))?);
    }
    Ok(hex::encode(h.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            out.push(p.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

fn artifact(path: &Path) -> Artifact {
    Artifact { path: path.to_path_buf(), sha256: path.exists().then(|| hash_path(path).ok()).flatten() }
}

impl RunManifest {
    /// Manifest for a command writing `out`; stored next to it as
    /// `<out>.manifest.json`.
    pub fn start(command: &str, seed: u64, out: &Path, inputs: &[PathBuf]) -> Result<Self> {
        let mut name = out.as_os_str().to_owned();
        name.push(".manifest.json");
        let m = Self {
            command: command.to_string(),
            status: "running".into(),
            seed,
            config: serde_json::Value::Null,
            config_sources: serde_json::Value::Null,
            inputs: inputs.iter().map(|p| artifact(p)).collect(),
            outputs: vec![Artifact { path: out.to_path_buf(), sha256: None }],
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            wall_clock_seconds: 0.0,
            error: None,
            path: PathBuf::from(name),
            clock: Some(Instant::now()),
        };
        m.write()?;
        Ok(m)
    }

    #[cfg(test)]
    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn set_config(&mut self, config: serde_json::Value, sources: serde_json::Value) -> Result<()> {
        self.config = config;
        self.config_sources = sources;
        self.write()
    }

    fn write(&self) -> Result<()> {
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(&self.path, serde_json::to_vec_pretty(self)?).with_context(|| format!("writing {}", self.path.display()))
    }

    /// Hashes the outputs and records the outcome.
    pub fn finish(mut self, outcome: &Result<()>) -> Result<()> {
        self.wall_clock_seconds = self.clock.map_or(0.0, |c| c.elapsed().as_secs_f64());
        match outcome {
            Ok(()) => {
                self.status = "ok".into();
                self.outputs = self.outputs.iter().map(|a| artifact(&a.path)).collect();
            }
            Err(e) => {
                self.status = "failed".into();
                self.error = Some(format!("{e:#}"));
            }
        }
        self.write()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directory_hash_is_order_independent_and_content_sensitive() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        fs::create_dir_all(a.join("sub")).unwrap();
        fs::write(a.join("x.txt"), "1").unwrap();
        fs::write(a.join("sub/y.txt"), "2").unwrap();
        let first = hash_path(&a).unwrap();
        assert_eq!(first, hash_path(&a).unwrap());
        fs::write(a.join("sub/y.txt"), "3").unwrap();
        assert_ne!(first, hash_path(&a).unwrap());
    }

    #[test]
    fn manifest_lifecycle() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out.json");
        let m = RunManifest::start("ingest", 3, &out, &[]).unwrap();
        let path = m.path().to_path_buf();
        let v: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        assert_eq!(v["status"], "running");
        fs::write(&out, "{}").unwrap();
        m.finish(&Ok(())).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        assert_eq!(v["status"], "ok");
        assert_eq!(v["outputs"][0]["sha256"], hash_path(&out).unwrap());
    }
}
