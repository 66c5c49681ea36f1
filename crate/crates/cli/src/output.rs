use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Writes artifacts into one directory and records their hashes.
pub struct ArtifactWriter {
    dir: PathBuf,
    scenario_hash: String,
    artifacts: Vec<Artifact>,
}

impl ArtifactWriter {
    pub fn new(dir: &Path, scenario_hash: &str) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), scenario_hash: scenario_hash.to_string(), artifacts: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn write(&mut self, name: &str, content: &[u8]) -> Result<(), CliError> {
        fs::write(self.dir.join(name), content)?;
        self.artifacts.push(Artifact {
            path: name.to_string(),
            sha256: hex::encode(Sha256::digest(content)),
            bytes: content.len(),
        });
        Ok(())
    }

    /// CSV with a leading comment naming the tool version and scenario hash.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let mut s = format!("# zrplab {TOOL_VERSION} scenario {}\n", self.scenario_hash);
        s.push_str(&header.join(","));
        s.push('\n');
        for r in rows {
            debug_assert_eq!(r.len(), header.len());
            s.push_str(&r.join(","));
            s.push('\n');
        }
        self.write(name, s.as_bytes())
    }

    /// CSV whose body (header line included) is already formatted.
    pub fn csv_body(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        let s = format!("# zrplab {TOOL_VERSION} scenario {}\n{body}", self.scenario_hash);
        self.write(name, s.as_bytes())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    /// Writes `index.json` listing every artifact and returns the list.
    pub fn finish(self, task: &str, seed: u64, passed: bool, summary: &str) -> Result<Vec<Artifact>, CliError> {
        let index: Value = json!({
            "tool_version": TOOL_VERSION,
            "scenario_sha256": self.scenario_hash,
            "task": task,
            "seed": seed,
            "passed": passed,
            "summary": summary,
            "artifacts": self.artifacts,
        });
        let text = serde_json::to_string_pretty(&index).map_err(|e| CliError::Config(e.to_string()))? + "\n";
        fs::write(self.dir.join("index.json"), text)?;
        Ok(self.artifacts)
    }
}

/// Shortest round-trip formatting of a float.
pub fn num(v: f64) -> String {
    format!("{v}")
}
