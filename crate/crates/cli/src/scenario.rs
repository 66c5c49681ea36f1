use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use zrplab::graph::{GraphSpec, SiteGraph};

use crate::catalog;
use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphSource {
    Complete { sites: usize, rate: f64 },
    Cycle { sites: usize, rate: f64 },
    Path { sites: usize, rate: f64 },
    DirectedCycle { sites: usize, forward: f64, backward: f64 },
    /// JSON graph file, relative to the scenario file.
    File(PathBuf),
    Inline(GraphSpec),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    #[serde(default)]
    pub name: String,
    pub graph: GraphSource,
    pub alpha: f64,
    pub ladder: Vec<usize>,
    pub task: String,
    #[serde(default = "empty_object")]
    pub params: Value,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Directory of the scenario file, for resolving relative paths.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

impl Scenario {
    /// Reads a JSON scenario, or TOML when the extension is `.toml`.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let is_toml = path.extension().is_some_and(|e| e == "toml");
        let mut s = Self::parse(&text, is_toml)?;
        s.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(s)
    }

    pub fn parse(text: &str, is_toml: bool) -> Result<Self, CliError> {
        let value: Value = if is_toml {
            let t: toml::Value = toml::from_str(text).map_err(|e| CliError::Config(format!("invalid TOML: {e}")))?;
            serde_json::to_value(t).map_err(|e| CliError::Config(e.to_string()))?
        } else {
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid JSON: {e}")))?
        };
        let s: Scenario = serde_json::from_value(value).map_err(|e| CliError::Config(format!("invalid scenario: {e}")))?;
        if s.version != SCHEMA_VERSION {
            return Err(CliError::Config(format!("scenario version {} is not supported (expected {SCHEMA_VERSION})", s.version)));
        }
        if s.ladder.is_empty() || s.ladder.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::Config(format!("ladder {:?} must be non-empty and strictly increasing", s.ladder)));
        }
        Ok(s)
    }

    /// Checks the task name and parameters against the catalog.
    pub fn validate(&self) -> Result<(), CliError> {
        let task = catalog::find(&self.task).ok_or_else(|| CliError::UnknownTask(self.task.clone()))?;
        catalog::validate_params(task, &self.params).map_err(CliError::Config)?;
        if let GraphSource::File(p) = &self.graph {
            let full = self.base_dir.join(p);
            if !full.exists() {
                return Err(CliError::Config(format!("graph file {} does not exist", full.display())));
            }
        }
        Ok(())
    }

    pub fn graph(&self) -> Result<SiteGraph<f64>, CliError> {
        let g = match &self.graph {
            GraphSource::Complete { sites, rate } => SiteGraph::complete(*sites, *rate),
            GraphSource::Cycle { sites, rate } => SiteGraph::cycle(*sites, *rate),
            GraphSource::Path { sites, rate } => SiteGraph::path(*sites, *rate),
            GraphSource::DirectedCycle { sites, forward, backward } => SiteGraph::directed_cycle(*sites, *forward, *backward),
            GraphSource::File(p) => SiteGraph::from_json_file(&self.base_dir.join(p)),
            GraphSource::Inline(spec) => SiteGraph::from_spec(spec),
        };
        g.map_err(CliError::from)
    }

    /// Canonical JSON form; the scenario hash is taken over these bytes.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("scenario serialises")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// Hash of the graph and exponent only.
    pub fn model_hash(&self) -> Result<String, CliError> {
        let g = self.graph()?;
        let text = format!("{}|alpha={}", g.to_json(), self.alpha);
        Ok(hex::encode(Sha256::digest(text.as_bytes())))
    }

    pub fn param<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.params.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => serde_json::from_value(v.clone()).map(Some).map_err(|e| CliError::Config(format!("parameter {key}: {e}"))),
        }
    }

    pub fn param_or<T: serde::de::DeserializeOwned>(&self, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.param(key)?.unwrap_or(default))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = r#"{"version": 1, "graph": {"complete": {"sites": 2, "rate": 1.0}}, "alpha": 2.0, "ladder": [10, 20], "task": "stationary"}"#;

    #[test]
    fn toml_and_json_agree() {
        let toml_text = r#"
version = 1
alpha = 2.0
ladder = [10, 20]
task = "stationary"
[graph.complete]
sites = 2
rate = 1.0
"#;
        let a = Scenario::parse(MIN, false).unwrap();
        let b = Scenario::parse(toml_text, true).unwrap();
        assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn rejects_bad_ladder_and_version() {
        assert!(Scenario::parse(&MIN.replace("[10, 20]", "[20, 10]"), false).is_err());
        assert!(Scenario::parse(&MIN.replace("\"version\": 1", "\"version\": 9"), false).is_err());
        assert!(Scenario::parse(&MIN.replace("\"alpha\"", "\"alfa\""), false).is_err());
    }
}
