//! Run configuration and the on-disk layout of a run directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::curriculum::{CurriculumConfig, TaskKind, TestInstance};
use crate::gateway::ModelEndpoint;
use crate::translator::{TemplateError, TemplateSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub kinds: Vec<TaskKind>,
    /// Instances per kind.
    pub count: usize,
    pub seed: u64,
    pub endpoint: ModelEndpoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_file: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub workers: usize,
    pub curriculum: CurriculumConfig,
}

impl RunConfig {
    pub fn templates(&self) -> Result<TemplateSet, ConfigError> {
        load_templates(self.template_file.as_deref())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Template { path: PathBuf, source: TemplateError },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

/// Bundled templates, or the TOML file at `path`.
pub fn load_templates(path: Option<&Path>) -> Result<TemplateSet, ConfigError> {
    match path {
        None => Ok(TemplateSet::blocksworld()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.into(), source })?;
            TemplateSet::from_toml(&text).map_err(|source| ConfigError::Template { path: p.into(), source })
        }
    }
}

/// Files inside a run directory.
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.jsonl")
    }

    pub fn results(&self) -> PathBuf {
        self.root.join("results.jsonl")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.txt")
    }

    pub fn cache(&self) -> PathBuf {
        self.root.join("cache")
    }

    pub fn read_config(&self) -> Result<RunConfig, ConfigError> {
        let path = self.config();
        let text = std::fs::read_to_string(&path).map_err(|source| ConfigError::Io { path: path.clone(), source })?;
        serde_json::from_str(&text).map_err(|e| ConfigError::Parse { path, message: e.to_string() })
    }
}

/// One JSON object per line, in suite order.
pub fn manifest_to_string(instances: &[TestInstance]) -> String {
    let mut out = String::new();
    for i in instances {
        out.push_str(&serde_json::to_string(i).expect("instances serialize"));
        out.push('\n');
    }
    out
}

pub fn read_manifest(path: &Path) -> Result<Vec<TestInstance>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| ConfigError::Parse { path: path.into(), message: format!("line {}: {e}", n + 1) })
        })
        .collect()
}
