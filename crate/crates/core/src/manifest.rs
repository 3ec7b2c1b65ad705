//! Run manifests: a small JSON sidecar written next to every artifact the
//! CLI produces, recording the tool version, the command line, the resolved
//! configuration, and the input and output paths. Reruns stay auditable
//! without digging through shell history.

use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub created_at: DateTime<Utc>,
    /// The subcommand that produced the artifact, e.g. "train".
    pub command: String,
    /// Full argument vector as invoked.
    pub argv: Vec<String>,
    /// Resolved configuration after defaults were applied.
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> RunManifest {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            created_at: Utc::now(),
            command: command.to_string(),
            argv: std::env::args().collect(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn with_inputs<I: IntoIterator<Item = P>, P: AsRef<Path>>(mut self, inputs: I) -> Self {
        self.inputs = inputs
            .into_iter()
            .map(|p| p.as_ref().display().to_string())
            .collect();
        self
    }

    pub fn with_outputs<I: IntoIterator<Item = P>, P: AsRef<Path>>(mut self, outputs: I) -> Self {
        self.outputs = outputs
            .into_iter()
            .map(|p| p.as_ref().display().to_string())
            .collect();
        self
    }

    /// Writes `<artifact>.manifest.json` next to the given artifact path.
    pub fn save_beside(&self, artifact: &Path) -> Result<(), ManifestError> {
        self.save(&sidecar_path(artifact))
    }

    pub fn save(&self, path: &Path) -> Result<(), ManifestError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serialization");
        std::fs::write(path, text).map_err(|source| ManifestError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<RunManifest, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ManifestError::Parse {
            path: path.display().to_string(),
            source,
        })
    }
}

/// `out/run.json` -> `out/run.manifest.json`.
pub fn sidecar_path(artifact: &Path) -> std::path::PathBuf {
    let stem = artifact
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "artifact".to_string());
    artifact.with_file_name(format!("{stem}.manifest.json"))
}
