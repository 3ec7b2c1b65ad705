//! Self-describing model checkpoints: one JSON document holding the format
//! tag, the architecture, the vocabulary, and the flat parameter vector.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::model::Seq2SeqModel;
use super::vocab::Vocab;
use super::BackendConfig;

pub const CHECKPOINT_FORMAT: &str = "dstkit-checkpoint-v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("failed to access checkpoint {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse checkpoint {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported checkpoint format {found:?} (expected {CHECKPOINT_FORMAT:?})")]
    Format { found: String },
    #[error("parameter vector has {found} values, the architecture needs {expected}")]
    Shape { expected: usize, found: usize },
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    schema_id: String,
    config: BackendConfig,
    vocab: Vocab,
    params: Vec<f64>,
}

pub fn save_checkpoint(
    model: &Seq2SeqModel,
    schema_id: &str,
    path: &Path,
) -> Result<(), CheckpointError> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.to_string(),
        schema_id: schema_id.to_string(),
        config: *model.config(),
        vocab: model.vocab().clone(),
        params: model.flatten_params(),
    };
    let text = serde_json::to_string(&file).expect("checkpoint serialization");
    std::fs::write(path, text).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Restores a model and the schema id it was trained against. Optimizer
/// state is not checkpointed: resuming training restarts the optimizer.
pub fn load_checkpoint(path: &Path) -> Result<(Seq2SeqModel, String), CheckpointError> {
    let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: CheckpointFile =
        serde_json::from_str(&text).map_err(|source| CheckpointError::Parse {
            path: path.display().to_string(),
            source,
        })?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(CheckpointError::Format { found: file.format });
    }
    let mut model = Seq2SeqModel::new(file.config, file.vocab, 0);
    if file.params.len() != model.n_params() {
        return Err(CheckpointError::Shape {
            expected: model.n_params(),
            found: file.params.len(),
        });
    }
    model.assign_params(&file.params);
    Ok((model, file.schema_id))
}
