use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Telemetry, TrainConfig, TrainedSourceModel};
use crate::error::{Error, Result};
use crate::models::{CriticParams, ModelKind, SourceParams};

pub const CHECKPOINT_FORMAT: &str = "gensep-checkpoint/1";

/// On-disk form of a trained source model. Every tensor is stored as
/// `{rows, cols, data}` with `data` row-major; floats are written with enough
/// digits to read back bit-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub model_kind: ModelKind,
    pub seed: u64,
    pub config: TrainConfig,
    pub source: SourceParams,
    pub critic: Option<CriticParams>,
    pub telemetry: Telemetry,
}

impl Checkpoint {
    pub fn new(model: &TrainedSourceModel, config: &TrainConfig) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_owned(),
            model_kind: model.kind,
            seed: config.seed,
            config: config.clone(),
            source: model.source.clone(),
            critic: model.critic.clone(),
            telemetry: model.telemetry.clone(),
        }
    }

    pub fn into_model(self) -> Result<TrainedSourceModel> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::config(format!(
                "unsupported checkpoint format {:?}, expected {CHECKPOINT_FORMAT:?}",
                self.format
            )));
        }
        let model = TrainedSourceModel {
            kind: self.model_kind,
            source: self.source,
            critic: self.critic,
            telemetry: self.telemetry,
        };
        model.validate()?;
        Ok(model)
    }
}

pub fn save_checkpoint(path: &Path, model: &TrainedSourceModel, config: &TrainConfig) -> Result<()> {
    model.validate()?;
    let json = serde_json::to_string_pretty(&Checkpoint::new(model, config))
        .map_err(|source| Error::Json { path: path.to_owned(), source })?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(TrainedSourceModel, TrainConfig)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint =
        serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_owned(), source })?;
    let config = ckpt.config.clone();
    Ok((ckpt.into_model()?, config))
}
