//! JSON checkpoints of trained models. Floats are written in shortest
//! round-trip form, so loading restores parameters bit for bit.

use std::fs;
use std::path::Path;

use bldclass::feature::NUM_NODE_FEATURES;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Network;
use crate::model::{Classifier, TrainedModel};

pub const CHECKPOINT_FORMAT: &str = "bldclass-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    model: TrainedModel,
}

pub fn checkpoint_to_string(model: &TrainedModel) -> Result<String> {
    let file = CheckpointFile { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, model: model.clone() };
    serde_json::to_string(&file).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn checkpoint_from_str(text: &str) -> Result<TrainedModel> {
    let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if raw.get("format").and_then(|v| v.as_str()) != Some(CHECKPOINT_FORMAT) {
        return Err(Error::Checkpoint("not a model checkpoint".into()));
    }
    let version = raw.get("version").and_then(|v| v.as_u64());
    if version != Some(CHECKPOINT_VERSION as u64) {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version:?}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let file: CheckpointFile = serde_json::from_value(raw).map_err(|e| Error::Checkpoint(e.to_string()))?;
    validate(&file.model)?;
    Ok(file.model)
}

fn validate(model: &TrainedModel) -> Result<()> {
    model.spec.validate()?;
    if let Classifier::Neural(net) = &model.classifier {
        let fresh = Network::new(&model.spec, NUM_NODE_FEATURES, model.task.num_classes(), &mut ChaCha8Rng::seed_from_u64(0))?;
        if fresh.gnn != net.gnn || fresh.head != net.head || fresh.params.shapes() != net.params.shapes() {
            return Err(Error::Checkpoint("parameter layout does not match the stored spec".into()));
        }
        if net.params.values.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
    }
    Ok(())
}

pub fn save_checkpoint(model: &TrainedModel, path: &Path) -> Result<()> {
    let text = checkpoint_to_string(model)?;
    fs::write(path, text).map_err(|e| io_error(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainedModel> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    checkpoint_from_str(&text)
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Core(bldclass::Error::Io { path: path.display().to_string(), source })
}
