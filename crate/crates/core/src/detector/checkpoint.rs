//! Versioned JSON checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    ArchitectureRegistry, DetectorConfig, DetectorModel, LabelConvention, StepRecord, TrainType,
};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "dataless-detector";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    architecture_id: String,
    input_resolution: usize,
    label_convention: LabelConvention,
    train_type: TrainType,
    train_swap: String,
    config: DetectorConfig,
    parameters: Vec<f64>,
    history: Vec<StepRecord>,
}

impl DetectorModel {
    pub fn to_checkpoint_json(&self) -> Result<String> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            architecture_id: self.architecture_id().to_string(),
            input_resolution: self.input_resolution,
            label_convention: self.label_convention,
            train_type: self.train_type,
            train_swap: self.train_swap.clone(),
            config: self.config.clone(),
            parameters: self.parameters.clone(),
            history: self.history.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_checkpoint_json(json: &str, registry: &ArchitectureRegistry) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(json)?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::validation(format!(
                "not a detector checkpoint: `{}`",
                file.format
            )));
        }
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::validation(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                file.version
            )));
        }
        if file.label_convention != LabelConvention::default() {
            return Err(Error::validation(
                "checkpoint uses a different label convention",
            ));
        }
        let arch = registry.get(&file.architecture_id)?;
        let mut config = file.config;
        config.input_resolution = file.input_resolution;
        DetectorModel::from_parts(
            arch,
            file.parameters,
            config,
            file.history,
            file.train_type,
            file.train_swap,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, registry: &ArchitectureRegistry) -> Result<Self> {
        let path = path.as_ref();
        let json = std::fs::read_to_string(path)
            .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        DetectorModel::from_checkpoint_json(&json, registry)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_parameters_bit_exactly() {
        let reg = ArchitectureRegistry::default();
        let mut m = DetectorModel::initialize(&DetectorConfig::default(), &reg).unwrap();
        m.parameters[0] = 0.1 + 0.2;
        m.parameters[1] = -1.0e-300;
        let back =
            DetectorModel::from_checkpoint_json(&m.to_checkpoint_json().unwrap(), &reg).unwrap();
        assert_eq!(back.parameters, m.parameters);
        assert_eq!(back.config, m.config);
        assert_eq!(back.architecture_id(), "tiny-cnn");
    }

    #[test]
    fn rejects_foreign_and_future_files() {
        let reg = ArchitectureRegistry::default();
        let m = DetectorModel::initialize(&DetectorConfig::default(), &reg).unwrap();
        let json = m.to_checkpoint_json().unwrap();
        let future = json.replacen("\"version\":1", "\"version\":99", 1);
        assert!(DetectorModel::from_checkpoint_json(&future, &reg).is_err());
        let foreign = json.replacen(CHECKPOINT_FORMAT, "something-else", 1);
        assert!(DetectorModel::from_checkpoint_json(&foreign, &reg).is_err());
        let truncated = json.replacen("\"parameters\":[", "\"parameters\":[1.0,", 1);
        assert!(DetectorModel::from_checkpoint_json(&truncated, &reg).is_err());
    }
}
