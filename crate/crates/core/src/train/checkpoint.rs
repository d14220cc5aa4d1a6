use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::model::{ModelDims, ModelParams};

/// JSON checkpoint: architecture header followed by the flat weight vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub input_dim: usize,
    pub hidden: usize,
    pub feature_dim: usize,
    pub classes: usize,
    pub seed: u64,
    pub epoch: usize,
    #[serde(default)]
    pub class_names: Vec<String>,
    pub weights: Vec<f64>,
}

impl Checkpoint {
    pub fn new(params: &ModelParams, seed: u64, epoch: usize, class_names: Vec<String>) -> Self {
        Self {
            input_dim: params.dims.input,
            hidden: params.dims.hidden,
            feature_dim: params.dims.feature,
            classes: params.dims.classes,
            seed,
            epoch,
            class_names,
            weights: params.weights.clone(),
        }
    }

    pub fn params(&self) -> Result<ModelParams> {
        let dims = ModelDims {
            input: self.input_dim,
            hidden: self.hidden,
            feature: self.feature_dim,
            classes: self.classes,
        };
        if self.weights.len() != dims.param_count() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} weights", dims.param_count()),
                got: format!("{} weights", self.weights.len()),
            });
        }
        Ok(ModelParams { dims, weights: self.weights.clone() })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)
            .map_err(|source| Error::Json { context: "checkpoint".into(), source })?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|source| Error::Json { context: path.display().to_string(), source })
    }
}
