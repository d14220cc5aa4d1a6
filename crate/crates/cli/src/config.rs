use std::path::{Path, PathBuf};

use serde::Deserialize;
use stainreg::color::DEFAULT_OD_THRESHOLD;
use stainreg::{PerturbParams, SnmfConfig, TrainConfig};

use crate::error::CliError;

/// Optional paths a config file may provide in place of flags.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub stains: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides the seed of every component when set.
    pub seed: Option<u64>,
    pub od_threshold: f64,
    pub perturb: PerturbParams,
    pub snmf: SnmfConfig,
    pub train: TrainConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            od_threshold: DEFAULT_OD_THRESHOLD,
            perturb: PerturbParams::default(),
            snmf: SnmfConfig::default(),
            train: TrainConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::io(format!("invalid config {}: {e}", path.display())))
    }

    /// Applies a global seed to every seeded component.
    pub fn set_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed.or(self.seed) {
            self.seed = Some(s);
            self.perturb.seed = s;
            self.snmf.seed = s;
            self.train.seed = s;
            self.train.perturb.seed = s;
        }
    }
}

/// The flag value if given, else the config value, else an error naming the flag.
pub fn pick(flag: Option<PathBuf>, config: &Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    flag.or_else(|| config.clone())
        .ok_or_else(|| CliError::io(format!("missing required --{name}")))
}

pub fn require_exists(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::io(format!("{} does not exist", path.display())))
    }
}
