//! Run configuration file (TOML) shared by the CLI commands. Unknown keys
//! are rejected so typos fail loudly before any compute starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::CaseKind;
use crate::kdvcf::TrainConfig;
use crate::{Error, Result};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: Option<TrainConfig>,
    pub synth: Option<SynthConfig>,
    pub infer: Option<InferConfig>,
    pub eval: Option<EvalConfig>,
}

/// Synthetic dataset generation parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    /// Cases cycled per item; an empty list generates uniform motion with
    /// the relative distance tied to the timestep.
    pub cases: Vec<CaseKind>,
    /// Target timesteps sampled per item.
    pub t_choices: Vec<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 20,
            width: 64,
            height: 64,
            seed: 0,
            cases: Vec::new(),
            t_choices: (1..8).map(|k| k as f64 / 8.0).collect(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 16 || self.height < 16 {
            return Err(Error::invalid("synthetic frames must be at least 16x16"));
        }
        if self.t_choices.is_empty() {
            return Err(Error::invalid("t_choices must not be empty"));
        }
        if self.t_choices.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::invalid("every t choice must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Interpolation parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    pub checkpoint: PathBuf,
    pub frame0: PathBuf,
    pub frame1: PathBuf,
    pub times: Vec<f64>,
    /// Pyramid depth; 0 selects the resolution rule automatically.
    pub levels: usize,
    /// Magnitude used to normalize flow visualizations.
    pub flow_color_max: f64,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::new(),
            frame0: PathBuf::new(),
            frame1: PathBuf::new(),
            times: vec![0.5],
            levels: 0,
            flow_color_max: 8.0,
        }
    }
}

impl InferConfig {
    pub fn validate(&self) -> Result<()> {
        if self.times.is_empty() {
            return Err(Error::invalid("at least one timestep is required"));
        }
        if self.times.iter().any(|&t| !(0.0..=1.0).contains(&t)) {
            return Err(Error::invalid("timesteps must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Evaluation parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    pub pattern: Option<String>,
    /// Pyramid depth; 0 selects the resolution rule automatically.
    pub levels: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::new(),
            dataset: PathBuf::new(),
            pattern: None,
            levels: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}
