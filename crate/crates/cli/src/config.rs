//! JSON run configuration. Every section is optional and falls back to the
//! library defaults; command-line flags are applied on top.

use std::path::Path;

use dueso::dsp::PreprocessConfig;
use dueso::gradcheck::GradcheckConfig;
use dueso::model::ModelConfig;
use dueso::synth::SynthConfig;
use dueso::train::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub preprocess: PreprocessConfig,
    pub gradcheck: GradcheckConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> dueso::Result<Self> {
        match path {
            Some(p) => dueso::io::read_json(p),
            None => Ok(RunConfig::default()),
        }
    }

    pub fn log(&self, command: &str) {
        log::info!(
            "{command}: effective config {}",
            serde_json::to_string(self).unwrap_or_default()
        );
    }
}
