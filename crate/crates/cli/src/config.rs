//! Run configuration: a TOML file with one section per pipeline stage.

use std::fs;
use std::path::{Path, PathBuf};

use maest::benchkit::BenchConfig;
use maest::melfront::MelConfig;
use maest::model::ModelConfig;
use maest::patchgrid::PatchoutSpec;
use maest::probe::{ProbeConfig, ProbeGrid};
use maest::synth::ToyCorpusConfig;
use maest::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedConfig {
    pub espec: String,
    pub patchout: PatchoutSpec,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            espec: "7:cls,7:dist,7:avg".into(),
            patchout: PatchoutSpec::none(),
        }
    }
}

/// Empty strings mean "not set".
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub store: String,
    pub splits: String,
    pub weights: String,
    pub stats: String,
    pub dataset: String,
    pub run_dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,
    pub paths: Paths,
    pub mel: MelConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub probe_grid: ProbeGrid,
    pub bench: BenchConfig,
    pub embed: EmbedConfig,
    pub toy: ToyCorpusConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 1,
            paths: Paths::default(),
            mel: MelConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            probe: ProbeConfig::default(),
            probe_grid: ProbeGrid::default(),
            bench: BenchConfig::default(),
            embed: EmbedConfig::default(),
            toy: ToyCorpusConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::User(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::User(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Internal(format!("config serialization: {e}")))
    }

    /// Copies the top-level seed and thread count into the stage sections.
    pub fn resolve(&mut self) {
        self.train.seed = self.seed;
        self.toy.seed = self.seed;
        self.bench.threads = self.threads;
    }

    pub fn path(s: &str) -> Option<PathBuf> {
        (!s.is_empty()).then(|| PathBuf::from(s))
    }
}
