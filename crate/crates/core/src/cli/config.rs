use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use artilang::generators::GeneratorSpec;
use artilang::mlm::{DType, MaskingPolicy, MlmConfig, TrainConfig};
use artilang::transfer::{DownstreamTask, FinetuneConfig, RemapStrategy};

use super::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub max_sequences: Option<usize>,
    pub block_size: Option<usize>,
}

/// Every section is optional; commands read the ones they need and fall
/// back to defaults. Flags override file values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dtype: Option<DType>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<MlmConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub masking: Option<MaskingPolicy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<DownstreamTask>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finetune: Option<FinetuneConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub remap: Option<RemapStrategy>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

/// What a run actually used: the command, its input and output paths, and
/// the fully resolved sections.
#[derive(Debug, Serialize)]
pub struct Snapshot<'a> {
    pub command: &'a str,
    pub paths: BTreeMap<&'a str, PathBuf>,
    #[serde(flatten)]
    pub config: RunConfig,
}

impl Snapshot<'_> {
    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = toml::to_string(self).map_err(|e| CliError::Runtime(artilang::Error::InvalidArgument(e.to_string())))?;
        fs::write(path, text).map_err(|e| CliError::io(path, e))
    }
}
