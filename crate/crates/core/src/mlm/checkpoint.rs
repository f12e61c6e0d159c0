use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::config::{MaskingPolicy, MlmConfig, TrainConfig};
use super::model::MlmModel;
use super::params::{Parameters, TensorSet};
use super::real::{DType, Real};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "artilang-mlm-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// What produced a checkpoint.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masking: Option<MaskingPolicy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_loss: Option<f64>,
    /// Per-content-id counts of the pre-training corpus, for rank remapping.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_frequencies: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<serde_json::Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: [usize; 2],
    values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    dtype: DType,
    config: MlmConfig,
    training: TrainingMetadata,
    tensors: Vec<TensorRecord>,
}

pub fn save_checkpoint<F: Real>(
    model: &MlmModel<F>,
    training: &TrainingMetadata,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        dtype: F::DTYPE,
        config: model.config().clone(),
        training: training.clone(),
        tensors: model
            .params()
            .tensors()
            .into_iter()
            .map(|(name, t)| TensorRecord {
                name,
                shape: [t.nrows(), t.ncols()],
                values: t.iter().map(|x| x.f64()).collect(),
            })
            .collect(),
    };
    let staged = path.with_extension("partial");
    fs::write(&staged, serde_json::to_vec(&file)?).map_err(|e| Error::io(&staged, e))?;
    fs::rename(&staged, path).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<CheckpointFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile = serde_json::from_slice(&bytes)?;
    if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{} is {} v{}, expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}",
            path.display(),
            file.format,
            file.version
        )));
    }
    Ok(file)
}

/// Precision the checkpoint was written in.
pub fn checkpoint_dtype(path: impl AsRef<Path>) -> Result<DType> {
    read_file(path.as_ref()).map(|f| f.dtype)
}

/// Loads into `F`, converting from the stored precision if needed.
pub fn load_checkpoint<F: Real>(path: impl AsRef<Path>) -> Result<(MlmModel<F>, TrainingMetadata)> {
    let file = read_file(path.as_ref())?;
    let mut params: Parameters<F> = Parameters::init(&file.config, &mut crate::rng::derive_rng(0, 0));
    let slots = params.tensors_mut();
    if slots.len() != file.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            slots.len(),
            file.tensors.len()
        )));
    }
    for ((name, slot), record) in slots.into_iter().zip(file.tensors) {
        if name != record.name {
            return Err(Error::Checkpoint(format!("expected tensor {name}, found {}", record.name)));
        }
        if slot.shape() != record.shape || record.values.len() != record.shape[0] * record.shape[1] {
            return Err(Error::Checkpoint(format!(
                "tensor {name}: stored shape {:?} with {} values, expected {:?}",
                record.shape,
                record.values.len(),
                slot.shape()
            )));
        }
        if record.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint(format!("tensor {name} holds non-finite values")));
        }
        *slot = Array2::from_shape_vec((record.shape[0], record.shape[1]), record.values.into_iter().map(F::of).collect())
            .expect("shape checked");
    }
    Ok((MlmModel::from_parts(file.config, params)?, file.training))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let model = MlmModel::<f32>::new(MlmConfig::default(), 11).unwrap();
        let meta = TrainingMetadata {
            steps: 3,
            token_frequencies: Some(vec![1, 2, 3]),
            ..TrainingMetadata::default()
        };
        save_checkpoint(&model, &meta, &path).unwrap();
        assert_eq!(checkpoint_dtype(&path).unwrap(), DType::F32);
        let (back, meta_back) = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(back, model);
        assert_eq!(meta_back, meta);
        let (wide, _) = load_checkpoint::<f64>(&path).unwrap();
        assert_eq!(wide, model.cast::<f64>());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let model = MlmModel::<f64>::new(MlmConfig::default(), 1).unwrap();
        save_checkpoint(&model, &TrainingMetadata::default(), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replacen("\"shape\":[69,64]", "\"shape\":[64,69]", 1)).unwrap();
        assert!(matches!(load_checkpoint::<f64>(&path), Err(Error::Checkpoint(_))));
        fs::write(&path, "{}").unwrap();
        assert!(load_checkpoint::<f64>(&path).is_err());
    }
}
