use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::classifier::{Classifier, Pooling};
use super::metrics::{mean_and_std, ClassificationMetrics};
use super::tasks::{LabeledExample, TaskData, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::mlm::{clip_gradients, gradient_norm, Adam, MlmModel, Real, TrainConfig};
use crate::rng::{derive_rng, derive_seed, domain, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Share of all steps spent in linear warm-up.
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
    pub pooling: Pooling,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 32,
            learning_rate: 5e-4,
            warmup_fraction: 0.1,
            weight_decay: 0.0,
            clip_norm: Some(1.0),
            pooling: Pooling::Cls,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    fn optimizer(&self, train_size: usize) -> Result<TrainConfig> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::invalid("warmup_fraction must lie in [0, 1]"));
        }
        let total = self.epochs * train_size.div_ceil(self.batch_size);
        let config = TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            total_steps: total,
            warmup_steps: (total as f64 * self.warmup_fraction).round() as usize,
            seed: self.seed,
            weight_decay: self.weight_decay,
            clip_norm: self.clip_norm,
            ..TrainConfig::default()
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev: ClassificationMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub epochs: Vec<EpochReport>,
    pub steps: usize,
}

impl FinetuneReport {
    pub fn final_dev(&self) -> &ClassificationMetrics {
        &self.epochs.last().expect("at least one epoch").dev
    }
}

const EVAL_CHUNK: usize = 64;

pub fn evaluate<F: Real>(classifier: &Classifier<F>, examples: &[LabeledExample]) -> Result<ClassificationMetrics> {
    let predicted = examples
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let seqs: Vec<&[u32]> = chunk.iter().map(|e| e.tokens.as_slice()).collect();
            classifier.predict(&seqs)
        })
        .collect::<Result<Vec<_>>>()?
        .concat();
    let gold: Vec<usize> = examples.iter().map(|e| e.label).collect();
    ClassificationMetrics::from_predictions(&predicted, &gold, classifier.head.classes())
}

/// Trains encoder and head together, evaluating on dev after every epoch.
pub fn finetune<F: Real>(
    model: MlmModel<F>,
    data: &TaskData,
    config: &FinetuneConfig,
) -> Result<(Classifier<F>, FinetuneReport)> {
    if data.train.is_empty() {
        return Err(Error::invalid("cannot fine-tune on an empty training split"));
    }
    let optimizer_config = config.optimizer(data.train.len())?;
    let mut classifier = Classifier::new(model, NUM_CLASSES, config.pooling, config.seed);
    let mut adam = Adam::new(&classifier);
    let order_seed = derive_seed(config.seed, domain::DATA_ORDER);
    let dropout_seed = derive_seed(config.seed, domain::DROPOUT);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut step = 0;
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut derive_rng(order_seed, epoch as u64));
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            step += 1;
            let seqs: Vec<&[u32]> = chunk.iter().map(|&i| data.train[i].tokens.as_slice()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| data.train[i].label).collect();
            let mut drop_rng: Option<StreamRng> =
                (classifier.config.dropout > 0.0).then(|| derive_rng(dropout_seed, step as u64));
            let (loss, grads) = classifier.objective(&seqs, &labels, drop_rng.as_mut(), true)?;
            let mut grads = grads.expect("gradient requested");
            let norm = match config.clip_norm {
                Some(max) => clip_gradients(&mut grads, max),
                None => gradient_norm(&grads),
            };
            if !loss.is_finite() || !norm.is_finite() {
                return Err(Error::Divergence { step, loss });
            }
            adam.step(&mut classifier, &grads, optimizer_config.lr_at(step), &optimizer_config);
            loss_sum += loss;
            batches += 1;
        }
        let dev = evaluate(&classifier, &data.dev)?;
        log::info!(
            "epoch {}: train loss {:.4}, dev accuracy {:.4}, macro-F1 {:.4}",
            epoch + 1,
            loss_sum / batches as f64,
            dev.accuracy,
            dev.macro_f1
        );
        epochs.push(EpochReport {
            epoch: epoch + 1,
            train_loss: loss_sum / batches as f64,
            dev,
        });
    }
    Ok((classifier, FinetuneReport { epochs, steps: step }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub report: FinetuneReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSeedReport {
    pub runs: Vec<SeedRun>,
}

impl MultiSeedReport {
    pub fn accuracies(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.report.final_dev().accuracy).collect()
    }

    pub fn macro_f1s(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.report.final_dev().macro_f1).collect()
    }

    /// Mean and sample standard deviation of the final dev accuracy.
    pub fn accuracy_summary(&self) -> (f64, f64) {
        mean_and_std(&self.accuracies())
    }

    pub fn macro_f1_summary(&self) -> (f64, f64) {
        mean_and_std(&self.macro_f1s())
    }

    /// One row per metric: mean, std, then the per-seed values.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,mean,std");
        for r in &self.runs {
            out.push_str(&format!(",seed_{}", r.seed));
        }
        out.push('\n');
        for (name, values) in [("accuracy", self.accuracies()), ("macro_f1", self.macro_f1s())] {
            let (mean, std) = mean_and_std(&values);
            out.push_str(&format!("{name},{mean},{std}"));
            for v in values {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Fine-tunes one model per seed; `make_model` supplies the starting point
/// (pre-trained and remapped, or freshly initialised).
pub fn finetune_seeds<F, M>(
    mut make_model: M,
    data: &TaskData,
    config: &FinetuneConfig,
    seeds: &[u64],
) -> Result<MultiSeedReport>
where
    F: Real,
    M: FnMut(u64) -> Result<MlmModel<F>>,
{
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let model = make_model(seed)?;
        let config = FinetuneConfig { seed, ..config.clone() };
        let (_, report) = finetune(model, data, &config)?;
        runs.push(SeedRun { seed, report });
    }
    Ok(MultiSeedReport { runs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlm::MlmConfig;
    use crate::transfer::tasks::{build_downstream_task, DownstreamTask, TaskKind};

    fn small_model(seed: u64) -> Result<MlmModel<f32>> {
        let config = MlmConfig {
            num_layers: 1,
            hidden_dim: 32,
            num_heads: 2,
            feedforward_dim: 64,
            max_positions: 32,
            vocab_size: 13,
            ..MlmConfig::default()
        };
        MlmModel::new(config, seed)
    }

    fn data() -> TaskData {
        build_downstream_task(&DownstreamTask {
            kind: TaskKind::DupPresence,
            content_size: 8,
            segment_len: [3, 5],
            train_size: 600,
            dev_size: 200,
            ..DownstreamTask::default()
        })
        .unwrap()
    }

    fn first_token_task() -> TaskData {
        let mut rng = derive_rng(9, 0);
        let mut split = |n: usize| -> Vec<LabeledExample> {
            (0..n)
                .map(|i| {
                    let first = (i % 8) as u32;
                    let mut tokens = vec![10, first];
                    tokens.extend((0..4).map(|_| rand::Rng::random_range(&mut rng, 0..8u32)));
                    tokens.push(11);
                    LabeledExample {
                        tokens,
                        label: (first < 4) as usize,
                    }
                })
                .collect()
        };
        TaskData {
            train: split(320),
            dev: split(80),
        }
    }

    #[test]
    fn learns_easy_task_and_is_deterministic() {
        let data = first_token_task();
        let config = FinetuneConfig {
            epochs: 6,
            learning_rate: 3e-3,
            ..FinetuneConfig::default()
        };
        let (_, a) = finetune(small_model(1).unwrap(), &data, &config).unwrap();
        let (_, b) = finetune(small_model(1).unwrap(), &data, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.epochs.len(), 6);
        assert!(a.epochs[5].train_loss < a.epochs[0].train_loss);
        assert!(a.final_dev().accuracy > 0.95, "{:?}", a.final_dev());
    }

    #[test]
    fn multi_seed_csv_has_mean_and_std() {
        let data = data();
        let config = FinetuneConfig {
            epochs: 1,
            ..FinetuneConfig::default()
        };
        let report = finetune_seeds(small_model, &data, &config, &[0, 1, 2]).unwrap();
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "metric,mean,std,seed_0,seed_1,seed_2");
        assert!(lines.next().unwrap().starts_with("accuracy,"));
        let (mean, std) = report.accuracy_summary();
        assert!((0.0..=1.0).contains(&mean) && std >= 0.0);
    }

    #[test]
    fn empty_training_split_rejected() {
        let mut data = data();
        data.train.clear();
        assert!(finetune(small_model(0).unwrap(), &data, &FinetuneConfig::default()).is_err());
    }
}
