//! Vocabulary remapping, synthetic downstream tasks, fine-tuning and the
//! adversarial pair transform.

mod adversarial;
mod classifier;
mod finetune;
mod metrics;
mod remap;
mod tasks;

pub use adversarial::{adversarial_pairs_text, lexical_overlap, make_adversarial_pairs, PairLabel, PairRecord};
pub use classifier::{Classifier, ClassifierHead, Pooling};
pub use finetune::{evaluate, finetune, finetune_seeds, EpochReport, FinetuneConfig, FinetuneReport, MultiSeedReport, SeedRun};
pub use metrics::{majority_baseline, mean_and_std, ClassificationMetrics};
pub use remap::{permute_model, remap_model, remap_sequences, Permutation, RemapContext, RemapStrategy};
pub use tasks::{
    build_downstream_task, has_duplicate, is_permutation, labels_path, read_examples, write_examples, DownstreamTask,
    LabeledExample, TaskData, TaskKind, NUM_CLASSES,
};
