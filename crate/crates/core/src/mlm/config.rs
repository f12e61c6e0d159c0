use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

/// Encoder shape. Defaults are desk scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlmConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub feedforward_dim: usize,
    pub max_positions: usize,
    /// Total vocabulary size including the reserved ids.
    pub vocab_size: usize,
    pub dropout: f64,
    /// Share the output projection with the token embedding table.
    pub tied_embeddings: bool,
    pub layer_norm_eps: f64,
    pub init_std: f64,
}

impl Default for MlmConfig {
    fn default() -> Self {
        Self::desk(Vocabulary::desk())
    }
}

impl MlmConfig {
    pub fn desk(vocab: Vocabulary) -> Self {
        Self {
            num_layers: 2,
            hidden_dim: 64,
            num_heads: 2,
            feedforward_dim: 256,
            max_positions: 128,
            vocab_size: vocab.total_size() as usize,
            dropout: 0.0,
            tied_embeddings: true,
            layer_norm_eps: 1e-5,
            init_std: 0.02,
        }
    }

    /// The 8-layer, 512-wide, 8-head reference shape (documentation only).
    pub fn full_scale(vocab: Vocabulary) -> Self {
        Self {
            num_layers: 8,
            hidden_dim: 512,
            num_heads: 8,
            feedforward_dim: 2048,
            dropout: 0.1,
            ..Self::desk(vocab)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.hidden_dim % self.num_heads != 0 {
            return Err(Error::invalid(format!(
                "hidden dim {} is not divisible by {} heads",
                self.hidden_dim, self.num_heads
            )));
        }
        if self.num_layers == 0 || self.feedforward_dim == 0 || self.max_positions == 0 {
            return Err(Error::invalid("layers, feedforward dim and positions must be positive"));
        }
        if self.vocab_size < 7 {
            return Err(Error::invalid(format!("vocabulary of {} is too small", self.vocab_size)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn parameter_count(&self) -> usize {
        let (v, d, f, p) = (
            self.vocab_size,
            self.hidden_dim,
            self.feedforward_dim,
            self.max_positions,
        );
        let per_layer = 4 * (d * d + d) + (d * f + f) + (f * d + d) + 4 * d;
        let output = if self.tied_embeddings { 0 } else { v * d };
        v * d + p * d + self.num_layers * per_layer + 2 * d + output + v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskingMode {
    /// Every content position is selected independently, re-drawn each visit.
    Dynamic,
    /// Exactly one content position per sequence.
    SingleMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskingPolicy {
    pub mask_prob: f64,
    /// Fractions of selected positions replaced by MASK, by a random content
    /// token, or left unchanged.
    pub replace_mask: f64,
    pub replace_random: f64,
    pub replace_keep: f64,
    pub mode: MaskingMode,
}

impl Default for MaskingPolicy {
    fn default() -> Self {
        Self {
            mask_prob: 0.15,
            replace_mask: 0.8,
            replace_random: 0.1,
            replace_keep: 0.1,
            mode: MaskingMode::Dynamic,
        }
    }
}

impl MaskingPolicy {
    /// One position per sequence, always replaced by MASK.
    pub fn single_mask() -> Self {
        Self {
            replace_mask: 1.0,
            replace_random: 0.0,
            replace_keep: 0.0,
            mode: MaskingMode::SingleMask,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let split = [self.replace_mask, self.replace_random, self.replace_keep];
        if split.iter().any(|p| !(0.0..=1.0).contains(p))
            || (split.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::invalid(format!("replacement split {split:?} does not sum to 1")));
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(Error::invalid(format!("mask probability {} outside [0, 1]", self.mask_prob)));
        }
        Ok(())
    }
}

/// Adam with linear warmup and linear decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
    /// Loss-curve resolution in steps.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 1e-3,
            total_steps: 2000,
            warmup_steps: 100,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            clip_norm: Some(1.0),
            log_every: 50,
        }
    }

    /// Batch 300, lr 5e-5, 100k steps, 5k warmup (documentation only).
    pub fn full_scale() -> Self {
        Self {
            batch_size: 300,
            learning_rate: 5e-5,
            total_steps: 100_000,
            warmup_steps: 5_000,
            beta2: 0.98,
            adam_eps: 1e-6,
            weight_decay: 0.01,
            log_every: 500,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.warmup_steps > self.total_steps {
            return Err(Error::invalid(format!(
                "warmup {} exceeds total steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if self.batch_size == 0 || self.log_every == 0 {
            return Err(Error::invalid("batch size and log interval must be positive"));
        }
        Ok(())
    }

    /// Learning rate applied at 1-based `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step <= self.warmup_steps && self.warmup_steps > 0 {
            self.learning_rate * step as f64 / self.warmup_steps as f64
        } else if self.total_steps > self.warmup_steps {
            let left = self.total_steps.saturating_sub(step) as f64;
            self.learning_rate * left / (self.total_steps - self.warmup_steps) as f64
        } else {
            self.learning_rate
        }
    }
}
