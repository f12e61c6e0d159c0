use std::str::FromStr;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlm::ops;
use crate::mlm::{encode, encode_backward, normal_init, Batch, MlmConfig, MlmModel, Parameters, Real, TensorSet};
use crate::rng::{derive_rng, derive_seed, domain, StreamRng};
use crate::vocab::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Hidden state at position 0.
    #[default]
    Cls,
    /// Average over non-padding positions.
    Mean,
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cls" => Ok(Pooling::Cls),
            "mean" => Ok(Pooling::Mean),
            _ => Err(Error::invalid(format!("unknown pooling {s:?} (cls, mean)"))),
        }
    }
}

/// Linear map from the pooled hidden state to class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead<F> {
    pub pooling: Pooling,
    pub weight: Array2<F>,
    pub bias: Array2<F>,
}

impl<F: Real> ClassifierHead<F> {
    pub fn new(hidden: usize, classes: usize, pooling: Pooling, std: f64, seed: u64) -> Self {
        let mut rng = derive_rng(derive_seed(seed, domain::INIT), 1);
        Self {
            pooling,
            weight: normal_init(hidden, classes, std, &mut rng),
            bias: Array2::zeros((1, classes)),
        }
    }

    pub fn classes(&self) -> usize {
        self.weight.ncols()
    }
}

/// Encoder plus classification head, trained end to end.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier<F> {
    pub config: MlmConfig,
    pub encoder: Parameters<F>,
    pub head: ClassifierHead<F>,
}

impl<F: Real> TensorSet<F> for Classifier<F> {
    fn tensors(&self) -> Vec<(String, &Array2<F>)> {
        let mut out = self.encoder.tensors();
        out.push(("head.weight".into(), &self.head.weight));
        out.push(("head.bias".into(), &self.head.bias));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Array2<F>)> {
        let mut out = self.encoder.tensors_mut();
        out.push(("head.weight".into(), &mut self.head.weight));
        out.push(("head.bias".into(), &mut self.head.bias));
        out
    }
}

fn pool<F: Real>(hidden: &Array2<F>, batch: &Batch, pooling: Pooling) -> (Array2<F>, Vec<F>) {
    let d = hidden.ncols();
    let mut pooled = Array2::zeros((batch.size, d));
    let mut weights = vec![F::zero(); batch.rows()];
    for s in 0..batch.size {
        match pooling {
            Pooling::Cls => weights[batch.row(s, 0)] = F::one(),
            Pooling::Mean => {
                let count = (0..batch.len).filter(|&p| batch.valid[batch.row(s, p)]).count().max(1);
                let w = F::of(1.0 / count as f64);
                for p in (0..batch.len).filter(|&p| batch.valid[batch.row(s, p)]) {
                    weights[batch.row(s, p)] = w;
                }
            }
        }
        let mut out = pooled.row_mut(s);
        for p in 0..batch.len {
            let w = weights[batch.row(s, p)];
            if w != F::zero() {
                out.scaled_add(w, &hidden.row(batch.row(s, p)));
            }
        }
    }
    (pooled, weights)
}

impl<F: Real> Classifier<F> {
    pub fn new(model: MlmModel<F>, classes: usize, pooling: Pooling, seed: u64) -> Self {
        let (config, encoder) = model.into_parts();
        let head = ClassifierHead::new(config.hidden_dim, classes, pooling, config.init_std, seed);
        Self { config, encoder, head }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            encoder: self.encoder.zeros_like(),
            head: ClassifierHead {
                pooling: self.head.pooling,
                weight: Array2::zeros(self.head.weight.raw_dim()),
                bias: Array2::zeros(self.head.bias.raw_dim()),
            },
        }
    }

    /// Log class probabilities, one row per sequence.
    pub fn log_probs<S: AsRef<[TokenId]>>(&self, sequences: &[S]) -> Result<Array2<F>> {
        let batch = Batch::from_sequences(sequences, &self.vocab())?;
        let (hidden, _) = encode(&self.config, &self.encoder, &batch, None)?;
        let (pooled, _) = pool(&hidden, &batch, self.head.pooling);
        let mut logits = ops::affine(&pooled, &self.head.weight, &self.head.bias);
        ops::log_softmax(&mut logits);
        Ok(logits)
    }

    pub fn predict<S: AsRef<[TokenId]>>(&self, sequences: &[S]) -> Result<Vec<usize>> {
        let lp = self.log_probs(sequences)?;
        Ok(lp
            .axis_iter(Axis(0))
            .map(|row| {
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect())
    }

    pub fn vocab(&self) -> crate::vocab::Vocabulary {
        crate::vocab::Vocabulary::new(self.config.vocab_size as u32 - crate::vocab::Vocabulary::NUM_SPECIAL)
            .expect("validated config")
    }

    /// Mean cross-entropy over the batch and, optionally, its gradient.
    pub fn objective<S: AsRef<[TokenId]>>(
        &self,
        sequences: &[S],
        labels: &[usize],
        dropout: Option<&mut StreamRng>,
        with_grad: bool,
    ) -> Result<(f64, Option<Self>)> {
        if sequences.len() != labels.len() || sequences.is_empty() {
            return Err(Error::invalid("need one label per sequence and a non-empty batch"));
        }
        let classes = self.head.classes();
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!("label {l} outside 0..{classes}")));
        }
        let batch = Batch::from_sequences(sequences, &self.vocab())?;
        let (hidden, cache) = encode(&self.config, &self.encoder, &batch, dropout)?;
        let (pooled, weights) = pool(&hidden, &batch, self.head.pooling);
        let mut log_probs = ops::affine(&pooled, &self.head.weight, &self.head.bias);
        ops::log_softmax(&mut log_probs);
        let n = labels.len() as f64;
        let loss = -labels
            .iter()
            .enumerate()
            .map(|(i, &l)| log_probs[[i, l]].f64())
            .sum::<f64>()
            / n;
        if !with_grad {
            return Ok((loss, None));
        }
        let mut grads = self.zeros_like();
        let scale = F::of(1.0 / n);
        let mut d_logits = log_probs.mapv(|l| l.exp() * scale);
        for (i, &l) in labels.iter().enumerate() {
            d_logits[[i, l]] -= scale;
        }
        let d_pooled = ops::affine_backward(
            &pooled,
            &self.head.weight,
            &d_logits,
            &mut grads.head.weight,
            &mut grads.head.bias,
        );
        let mut d_hidden = Array2::zeros(hidden.raw_dim());
        for s in 0..batch.size {
            for p in 0..batch.len {
                let r = batch.row(s, p);
                if weights[r] != F::zero() {
                    d_hidden.row_mut(r).scaled_add(weights[r], &d_pooled.row(s));
                }
            }
        }
        encode_backward(&self.config, &self.encoder, &batch, cache, &d_hidden, &mut grads.encoder);
        Ok((loss, Some(grads)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlm::check_gradients;

    fn tiny(pooling: Pooling) -> Classifier<f64> {
        let config = MlmConfig {
            num_layers: 1,
            hidden_dim: 8,
            num_heads: 2,
            feedforward_dim: 16,
            max_positions: 16,
            vocab_size: 13,
            init_std: 0.3,
            ..MlmConfig::default()
        };
        Classifier::new(MlmModel::new(config, 3).unwrap(), 2, pooling, 5)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let seqs: Vec<Vec<TokenId>> = vec![vec![10, 1, 2, 11, 3, 11], vec![10, 4, 11, 5, 11]];
        let labels = [1, 0];
        for pooling in [Pooling::Cls, Pooling::Mean] {
            let clf = tiny(pooling);
            let (_, grads) = clf.objective(&seqs, &labels, None, true).unwrap();
            let report = check_gradients(
                &clf,
                &grads.unwrap(),
                |c: &Classifier<f64>| c.objective(&seqs, &labels, None, false).map(|(l, _)| l),
                1e-5,
                60,
                1,
            )
            .unwrap();
            assert!(report.max_relative_error < 1e-4, "{pooling:?}: {report:?}");
        }
    }

    #[test]
    fn padding_does_not_change_predictions() {
        for pooling in [Pooling::Cls, Pooling::Mean] {
            let clf = tiny(pooling);
            let short: Vec<TokenId> = vec![10, 1, 11];
            let long: Vec<TokenId> = vec![10, 1, 2, 3, 4, 11];
            let alone = clf.log_probs(&[short.clone()]).unwrap();
            let padded = clf.log_probs(&[short, long]).unwrap();
            for c in 0..2 {
                assert!((alone[[0, c]] - padded[[0, c]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bad_labels_rejected() {
        let clf = tiny(Pooling::Cls);
        assert!(clf.objective(&[vec![10, 1]], &[2], None, false).is_err());
        assert!(clf.objective(&[vec![10, 1]], &[], None, false).is_err());
    }
}
