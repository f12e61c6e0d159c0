use ndarray::Array2;

use super::config::MlmConfig;
use super::encoder::{encode, encode_backward, output_backward, output_logits, Batch};
use super::masking::{mask_positions, MaskedBatch};
use super::ops;
use super::params::{Parameters, TensorSet};
use super::real::Real;
use crate::distributions::TokenDistribution;
use crate::error::{Error, Result};
use crate::rng::{derive_rng, StreamRng};
use crate::vocab::{TokenId, Vocabulary, SpecialToken};

/// Rows scored together when predicting many queries.
const PREDICT_CHUNK: usize = 64;

/// Mean cross-entropy in nats over the rows that carry a target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlmLoss {
    /// Zero when no row is targeted.
    pub value: f64,
    pub targets: usize,
}

/// `log_probs` rows line up with `targets`; rows without a target are ignored.
pub fn mlm_loss<F: Real>(log_probs: &Array2<F>, targets: &[Option<TokenId>]) -> MlmLoss {
    assert_eq!(log_probs.nrows(), targets.len(), "one target slot per row");
    let (sum, count) = targets
        .iter()
        .enumerate()
        .filter_map(|(r, t)| t.map(|t| -log_probs[[r, t as usize]].f64()))
        .fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    MlmLoss {
        value: if count == 0 { 0.0 } else { sum / count as f64 },
        targets: count,
    }
}

/// A sequence, the positions replaced by MASK, and the position whose
/// predictive distribution is wanted.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionQuery {
    pub tokens: Vec<TokenId>,
    pub masked: Vec<usize>,
    pub query: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlmModel<F> {
    config: MlmConfig,
    params: Parameters<F>,
}

impl<F: Real> MlmModel<F> {
    pub fn new(config: MlmConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = derive_rng(crate::rng::derive_seed(seed, crate::rng::domain::INIT), 0);
        let params = Parameters::init(&config, &mut rng);
        Ok(Self { config, params })
    }

    pub fn from_parts(config: MlmConfig, params: Parameters<F>) -> Result<Self> {
        config.validate()?;
        let reference: Parameters<F> = Parameters::init(&config, &mut derive_rng(0, 0));
        let expected = reference.tensors();
        let got = params.tensors();
        if expected.len() != got.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                got.len()
            )));
        }
        for ((name, e), (_, g)) in expected.iter().zip(&got) {
            if e.shape() != g.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    g.shape(),
                    e.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &MlmConfig {
        &self.config
    }

    pub fn params(&self) -> &Parameters<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters<F> {
        &mut self.params
    }

    pub fn into_parts(self) -> (MlmConfig, Parameters<F>) {
        (self.config, self.params)
    }

    pub fn vocab(&self) -> Vocabulary {
        Vocabulary::new((self.config.vocab_size - SpecialToken::ALL.len()) as u32)
            .expect("validated vocabulary size")
    }

    pub fn cast<G: Real>(&self) -> MlmModel<G> {
        MlmModel {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    /// Log-probabilities over the full vocabulary at the given flat rows.
    pub fn log_probs(&self, batch: &Batch, rows: &[usize]) -> Result<Array2<F>> {
        let (hidden, _) = encode(&self.config, &self.params, batch, None)?;
        let mut logits = output_logits(&self.params, &ops::gather_rows(&hidden, rows));
        ops::log_softmax(&mut logits);
        Ok(logits)
    }

    pub fn loss(&self, masked: &MaskedBatch) -> Result<MlmLoss> {
        mlm_objective(&self.config, &self.params, masked, None, false).map(|(l, _)| l)
    }

    /// Loss and its gradient; dropout applies when an RNG is given.
    pub fn loss_and_grad(
        &self,
        masked: &MaskedBatch,
        dropout: Option<&mut StreamRng>,
    ) -> Result<(MlmLoss, Parameters<F>)> {
        let (loss, grads) = mlm_objective(&self.config, &self.params, masked, dropout, true)?;
        Ok((loss, grads.expect("gradient requested")))
    }

    pub fn predict_distribution(
        &self,
        tokens: &[TokenId],
        masked: &[usize],
        query: usize,
    ) -> Result<TokenDistribution> {
        let q = PredictionQuery {
            tokens: tokens.to_vec(),
            masked: masked.to_vec(),
            query,
        };
        Ok(self.predict_many(std::slice::from_ref(&q))?.remove(0))
    }

    /// Batched `predict_distribution`; results follow query order.
    pub fn predict_many(&self, queries: &[PredictionQuery]) -> Result<Vec<TokenDistribution>> {
        let vocab = self.vocab();
        let mut out = Vec::with_capacity(queries.len());
        for chunk in queries.chunks(PREDICT_CHUNK) {
            for q in chunk {
                if q.query >= q.tokens.len() {
                    return Err(Error::PositionOutOfRange {
                        position: q.query,
                        len: q.tokens.len(),
                    });
                }
            }
            let seqs: Vec<&[TokenId]> = chunk.iter().map(|q| q.tokens.as_slice()).collect();
            let positions: Vec<Vec<usize>> = chunk.iter().map(|q| q.masked.clone()).collect();
            let masked = mask_positions(&seqs, &positions, &vocab)?;
            let rows: Vec<usize> = chunk
                .iter()
                .enumerate()
                .map(|(i, q)| masked.batch.row(i, q.query))
                .collect();
            let log_probs = self.log_probs(&masked.batch, &rows)?;
            for row in log_probs.rows() {
                out.push(TokenDistribution::from_weights(row.iter().map(|&l| l.f64().exp()).collect())?);
            }
        }
        Ok(out)
    }
}

/// Masked-LM objective as a function of the parameters.
pub(crate) fn mlm_objective<F: Real>(
    config: &MlmConfig,
    params: &Parameters<F>,
    masked: &MaskedBatch,
    dropout: Option<&mut StreamRng>,
    with_grad: bool,
) -> Result<(MlmLoss, Option<Parameters<F>>)> {
    let rows = masked.target_rows();
    let (hidden, cache) = encode(config, params, &masked.batch, dropout)?;
    let selected = ops::gather_rows(&hidden, &rows);
    let mut log_probs = output_logits(params, &selected);
    ops::log_softmax(&mut log_probs);
    let targets: Vec<Option<TokenId>> = rows.iter().map(|&r| masked.targets[r]).collect();
    let loss = mlm_loss(&log_probs, &targets);
    if !with_grad {
        return Ok((loss, None));
    }
    let mut grads = params.zeros_like();
    if rows.is_empty() {
        return Ok((loss, Some(grads)));
    }
    // softmax minus one-hot, averaged over targets
    let scale = F::of(1.0 / rows.len() as f64);
    let mut d_logits = log_probs.mapv(|l| l.exp() * scale);
    for (i, t) in targets.iter().enumerate() {
        let t = t.expect("targeted row") as usize;
        d_logits[[i, t]] = d_logits[[i, t]] - scale;
    }
    let d_selected = output_backward(params, &selected, &d_logits, &mut grads);
    let mut d_hidden = Array2::zeros(hidden.raw_dim());
    ops::scatter_add_rows(&mut d_hidden, &rows, d_selected.view());
    encode_backward(config, params, &masked.batch, cache, &d_hidden, &mut grads);
    Ok((loss, Some(grads)))
}
