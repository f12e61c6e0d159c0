use rand::seq::index::sample;

use super::masking::MaskedBatch;
use super::model::{mlm_objective, MlmModel};
use super::params::TensorSet;
use crate::error::{Error, Result};
use crate::rng::{derive_rng, derive_seed, domain};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_SAMPLES_PER_TENSOR: usize = 200;
/// Denominator floor so that two gradients both near zero compare as equal.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    pub worst_tensor: String,
    /// Max relative error per tensor, in tensor order.
    pub per_tensor: Vec<(String, f64)>,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares `analytic` against central differences of `loss` at up to
/// `samples` randomly chosen entries of every tensor.
pub fn check_gradients<T, L>(
    params: &T,
    analytic: &T,
    loss: L,
    epsilon: f64,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    T: TensorSet<f64> + Clone,
    L: Fn(&T) -> Result<f64>,
{
    let mut rng = derive_rng(derive_seed(seed, domain::GRAD_CHECK), 0);
    let mut probe = params.clone();
    let grads = analytic.tensors();
    let mut per_tensor = Vec::with_capacity(grads.len());
    let mut checked = 0;
    let mut max_absolute_error: f64 = 0.0;
    for (t, (name, g)) in grads.iter().enumerate() {
        let g = g.as_slice().expect("standard layout");
        let picks = sample(&mut rng, g.len(), samples.min(g.len()));
        let mut worst: f64 = 0.0;
        for idx in picks {
            let original = probe.tensors()[t].1.as_slice().expect("standard layout")[idx];
            let set = |probe: &mut T, v: f64| {
                probe.tensors_mut()[t].1.as_slice_mut().expect("standard layout")[idx] = v;
            };
            set(&mut probe, original + epsilon);
            let up = loss(&probe)?;
            set(&mut probe, original - epsilon);
            let down = loss(&probe)?;
            set(&mut probe, original);
            let numeric = (up - down) / (2.0 * epsilon);
            worst = worst.max(relative_error(g[idx], numeric));
            max_absolute_error = max_absolute_error.max((g[idx] - numeric).abs());
            checked += 1;
        }
        per_tensor.push((name.clone(), worst));
    }
    let (worst_tensor, max_relative_error) = per_tensor
        .iter()
        .cloned()
        .fold((String::new(), 0.0), |a, b| if b.1 > a.1 { b } else { a });
    Ok(GradCheckReport {
        max_relative_error,
        max_absolute_error,
        worst_tensor,
        per_tensor,
        checked,
    })
}

/// Gradient check of the masked-LM loss in double precision.
pub fn grad_check(
    model: &MlmModel<f64>,
    batch: &MaskedBatch,
    epsilon: f64,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if model.config().dropout != 0.0 {
        return Err(Error::invalid("gradient check needs dropout 0"));
    }
    let config = model.config();
    let (_, analytic) = model.loss_and_grad(batch, None)?;
    check_gradients(
        model.params(),
        &analytic,
        |p| mlm_objective(config, p, batch, None, false).map(|(l, _)| l.value),
        epsilon,
        samples,
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlm::{mask_batch, mask_positions, MaskingPolicy, MlmConfig};
    use crate::vocab::{TokenId, Vocabulary};

    fn small() -> (MlmModel<f64>, MaskedBatch) {
        let config = MlmConfig {
            hidden_dim: 8,
            num_heads: 2,
            feedforward_dim: 16,
            max_positions: 8,
            tied_embeddings: false,
            ..MlmConfig::desk(Vocabulary::new(6).unwrap())
        };
        let model = MlmModel::new(config, 1).unwrap();
        let seqs: Vec<Vec<TokenId>> = vec![vec![0, 1, 2, 3, 4, 5], vec![5, 4, 3, 2]];
        let vocab = model.vocab();
        let policy = MaskingPolicy {
            mask_prob: 0.5,
            ..MaskingPolicy::default()
        };
        let batch = mask_batch(&seqs, &vocab, &policy, &mut derive_rng(4, 0)).unwrap();
        assert!(batch.selected() > 0);
        (model, batch)
    }

    #[test]
    fn small_untied_model_agrees() {
        let (model, batch) = small();
        let r = grad_check(&model, &batch, DEFAULT_EPSILON, 50, 0).unwrap();
        assert!(r.max_relative_error < 1e-4, "{r:?}");
    }

    #[test]
    fn empty_mask_gives_zero_gradient() {
        let (model, _) = small();
        let batch = mask_positions(&[vec![1, 2, 3]], &[vec![]], &model.vocab()).unwrap();
        let (loss, grads) = model.loss_and_grad(&batch, None).unwrap();
        assert_eq!(loss.value, 0.0);
        assert!(grads.tensors().iter().all(|(_, t)| t.iter().all(|&g| g == 0.0)));
    }

    #[test]
    fn coarse_epsilon_is_detected() {
        let (model, batch) = small();
        let fine = grad_check(&model, &batch, 1e-5, 50, 0).unwrap();
        let coarse = grad_check(&model, &batch, 1e-1, 50, 0).unwrap();
        assert!(coarse.max_relative_error > 10.0 * fine.max_relative_error, "{fine:?} {coarse:?}");
    }

    #[test]
    fn dropout_is_refused() {
        let (model, batch) = small();
        let (mut config, params) = model.into_parts();
        config.dropout = 0.1;
        let model = MlmModel::from_parts(config, params).unwrap();
        assert!(grad_check(&model, &batch, 1e-5, 10, 0).is_err());
    }
}
