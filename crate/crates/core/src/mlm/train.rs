use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

use super::config::{MaskingPolicy, TrainConfig};
use super::masking::{mask_batch, mask_positions};
use super::model::MlmModel;
use super::params::TensorSet;
use super::real::Real;
use crate::corpus::Sequence;
use crate::error::{Error, Result};
use crate::rng::{derive_rng, derive_seed, domain, StreamRng};
use crate::vocab::TokenId;

/// Adam moments for every tensor of a `TensorSet`, in its order.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    first: Vec<Array2<F>>,
    second: Vec<Array2<F>>,
    steps: i32,
}

impl<F: Real> Adam<F> {
    pub fn new<T: TensorSet<F>>(params: &T) -> Self {
        let zeros: Vec<Array2<F>> = params
            .tensors()
            .iter()
            .map(|(_, t)| Array2::zeros(t.raw_dim()))
            .collect();
        Self {
            second: zeros.clone(),
            first: zeros,
            steps: 0,
        }
    }

    /// One update at learning rate `lr`; weight decay is decoupled.
    pub fn step<T: TensorSet<F>>(&mut self, params: &mut T, grads: &T, lr: f64, config: &TrainConfig) {
        self.steps += 1;
        let (b1, b2) = (config.beta1, config.beta2);
        let c1 = 1.0 - b1.powi(self.steps);
        let c2 = 1.0 - b2.powi(self.steps);
        let step = F::of(lr * c2.sqrt() / c1);
        let eps = F::of(config.adam_eps * c2.sqrt());
        let decay = F::of(1.0 - lr * config.weight_decay);
        let (b1, b2) = (F::of(b1), F::of(b2));
        let (nb1, nb2) = (F::one() - b1, F::one() - b2);
        let grads = grads.tensors();
        for (i, (_, p)) in params.tensors_mut().into_iter().enumerate() {
            let g = grads[i].1;
            ndarray::Zip::from(p)
                .and(g)
                .and(&mut self.first[i])
                .and(&mut self.second[i])
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + nb1 * g;
                    *v = b2 * *v + nb2 * g * g;
                    *p = *p * decay - step * *m / (v.sqrt() + eps);
                });
        }
    }
}

pub fn gradient_norm<F: Real, T: TensorSet<F>>(grads: &T) -> f64 {
    grads
        .tensors()
        .iter()
        .flat_map(|(_, t)| t.iter())
        .map(|g| g.f64() * g.f64())
        .sum::<f64>()
        .sqrt()
}

/// Scales gradients down to `max_norm` and returns the norm before clipping.
pub fn clip_gradients<F: Real, T: TensorSet<F>>(grads: &mut T, max_norm: f64) -> f64 {
    let norm = gradient_norm(grads);
    if norm > max_norm {
        let k = F::of(max_norm / norm);
        for (_, t) in grads.tensors_mut() {
            t.mapv_inplace(|g| g * k);
        }
    }
    norm
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossCurve {
    /// `(step, mean loss since the previous point)`.
    pub points: Vec<(usize, f64)>,
}

impl LossCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (step, loss) in &self.points {
            out.push_str(&format!("{step},{loss}\n"));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn last(&self) -> Option<f64> {
        self.points.last().map(|p| p.1)
    }
}

/// Cycles through the corpus in a fresh seeded order every epoch.
struct BatchStream {
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    seed: u64,
}

impl BatchStream {
    fn new(corpus_len: usize, seed: u64) -> Self {
        let mut s = Self {
            order: (0..corpus_len).collect(),
            cursor: 0,
            epoch: 0,
            seed,
        };
        s.shuffle();
        s
    }

    fn shuffle(&mut self) {
        self.order.sort_unstable();
        self.order.shuffle(&mut derive_rng(self.seed, self.epoch));
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor == self.order.len() {
                self.epoch += 1;
                self.cursor = 0;
                self.shuffle();
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

/// Stepwise masked-LM training; lets callers evaluate between segments.
pub struct Trainer<'a, F> {
    model: MlmModel<F>,
    optimizer: Adam<F>,
    config: TrainConfig,
    policy: MaskingPolicy,
    corpus: &'a [Sequence],
    stream: BatchStream,
    step: usize,
    curve: LossCurve,
    window: (f64, usize),
}

impl<'a, F: Real> Trainer<'a, F> {
    pub fn new(
        model: MlmModel<F>,
        corpus: &'a [Sequence],
        config: TrainConfig,
        policy: MaskingPolicy,
    ) -> Result<Self> {
        config.validate()?;
        policy.validate()?;
        if corpus.is_empty() {
            return Err(Error::invalid("cannot train on an empty corpus"));
        }
        let max = model.config().max_positions;
        if let Some(s) = corpus.iter().find(|s| s.len() > max) {
            return Err(Error::SequenceTooLong { len: s.len(), max });
        }
        let stream = BatchStream::new(corpus.len(), derive_seed(config.seed, domain::DATA_ORDER));
        Ok(Self {
            optimizer: Adam::new(model.params()),
            model,
            config,
            policy,
            corpus,
            stream,
            step: 0,
            curve: LossCurve::default(),
            window: (0.0, 0),
        })
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn model(&self) -> &MlmModel<F> {
        &self.model
    }

    pub fn curve(&self) -> &LossCurve {
        &self.curve
    }

    /// One optimizer step; returns the batch loss.
    pub fn step(&mut self) -> Result<f64> {
        self.step += 1;
        let step = self.step;
        let seed = self.config.seed;
        let indices = self.stream.next(self.config.batch_size);
        let seqs: Vec<&[TokenId]> = indices.iter().map(|&i| self.corpus[i].as_slice()).collect();
        let vocab = self.model.vocab();
        let mut mask_rng = derive_rng(derive_seed(seed, domain::MASKING), step as u64);
        let masked = mask_batch(&seqs, &vocab, &self.policy, &mut mask_rng)?;
        let mut drop_rng: Option<StreamRng> = (self.model.config().dropout > 0.0)
            .then(|| derive_rng(derive_seed(seed, domain::DROPOUT), step as u64));
        let (loss, mut grads) = self.model.loss_and_grad(&masked, drop_rng.as_mut())?;
        let norm = match self.config.clip_norm {
            Some(max) => clip_gradients(&mut grads, max),
            None => gradient_norm(&grads),
        };
        if !loss.value.is_finite() || !norm.is_finite() {
            return Err(Error::Divergence {
                step,
                loss: loss.value,
            });
        }
        let lr = self.config.lr_at(step);
        self.optimizer.step(self.model.params_mut(), &grads, lr, &self.config);

        self.window.0 += loss.value;
        self.window.1 += 1;
        if step % self.config.log_every == 0 || step == self.config.total_steps {
            self.curve.points.push((step, self.window.0 / self.window.1 as f64));
            log::debug!("step {step}: loss {:.4}", self.window.0 / self.window.1 as f64);
            self.window = (0.0, 0);
        }
        Ok(loss.value)
    }

    /// Steps until `target` steps are done (capped at the configured total).
    pub fn train_until(&mut self, target: usize) -> Result<()> {
        while self.step < target.min(self.config.total_steps) {
            self.step()?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<TrainOutcome<F>> {
        self.train_until(self.config.total_steps)?;
        Ok(TrainOutcome {
            model: self.model,
            curve: self.curve,
            steps: self.step,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F> {
    pub model: MlmModel<F>,
    pub curve: LossCurve,
    pub steps: usize,
}

pub fn train<F: Real>(
    model: MlmModel<F>,
    corpus: &[Sequence],
    config: &TrainConfig,
    policy: &MaskingPolicy,
) -> Result<TrainOutcome<F>> {
    Trainer::new(model, corpus, config.clone(), policy.clone())?.finish()
}

/// Held-out scores with one MASK per sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleMaskEval {
    pub mean_loss: f64,
    pub accuracy: f64,
    pub count: usize,
}

/// Picks a uniformly random content position per sequence (seeded by
/// `seed` and the sequence index).
pub fn choose_single_positions(corpus: &[Sequence], seed: u64) -> Vec<usize> {
    corpus
        .iter()
        .enumerate()
        .map(|(i, s)| derive_rng(seed, i as u64).random_range(0..s.len().max(1)))
        .collect()
}

pub fn evaluate_single_mask<F: Real>(
    model: &MlmModel<F>,
    corpus: &[Sequence],
    positions: &[usize],
) -> Result<SingleMaskEval> {
    const CHUNK: usize = 64;
    let vocab = model.vocab();
    let (mut loss, mut correct, mut count) = (0.0, 0usize, 0usize);
    for (seqs, pos) in corpus.chunks(CHUNK).zip(positions.chunks(CHUNK)) {
        let wanted: Vec<Vec<usize>> = pos.iter().map(|&p| vec![p]).collect();
        let masked = mask_positions(seqs, &wanted, &vocab)?;
        let rows = masked.target_rows();
        let log_probs = model.log_probs(&masked.batch, &rows)?;
        for (r, lp) in rows.iter().zip(log_probs.rows()) {
            let target = masked.targets[*r].expect("targeted row") as usize;
            loss -= lp[target].f64();
            let best = lp
                .iter()
                .enumerate()
                .fold((0, F::neg_infinity()), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
                .0;
            correct += (best == target) as usize;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::invalid("nothing to evaluate"));
    }
    Ok(SingleMaskEval {
        mean_loss: loss / count as f64,
        accuracy: correct as f64 / count as f64,
        count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlm::{MlmConfig, Parameters};
    use crate::vocab::Vocabulary;

    fn tiny() -> MlmConfig {
        MlmConfig {
            hidden_dim: 16,
            feedforward_dim: 32,
            max_positions: 16,
            ..MlmConfig::desk(Vocabulary::new(8).unwrap())
        }
    }

    fn corpus() -> Vec<Sequence> {
        (0..40u32).map(|i| (0..10).map(|j| (i + j) % 8).collect()).collect()
    }

    fn short_config() -> TrainConfig {
        TrainConfig {
            batch_size: 8,
            total_steps: 30,
            warmup_steps: 5,
            log_every: 10,
            learning_rate: 3e-3,
            ..TrainConfig::desk()
        }
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let corpus = corpus();
        let run = || {
            let model = MlmModel::<f32>::new(tiny(), 3).unwrap();
            train(model, &corpus, &short_config(), &MaskingPolicy::default()).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.model, b.model);
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.curve.points.iter().map(|p| p.0).collect::<Vec<_>>(), vec![10, 20, 30]);
        assert!(a.curve.points.iter().all(|p| p.1.is_finite()));
        assert!(a.curve.points[2].1 < a.curve.points[0].1, "{:?}", a.curve);
    }

    #[test]
    fn segmented_training_matches_one_shot() {
        let corpus = corpus();
        let model = MlmModel::<f32>::new(tiny(), 3).unwrap();
        let whole = train(model.clone(), &corpus, &short_config(), &MaskingPolicy::default()).unwrap();
        let mut t = Trainer::new(model, &corpus, short_config(), MaskingPolicy::default()).unwrap();
        t.train_until(13).unwrap();
        t.train_until(21).unwrap();
        assert_eq!(t.finish().unwrap().model, whole.model);
    }

    #[test]
    fn empty_corpus_and_long_sequences_rejected() {
        let model = MlmModel::<f32>::new(tiny(), 0).unwrap();
        assert!(train(model.clone(), &[], &short_config(), &MaskingPolicy::default()).is_err());
        let long = vec![vec![1; 17]];
        assert!(matches!(
            train(model, &long, &short_config(), &MaskingPolicy::default()),
            Err(Error::SequenceTooLong { .. })
        ));
    }

    #[test]
    fn divergence_reports_step() {
        let mut model = MlmModel::<f32>::new(tiny(), 0).unwrap();
        model.params_mut().output_bias[[0, 0]] = f32::NAN;
        let err = train(model, &corpus(), &short_config(), &MaskingPolicy::default()).unwrap_err();
        assert!(matches!(err, Error::Divergence { step: 1, .. }), "{err}");
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p: Parameters<f64> = Parameters::init(&tiny(), &mut derive_rng(0, 0));
        let before = p.clone();
        let mut g = p.zeros_like();
        g.output_bias.fill(2.0);
        let mut adam = Adam::new(&p);
        adam.step(&mut p, &g, 0.1, &TrainConfig::desk());
        for (a, b) in p.output_bias.iter().zip(before.output_bias.iter()) {
            approx::assert_abs_diff_eq!(b - a, 0.1, epsilon = 1e-6);
        }
        assert_eq!(p.token_embedding, before.token_embedding);
    }

    #[test]
    fn clipping_caps_norm() {
        let p: Parameters<f64> = Parameters::init(&tiny(), &mut derive_rng(0, 0));
        let mut g = p.clone();
        let before = clip_gradients(&mut g, 1.0);
        assert!(before > 1.0);
        approx::assert_abs_diff_eq!(gradient_norm(&g), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn loss_curve_csv() {
        let c = LossCurve {
            points: vec![(50, 4.0), (100, 3.5)],
        };
        assert_eq!(c.to_csv(), "step,loss\n50,4\n100,3.5\n");
    }
}
