use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::MlmConfig;
use super::real::Real;

/// Named view over every trainable tensor of a model, in a fixed order.
pub trait TensorSet<F> {
    fn tensors(&self) -> Vec<(String, &Array2<F>)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Array2<F>)>;

    fn scalar_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// One pre-norm encoder block. Weight matrices are `(in, out)`; biases and
/// norm parameters are `(1, n)` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<F> {
    pub attn_norm_gain: Array2<F>,
    pub attn_norm_bias: Array2<F>,
    pub query_weight: Array2<F>,
    pub query_bias: Array2<F>,
    pub key_weight: Array2<F>,
    pub key_bias: Array2<F>,
    pub value_weight: Array2<F>,
    pub value_bias: Array2<F>,
    pub attn_out_weight: Array2<F>,
    pub attn_out_bias: Array2<F>,
    pub ffn_norm_gain: Array2<F>,
    pub ffn_norm_bias: Array2<F>,
    pub ffn_in_weight: Array2<F>,
    pub ffn_in_bias: Array2<F>,
    pub ffn_out_weight: Array2<F>,
    pub ffn_out_bias: Array2<F>,
}

macro_rules! layer_fields {
    ($self:expr, $wrap:ident) => {
        vec![
            ("attn_norm_gain", $wrap!($self.attn_norm_gain)),
            ("attn_norm_bias", $wrap!($self.attn_norm_bias)),
            ("query_weight", $wrap!($self.query_weight)),
            ("query_bias", $wrap!($self.query_bias)),
            ("key_weight", $wrap!($self.key_weight)),
            ("key_bias", $wrap!($self.key_bias)),
            ("value_weight", $wrap!($self.value_weight)),
            ("value_bias", $wrap!($self.value_bias)),
            ("attn_out_weight", $wrap!($self.attn_out_weight)),
            ("attn_out_bias", $wrap!($self.attn_out_bias)),
            ("ffn_norm_gain", $wrap!($self.ffn_norm_gain)),
            ("ffn_norm_bias", $wrap!($self.ffn_norm_bias)),
            ("ffn_in_weight", $wrap!($self.ffn_in_weight)),
            ("ffn_in_bias", $wrap!($self.ffn_in_bias)),
            ("ffn_out_weight", $wrap!($self.ffn_out_weight)),
            ("ffn_out_bias", $wrap!($self.ffn_out_bias)),
        ]
    };
}

macro_rules! by_ref {
    ($e:expr) => {
        &$e
    };
}

macro_rules! by_mut {
    ($e:expr) => {
        &mut $e
    };
}

impl<F: Real> LayerParams<F> {
    fn init<R: Rng + ?Sized>(config: &MlmConfig, rng: &mut R) -> Self {
        let (d, f) = (config.hidden_dim, config.feedforward_dim);
        let mut w = |rows, cols| normal(rows, cols, config.init_std, rng);
        Self {
            attn_norm_gain: Array2::ones((1, d)),
            attn_norm_bias: Array2::zeros((1, d)),
            query_weight: w(d, d),
            query_bias: Array2::zeros((1, d)),
            key_weight: w(d, d),
            key_bias: Array2::zeros((1, d)),
            value_weight: w(d, d),
            value_bias: Array2::zeros((1, d)),
            attn_out_weight: w(d, d),
            attn_out_bias: Array2::zeros((1, d)),
            ffn_norm_gain: Array2::ones((1, d)),
            ffn_norm_bias: Array2::zeros((1, d)),
            ffn_in_weight: w(d, f),
            ffn_in_bias: Array2::zeros((1, f)),
            ffn_out_weight: w(f, d),
            ffn_out_bias: Array2::zeros((1, d)),
        }
    }

    pub fn fields(&self) -> Vec<(&'static str, &Array2<F>)> {
        layer_fields!(self, by_ref)
    }

    pub fn fields_mut(&mut self) -> Vec<(&'static str, &mut Array2<F>)> {
        layer_fields!(self, by_mut)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<F> {
    /// `(vocab, hidden)`; doubles as the output projection when tied.
    pub token_embedding: Array2<F>,
    pub position_embedding: Array2<F>,
    pub layers: Vec<LayerParams<F>>,
    pub final_norm_gain: Array2<F>,
    pub final_norm_bias: Array2<F>,
    /// `(vocab, hidden)` output projection, present only when untied.
    pub output_weight: Option<Array2<F>>,
    pub output_bias: Array2<F>,
}

impl<F: Real> Parameters<F> {
    pub fn init<R: Rng + ?Sized>(config: &MlmConfig, rng: &mut R) -> Self {
        let (v, d) = (config.vocab_size, config.hidden_dim);
        let token_embedding = normal(v, d, config.init_std, rng);
        let position_embedding = normal(config.max_positions, d, config.init_std, rng);
        let layers = (0..config.num_layers)
            .map(|_| LayerParams::init(config, rng))
            .collect();
        let output_weight =
            (!config.tied_embeddings).then(|| normal(v, d, config.init_std, rng));
        Self {
            token_embedding,
            position_embedding,
            layers,
            final_norm_gain: Array2::ones((1, d)),
            final_norm_bias: Array2::zeros((1, d)),
            output_weight,
            output_bias: Array2::zeros((1, v)),
        }
    }

    /// Output projection rows, one per vocabulary id.
    pub fn output_projection(&self) -> &Array2<F> {
        self.output_weight.as_ref().unwrap_or(&self.token_embedding)
    }

    pub fn zeros_like(&self) -> Self {
        let z = |a: &Array2<F>| Array2::zeros(a.raw_dim());
        let mut out = self.clone();
        for (_, t) in out.tensors_mut() {
            *t = z(t);
        }
        out
    }

    pub fn cast<G: Real>(&self) -> Parameters<G> {
        let c = |a: &Array2<F>| a.mapv(|x| G::of(x.f64()));
        Parameters {
            token_embedding: c(&self.token_embedding),
            position_embedding: c(&self.position_embedding),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    attn_norm_gain: c(&l.attn_norm_gain),
                    attn_norm_bias: c(&l.attn_norm_bias),
                    query_weight: c(&l.query_weight),
                    query_bias: c(&l.query_bias),
                    key_weight: c(&l.key_weight),
                    key_bias: c(&l.key_bias),
                    value_weight: c(&l.value_weight),
                    value_bias: c(&l.value_bias),
                    attn_out_weight: c(&l.attn_out_weight),
                    attn_out_bias: c(&l.attn_out_bias),
                    ffn_norm_gain: c(&l.ffn_norm_gain),
                    ffn_norm_bias: c(&l.ffn_norm_bias),
                    ffn_in_weight: c(&l.ffn_in_weight),
                    ffn_in_bias: c(&l.ffn_in_bias),
                    ffn_out_weight: c(&l.ffn_out_weight),
                    ffn_out_bias: c(&l.ffn_out_bias),
                })
                .collect(),
            final_norm_gain: c(&self.final_norm_gain),
            final_norm_bias: c(&self.final_norm_bias),
            output_weight: self.output_weight.as_ref().map(c),
            output_bias: c(&self.output_bias),
        }
    }
}

impl<F: Real> TensorSet<F> for Parameters<F> {
    fn tensors(&self) -> Vec<(String, &Array2<F>)> {
        let mut out = vec![
            ("token_embedding".to_string(), &self.token_embedding),
            ("position_embedding".to_string(), &self.position_embedding),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            out.extend(layer.fields().into_iter().map(|(n, t)| (format!("layers.{i}.{n}"), t)));
        }
        out.push(("final_norm_gain".into(), &self.final_norm_gain));
        out.push(("final_norm_bias".into(), &self.final_norm_bias));
        if let Some(w) = &self.output_weight {
            out.push(("output_weight".into(), w));
        }
        out.push(("output_bias".into(), &self.output_bias));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Array2<F>)> {
        let mut out = vec![
            ("token_embedding".to_string(), &mut self.token_embedding),
            ("position_embedding".to_string(), &mut self.position_embedding),
        ];
        for (i, layer) in self.layers.iter_mut().enumerate() {
            out.extend(
                layer
                    .fields_mut()
                    .into_iter()
                    .map(|(n, t)| (format!("layers.{i}.{n}"), t)),
            );
        }
        out.push(("final_norm_gain".into(), &mut self.final_norm_gain));
        out.push(("final_norm_bias".into(), &mut self.final_norm_bias));
        if let Some(w) = &mut self.output_weight {
            out.push(("output_weight".into(), w));
        }
        out.push(("output_bias".into(), &mut self.output_bias));
        out
    }
}

pub(crate) fn normal<F: Real, R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Array2<F> {
    let dist = Normal::new(0.0, std).expect("non-negative std");
    Array2::from_shape_simple_fn((rows, cols), || F::of(dist.sample(rng)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use crate::vocab::Vocabulary;

    #[test]
    fn count_matches_closed_form() {
        for tied in [true, false] {
            let config = MlmConfig {
                tied_embeddings: tied,
                ..MlmConfig::desk(Vocabulary::desk())
            };
            let p: Parameters<f32> = Parameters::init(&config, &mut derive_rng(0, 0));
            assert_eq!(p.scalar_count(), config.parameter_count());
        }
        let tied = MlmConfig::default();
        // 69*64 + 128*64 + 2*(4*(64*64+64) + (64*256+256) + (256*64+64) + 4*64) + 2*64 + 69
        assert_eq!(tied.parameter_count(), 112_773);
    }

    #[test]
    fn names_are_unique_and_ordered() {
        let p: Parameters<f64> = Parameters::init(&MlmConfig::default(), &mut derive_rng(0, 0));
        let names: Vec<String> = p.tensors().into_iter().map(|(n, _)| n).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        assert_eq!(names[2], "layers.0.attn_norm_gain");
        assert_eq!(names.last().unwrap(), "output_bias");
    }

    #[test]
    fn cast_round_trips_through_f64() {
        let p: Parameters<f32> = Parameters::init(&MlmConfig::default(), &mut derive_rng(1, 0));
        assert_eq!(p.cast::<f64>().cast::<f32>(), p);
    }
}
