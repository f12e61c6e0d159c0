use ndarray::Array2;
use rand::Rng;

use super::config::MlmConfig;
use super::ops::{self, AttentionCache, NormCache};
use super::params::Parameters;
use super::real::Real;
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::vocab::{TokenId, Vocabulary};

/// Sequences right-padded to a common length, flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub ids: Vec<TokenId>,
    /// False at padding, which no position may attend to.
    pub valid: Vec<bool>,
    pub size: usize,
    pub len: usize,
}

impl Batch {
    /// Pads with PAD; PAD tokens already present are treated as padding too.
    pub fn from_sequences<S: AsRef<[TokenId]>>(sequences: &[S], vocab: &Vocabulary) -> Result<Self> {
        let len = sequences.iter().map(|s| s.as_ref().len()).max().unwrap_or(0);
        let pad = vocab.pad();
        let mut ids = Vec::with_capacity(sequences.len() * len);
        for seq in sequences {
            let seq = seq.as_ref();
            if let Some(&t) = seq.iter().find(|&&t| !vocab.contains(t)) {
                return Err(Error::invalid(format!(
                    "token {t} outside a vocabulary of {}",
                    vocab.total_size()
                )));
            }
            ids.extend_from_slice(seq);
            ids.extend(std::iter::repeat_n(pad, len - seq.len()));
        }
        let valid = ids.iter().map(|&t| t != pad).collect();
        Ok(Self {
            ids,
            valid,
            size: sequences.len(),
            len,
        })
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    /// Flat row index of `pos` in sequence `seq`.
    pub fn row(&self, seq: usize, pos: usize) -> usize {
        seq * self.len + pos
    }
}

struct LayerCache<F> {
    attn_norm: NormCache<F>,
    attn_in: Array2<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    attn: AttentionCache<F>,
    ctx: Array2<F>,
    attn_drop: Option<Array2<F>>,
    ffn_norm: NormCache<F>,
    ffn_in: Array2<F>,
    pre_act: Array2<F>,
    act_tanh: Array2<F>,
    act: Array2<F>,
    ffn_drop: Option<Array2<F>>,
}

/// Activations kept by `encode` for `encode_backward`.
pub struct EncoderCache<F> {
    embed_drop: Option<Array2<F>>,
    layers: Vec<LayerCache<F>>,
    final_norm: NormCache<F>,
}

fn dropout_mask<F: Real>(rows: usize, cols: usize, rate: f64, rng: &mut StreamRng) -> Array2<F> {
    let keep = F::of(1.0 / (1.0 - rate));
    Array2::from_shape_simple_fn((rows, cols), || {
        if rng.random::<f64>() < rate {
            F::zero()
        } else {
            keep
        }
    })
}

fn apply_dropout<F: Real>(
    x: &mut Array2<F>,
    rate: f64,
    rng: &mut Option<&mut StreamRng>,
) -> Option<Array2<F>> {
    let rng = rng.as_deref_mut().filter(|_| rate > 0.0)?;
    let mask = dropout_mask(x.nrows(), x.ncols(), rate, rng);
    *x *= &mask;
    Some(mask)
}

/// Final hidden states `(rows, hidden)`. Dropout is active only when an RNG
/// is supplied.
pub fn encode<F: Real>(
    config: &MlmConfig,
    params: &Parameters<F>,
    batch: &Batch,
    mut dropout: Option<&mut StreamRng>,
) -> Result<(Array2<F>, EncoderCache<F>)> {
    if batch.len > config.max_positions {
        return Err(Error::SequenceTooLong {
            len: batch.len,
            max: config.max_positions,
        });
    }
    if let Some(&t) = batch.ids.iter().find(|&&t| t as usize >= config.vocab_size) {
        return Err(Error::invalid(format!(
            "token {t} outside a vocabulary of {}",
            config.vocab_size
        )));
    }
    let (n, d, heads) = (batch.rows(), config.hidden_dim, config.num_heads);
    let mut x = Array2::zeros((n, d));
    for (r, mut row) in x.rows_mut().into_iter().enumerate() {
        row.assign(&params.token_embedding.row(batch.ids[r] as usize));
        row += &params.position_embedding.row(r % batch.len.max(1));
    }
    let embed_drop = apply_dropout(&mut x, config.dropout, &mut dropout);

    let mut layers = Vec::with_capacity(params.layers.len());
    for p in &params.layers {
        let (attn_in, attn_norm) =
            ops::layer_norm(&x, &p.attn_norm_gain, &p.attn_norm_bias, config.layer_norm_eps);
        let q = ops::affine(&attn_in, &p.query_weight, &p.query_bias);
        let k = ops::affine(&attn_in, &p.key_weight, &p.key_bias);
        let v = ops::affine(&attn_in, &p.value_weight, &p.value_bias);
        let (ctx, attn) = ops::attention(&q, &k, &v, batch.size, batch.len, heads, &batch.valid);
        let mut branch = ops::affine(&ctx, &p.attn_out_weight, &p.attn_out_bias);
        let attn_drop = apply_dropout(&mut branch, config.dropout, &mut dropout);
        x += &branch;

        let (ffn_in, ffn_norm) =
            ops::layer_norm(&x, &p.ffn_norm_gain, &p.ffn_norm_bias, config.layer_norm_eps);
        let pre_act = ops::affine(&ffn_in, &p.ffn_in_weight, &p.ffn_in_bias);
        let (act, act_tanh) = ops::gelu(&pre_act);
        let mut branch = ops::affine(&act, &p.ffn_out_weight, &p.ffn_out_bias);
        let ffn_drop = apply_dropout(&mut branch, config.dropout, &mut dropout);
        x += &branch;

        layers.push(LayerCache {
            attn_norm,
            attn_in,
            q,
            k,
            v,
            attn,
            ctx,
            attn_drop,
            ffn_norm,
            ffn_in,
            pre_act,
            act_tanh,
            act,
            ffn_drop,
        });
    }
    let (hidden, final_norm) = ops::layer_norm(
        &x,
        &params.final_norm_gain,
        &params.final_norm_bias,
        config.layer_norm_eps,
    );
    Ok((
        hidden,
        EncoderCache {
            embed_drop,
            layers,
            final_norm,
        },
    ))
}

/// Accumulates into `grads` the gradient flowing from `d_hidden`, the loss
/// gradient with respect to `encode`'s output.
pub fn encode_backward<F: Real>(
    config: &MlmConfig,
    params: &Parameters<F>,
    batch: &Batch,
    cache: EncoderCache<F>,
    d_hidden: &Array2<F>,
    grads: &mut Parameters<F>,
) {
    let heads = config.num_heads;
    let mut dx = ops::layer_norm_backward(
        d_hidden,
        &cache.final_norm,
        &params.final_norm_gain,
        &mut grads.final_norm_gain,
        &mut grads.final_norm_bias,
    );
    for ((p, g), c) in params
        .layers
        .iter()
        .zip(grads.layers.iter_mut())
        .zip(cache.layers)
        .rev()
    {
        let mut d_branch = dx.clone();
        if let Some(mask) = &c.ffn_drop {
            d_branch *= mask;
        }
        let d_act = ops::affine_backward(
            &c.act,
            &p.ffn_out_weight,
            &d_branch,
            &mut g.ffn_out_weight,
            &mut g.ffn_out_bias,
        );
        let d_pre = ops::gelu_backward(&c.pre_act, &c.act_tanh, &d_act);
        let d_ffn_in = ops::affine_backward(
            &c.ffn_in,
            &p.ffn_in_weight,
            &d_pre,
            &mut g.ffn_in_weight,
            &mut g.ffn_in_bias,
        );
        dx += &ops::layer_norm_backward(
            &d_ffn_in,
            &c.ffn_norm,
            &p.ffn_norm_gain,
            &mut g.ffn_norm_gain,
            &mut g.ffn_norm_bias,
        );

        let mut d_branch = dx.clone();
        if let Some(mask) = &c.attn_drop {
            d_branch *= mask;
        }
        let d_ctx = ops::affine_backward(
            &c.ctx,
            &p.attn_out_weight,
            &d_branch,
            &mut g.attn_out_weight,
            &mut g.attn_out_bias,
        );
        let (dq, dk, dv) = ops::attention_backward(
            &d_ctx, &c.q, &c.k, &c.v, &c.attn, batch.size, batch.len, heads,
        );
        let mut d_attn_in =
            ops::affine_backward(&c.attn_in, &p.query_weight, &dq, &mut g.query_weight, &mut g.query_bias);
        d_attn_in += &ops::affine_backward(&c.attn_in, &p.key_weight, &dk, &mut g.key_weight, &mut g.key_bias);
        d_attn_in +=
            &ops::affine_backward(&c.attn_in, &p.value_weight, &dv, &mut g.value_weight, &mut g.value_bias);
        dx += &ops::layer_norm_backward(
            &d_attn_in,
            &c.attn_norm,
            &p.attn_norm_gain,
            &mut g.attn_norm_gain,
            &mut g.attn_norm_bias,
        );
    }
    if let Some(mask) = &cache.embed_drop {
        dx *= mask;
    }
    for (r, row) in dx.rows().into_iter().enumerate() {
        let mut t = grads.token_embedding.row_mut(batch.ids[r] as usize);
        t += &row;
        let mut p = grads.position_embedding.row_mut(r % batch.len);
        p += &row;
    }
}

/// Vocabulary logits for a set of hidden rows.
pub fn output_logits<F: Real>(params: &Parameters<F>, hidden: &Array2<F>) -> Array2<F> {
    let mut logits = hidden.dot(&params.output_projection().t());
    ops::add_row(&mut logits, &params.output_bias);
    logits
}

/// Accumulates projection gradients and returns the gradient for `hidden`.
pub fn output_backward<F: Real>(
    params: &Parameters<F>,
    hidden: &Array2<F>,
    d_logits: &Array2<F>,
    grads: &mut Parameters<F>,
) -> Array2<F> {
    let dw = match grads.output_weight.as_mut() {
        Some(w) => w,
        None => &mut grads.token_embedding,
    };
    ndarray::linalg::general_mat_mul(F::one(), &d_logits.t(), hidden, F::one(), dw);
    grads.output_bias += &ops::column_sums(d_logits);
    d_logits.dot(params.output_projection())
}
