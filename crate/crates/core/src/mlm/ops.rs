use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};

use super::real::Real;

pub(crate) fn add_row<F: Real>(x: &mut Array2<F>, row: &Array2<F>) {
    *x += row;
}

/// Column sums as a `(1, n)` row, the gradient of a broadcast bias.
pub(crate) fn column_sums<F: Real>(x: &Array2<F>) -> Array2<F> {
    x.sum_axis(Axis(0)).insert_axis(Axis(0))
}

/// `x · w + b`.
pub(crate) fn affine<F: Real>(x: &Array2<F>, w: &Array2<F>, b: &Array2<F>) -> Array2<F> {
    let mut y = x.dot(w);
    add_row(&mut y, b);
    y
}

/// Accumulates the weight and bias gradients of `affine` and returns the input gradient.
pub(crate) fn affine_backward<F: Real>(
    x: &Array2<F>,
    w: &Array2<F>,
    dy: &Array2<F>,
    dw: &mut Array2<F>,
    db: &mut Array2<F>,
) -> Array2<F> {
    ndarray::linalg::general_mat_mul(F::one(), &x.t(), dy, F::one(), dw);
    *db += &column_sums(dy);
    dy.dot(&w.t())
}

pub(crate) struct NormCache<F> {
    normalized: Array2<F>,
    inv_std: Array1<F>,
}

pub(crate) fn layer_norm<F: Real>(
    x: &Array2<F>,
    gain: &Array2<F>,
    bias: &Array2<F>,
    eps: f64,
) -> (Array2<F>, NormCache<F>) {
    let d = F::of(x.ncols() as f64);
    let mut normalized = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    Zip::from(normalized.rows_mut())
        .and(&mut inv_std)
        .for_each(|mut row, s| {
            let mean = row.sum() / d;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|&v| v * v).sum::<F>() / d;
            *s = F::one() / (var + F::of(eps)).sqrt();
            let k = *s;
            row.mapv_inplace(|v| v * k);
        });
    let mut y = &normalized * gain;
    add_row(&mut y, bias);
    (y, NormCache { normalized, inv_std })
}

pub(crate) fn layer_norm_backward<F: Real>(
    dy: &Array2<F>,
    cache: &NormCache<F>,
    gain: &Array2<F>,
    dgain: &mut Array2<F>,
    dbias: &mut Array2<F>,
) -> Array2<F> {
    *dgain += &column_sums(&(dy * &cache.normalized));
    *dbias += &column_sums(dy);
    let d = F::of(dy.ncols() as f64);
    let mut dx = dy * gain;
    Zip::from(dx.rows_mut())
        .and(cache.normalized.rows())
        .and(&cache.inv_std)
        .for_each(|mut g, xhat, &s| {
            let mean_g = g.sum() / d;
            let mean_gx = g.iter().zip(xhat).map(|(&a, &b)| a * b).sum::<F>() / d;
            Zip::from(&mut g)
                .and(xhat)
                .for_each(|gi, &xi| *gi = s * (*gi - mean_g - xi * mean_gx));
        });
    dx
}

const GELU_C: f64 = 0.044715;

/// `tanh` through a single `exp`, which is markedly cheaper than the libm call.
#[inline]
fn fast_tanh<F: Real>(x: F, two: F) -> F {
    F::one() - two / ((two * x).exp() + F::one())
}

/// Tanh approximation of GELU. Returns the activation and the inner tanh,
/// which the backward pass reuses.
pub(crate) fn gelu<F: Real>(u: &Array2<F>) -> (Array2<F>, Array2<F>) {
    let k = F::of((2.0 / std::f64::consts::PI).sqrt());
    let c = F::of(GELU_C);
    let half = F::of(0.5);
    let two = F::of(2.0);
    let mut y = Array2::zeros(u.raw_dim());
    let mut t = Array2::zeros(u.raw_dim());
    Zip::from(&mut y).and(&mut t).and(u).for_each(|y, t, &x| {
        *t = fast_tanh(k * (x + c * x * x * x), two);
        *y = half * x * (F::one() + *t);
    });
    (y, t)
}

pub(crate) fn gelu_backward<F: Real>(u: &Array2<F>, t: &Array2<F>, dy: &Array2<F>) -> Array2<F> {
    let k = F::of((2.0 / std::f64::consts::PI).sqrt());
    let c3 = F::of(3.0 * GELU_C);
    let half = F::of(0.5);
    let mut out = dy.clone();
    Zip::from(&mut out).and(u).and(t).for_each(|g, &x, &t| {
        let dt = (F::one() - t * t) * k * (F::one() + c3 * x * x);
        *g = *g * half * (F::one() + t + x * dt);
    });
    out
}

/// Row-wise log-softmax.
pub(crate) fn log_softmax<F: Real>(logits: &mut Array2<F>) {
    for mut row in logits.rows_mut() {
        let max = row.fold(F::neg_infinity(), |m, &v| m.max(v));
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<F>().ln() + max;
        row.mapv_inplace(|v| v - lse);
    }
}

pub(crate) struct AttentionCache<F> {
    /// Softmax weights per (sequence, head), each `(len, len)`.
    probs: Vec<Array2<F>>,
}

/// Multi-head scaled dot-product attention over `batch` sequences of `len`
/// rows each; keys where `valid` is false get zero weight.
pub(crate) fn attention<F: Real>(
    q: &Array2<F>,
    k: &Array2<F>,
    v: &Array2<F>,
    batch: usize,
    len: usize,
    heads: usize,
    valid: &[bool],
) -> (Array2<F>, AttentionCache<F>) {
    let dh = q.ncols() / heads;
    let scale = F::of(1.0 / (dh as f64).sqrt());
    let mut ctx = Array2::zeros(q.raw_dim());
    let mut probs = Vec::with_capacity(batch * heads);
    for b in 0..batch {
        let rows = b * len..(b + 1) * len;
        let keys = &valid[rows.clone()];
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let qb = q.slice(s![rows.clone(), cols.clone()]);
            let kb = k.slice(s![rows.clone(), cols.clone()]);
            let vb = v.slice(s![rows.clone(), cols.clone()]);
            let mut p = qb.dot(&kb.t());
            masked_softmax(&mut p, keys, scale);
            ndarray::linalg::general_mat_mul(
                F::one(),
                &p,
                &vb,
                F::zero(),
                &mut ctx.slice_mut(s![rows.clone(), cols]),
            );
            probs.push(p);
        }
    }
    (ctx, AttentionCache { probs })
}

fn masked_softmax<F: Real>(scores: &mut Array2<F>, keys: &[bool], scale: F) {
    let all_valid = keys.iter().all(|&k| k);
    for mut row in scores.rows_mut() {
        let row = row.as_slice_mut().expect("contiguous rows");
        if !all_valid {
            for (s, &ok) in row.iter_mut().zip(keys) {
                if !ok {
                    *s = F::neg_infinity();
                }
            }
        }
        let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
        if max == F::neg_infinity() {
            row.fill(F::zero());
            continue;
        }
        let mut total = F::zero();
        for s in row.iter_mut() {
            *s = ((*s - max) * scale).exp();
            total += *s;
        }
        let inv = F::one() / total;
        for s in row.iter_mut() {
            *s *= inv;
        }
    }
}

/// Gradients with respect to `q`, `k` and `v`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_backward<F: Real>(
    dctx: &Array2<F>,
    q: &Array2<F>,
    k: &Array2<F>,
    v: &Array2<F>,
    cache: &AttentionCache<F>,
    batch: usize,
    len: usize,
    heads: usize,
) -> (Array2<F>, Array2<F>, Array2<F>) {
    let dh = q.ncols() / heads;
    let scale = F::of(1.0 / (dh as f64).sqrt());
    let mut dq = Array2::zeros(q.raw_dim());
    let mut dk = Array2::zeros(k.raw_dim());
    let mut dv = Array2::zeros(v.raw_dim());
    for b in 0..batch {
        let rows = b * len..(b + 1) * len;
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let p = &cache.probs[b * heads + h];
            let g = dctx.slice(s![rows.clone(), cols.clone()]);
            let qb = q.slice(s![rows.clone(), cols.clone()]);
            let kb = k.slice(s![rows.clone(), cols.clone()]);
            let vb = v.slice(s![rows.clone(), cols.clone()]);
            dv.slice_mut(s![rows.clone(), cols.clone()]).assign(&p.t().dot(&g));
            let mut ds = g.dot(&vb.t());
            softmax_backward_inplace(&mut ds, p, scale);
            dq.slice_mut(s![rows.clone(), cols.clone()]).assign(&ds.dot(&kb));
            dk.slice_mut(s![rows.clone(), cols]).assign(&ds.t().dot(&qb));
        }
    }
    (dq, dk, dv)
}

/// Turns `dL/dp` into `dL/d(raw score)` for `p = softmax(scale * score)`.
fn softmax_backward_inplace<F: Real>(dp: &mut Array2<F>, p: &Array2<F>, scale: F) {
    Zip::from(dp.rows_mut()).and(p.rows()).for_each(|mut g, pr| {
        let dot = g.iter().zip(pr).map(|(&a, &b)| a * b).sum::<F>();
        Zip::from(&mut g).and(pr).for_each(|gi, &pi| *gi = pi * (*gi - dot) * scale);
    });
}

pub(crate) fn gather_rows<F: Real>(x: &Array2<F>, rows: &[usize]) -> Array2<F> {
    x.select(Axis(0), rows)
}

pub(crate) fn scatter_add_rows<F: Real>(target: &mut Array2<F>, rows: &[usize], src: ArrayView2<F>) {
    for (&r, s) in rows.iter().zip(src.rows()) {
        let mut t = target.row_mut(r);
        t += &s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn layer_norm_rows_are_standardized() {
        let x = array![[1.0, 2.0, 3.0, 4.0], [-2.0, 0.0, 0.0, 2.0]];
        let g = Array2::ones((1, 4));
        let b = Array2::zeros((1, 4));
        let (y, _) = layer_norm(&x, &g, &b, 0.0);
        for row in y.rows() {
            assert_abs_diff_eq!(row.sum(), 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(row.iter().map(|v| v * v).sum::<f64>() / 4.0, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn gelu_reference_points() {
        let (y, _) = gelu(&array![[0.0, 1.0, -1.0]]);
        assert_abs_diff_eq!(y[[0, 0]], 0.0);
        assert_abs_diff_eq!(y[[0, 1]], 0.841_191_990_608_276_8, epsilon = 1e-12);
        assert_abs_diff_eq!(y[[0, 2]], -0.158_808_009_391_723_24, epsilon = 1e-12);
    }

    #[test]
    fn gelu_derivative_matches_differences() {
        let u = array![[-2.0, -0.3, 0.0, 0.7, 3.0]];
        let (_, t) = gelu(&u);
        let g = gelu_backward(&u, &t, &Array2::ones((1, 5)));
        let h = 1e-6;
        let f = |x: f64| gelu(&array![[x]]).0[[0, 0]];
        for (i, &x) in u.iter().enumerate() {
            let fd = (f(x + h) - f(x - h)) / (2.0 * h);
            assert_abs_diff_eq!(g[[0, i]], fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn fast_tanh_matches_libm() {
        for i in -400..=400 {
            let x = i as f64 * 0.05;
            assert_abs_diff_eq!(fast_tanh(x, 2.0), x.tanh(), epsilon = 1e-15);
        }
        assert_eq!(fast_tanh(1000.0f32, 2.0), 1.0);
        assert_eq!(fast_tanh(-1000.0f32, 2.0), -1.0);
    }

    #[test]
    fn masked_keys_get_no_weight() {
        let q = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let (_, cache) = attention(&q, &q, &q, 1, 3, 1, &[true, false, true]);
        for row in cache.probs[0].rows() {
            assert_eq!(row[1], 0.0);
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn log_softmax_normalizes() {
        let mut x = array![[1.0, 2.0, 3.0], [1000.0, 1000.0, 0.0]];
        log_softmax(&mut x);
        for row in x.rows() {
            assert_abs_diff_eq!(row.mapv(f64::exp).sum(), 1.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(x[[1, 0]], -(2f64.ln()), epsilon = 1e-12);
    }
}
