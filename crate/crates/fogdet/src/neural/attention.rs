//! Multi-head self-attention over short sequences.
//!
//! The projection weights follow the dense-layer convention: `wq`, `wk`,
//! `wv` are `[heads * head_dim][d_model]`, the output projection `wo` is
//! `[d_model][heads * head_dim]`, and the per-head slices of a projected
//! row are contiguous. Scores are scaled by `1 / sqrt(head_dim)`.

use super::ops::{dense_backward, dense_forward, softmax_rows};
use super::kernels::{axpy, dot};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MhaDims {
    /// Sequence length.
    pub t: usize,
    /// Width of each input/output token.
    pub d_model: usize,
    pub heads: usize,
    pub head_dim: usize,
}

impl MhaDims {
    /// Width of the stacked Q/K/V projections.
    pub fn proj_dim(&self) -> usize {
        self.heads * self.head_dim
    }
}

/// Borrowed parameter slices for one attention layer.
pub struct MhaParams<'a> {
    pub wq: &'a [f64],
    pub bq: &'a [f64],
    pub wk: &'a [f64],
    pub bk: &'a [f64],
    pub wv: &'a [f64],
    pub bv: &'a [f64],
    pub wo: &'a [f64],
    pub bo: &'a [f64],
}

/// Mutable gradient slices matching [`MhaParams`].
pub struct MhaParamsMut<'a> {
    pub wq: &'a mut [f64],
    pub bq: &'a mut [f64],
    pub wk: &'a mut [f64],
    pub bk: &'a mut [f64],
    pub wv: &'a mut [f64],
    pub bv: &'a mut [f64],
    pub wo: &'a mut [f64],
    pub bo: &'a mut [f64],
}

/// Intermediate state carried from forward to backward.
pub struct MhaCache {
    /// `[t][heads * head_dim]` projections.
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// `[heads][t][t]` post-softmax attention weights.
    pub att: Vec<f64>,
    /// `[t][heads * head_dim]` per-head context, pre output projection.
    pub ctx: Vec<f64>,
}

/// Self-attention forward pass. `x` and `y` are `[t][d_model]`.
pub fn mha_forward(x: &[f64], dims: &MhaDims, p: &MhaParams, y: &mut [f64]) -> MhaCache {
    let (t, d, hd) = (dims.t, dims.d_model, dims.head_dim);
    let hp = dims.proj_dim();
    debug_assert_eq!(x.len(), t * d);
    debug_assert_eq!(y.len(), t * d);
    let mut q = vec![0.0; t * hp];
    let mut k = vec![0.0; t * hp];
    let mut v = vec![0.0; t * hp];
    for i in 0..t {
        let row = &x[i * d..(i + 1) * d];
        dense_forward(row, p.wq, p.bq, hp, &mut q[i * hp..(i + 1) * hp]);
        dense_forward(row, p.wk, p.bk, hp, &mut k[i * hp..(i + 1) * hp]);
        dense_forward(row, p.wv, p.bv, hp, &mut v[i * hp..(i + 1) * hp]);
    }

    let scale = 1.0 / (hd as f64).sqrt();
    let mut att = vec![0.0; dims.heads * t * t];
    for h in 0..dims.heads {
        let head = h * hd;
        let block = &mut att[h * t * t..(h + 1) * t * t];
        for i in 0..t {
            let qi = &q[i * hp + head..i * hp + head + hd];
            for j in 0..t {
                let kj = &k[j * hp + head..j * hp + head + hd];
                block[i * t + j] = dot(qi, kj) * scale;
            }
        }
        softmax_rows(block, t);
    }

    let mut ctx = vec![0.0; t * hp];
    for h in 0..dims.heads {
        let head = h * hd;
        let block = &att[h * t * t..(h + 1) * t * t];
        for i in 0..t {
            for j in 0..t {
                let vj = &v[j * hp + head..j * hp + head + hd];
                let slot = &mut ctx[i * hp + head..i * hp + head + hd];
                axpy(block[i * t + j], vj, slot);
            }
        }
    }

    for i in 0..t {
        dense_forward(
            &ctx[i * hp..(i + 1) * hp],
            p.wo,
            p.bo,
            d,
            &mut y[i * d..(i + 1) * d],
        );
    }

    MhaCache { q, k, v, att, ctx }
}

/// Self-attention backward pass; accumulates parameter gradients into `g`
/// and the input gradient into `dx`.
pub fn mha_backward(
    x: &[f64],
    dims: &MhaDims,
    p: &MhaParams,
    cache: &MhaCache,
    dy: &[f64],
    g: &mut MhaParamsMut,
    dx: &mut [f64],
) {
    let (t, d, hd) = (dims.t, dims.d_model, dims.head_dim);
    let hp = dims.proj_dim();
    let scale = 1.0 / (hd as f64).sqrt();

    let mut dctx = vec![0.0; t * hp];
    for i in 0..t {
        dense_backward(
            &cache.ctx[i * hp..(i + 1) * hp],
            p.wo,
            d,
            &dy[i * d..(i + 1) * d],
            g.wo,
            g.bo,
            Some(&mut dctx[i * hp..(i + 1) * hp]),
        );
    }

    let mut dq = vec![0.0; t * hp];
    let mut dk = vec![0.0; t * hp];
    let mut dv = vec![0.0; t * hp];
    let mut da = vec![0.0; t];
    let mut ds = vec![0.0; t];
    for h in 0..dims.heads {
        let head = h * hd;
        let block = &cache.att[h * t * t..(h + 1) * t * t];
        for i in 0..t {
            let dctx_i = &dctx[i * hp + head..i * hp + head + hd];
            for j in 0..t {
                da[j] = dot(dctx_i, &cache.v[j * hp + head..j * hp + head + hd]);
            }
            let arow = &block[i * t..(i + 1) * t];
            // Softmax Jacobian applied to da.
            let pulled = dot(&da, arow);
            for j in 0..t {
                ds[j] = arow[j] * (da[j] - pulled);
            }
            let qi = &cache.q[i * hp + head..i * hp + head + hd];
            for j in 0..t {
                axpy(
                    ds[j] * scale,
                    &cache.k[j * hp + head..j * hp + head + hd],
                    &mut dq[i * hp + head..i * hp + head + hd],
                );
                axpy(ds[j] * scale, qi, &mut dk[j * hp + head..j * hp + head + hd]);
                axpy(arow[j], dctx_i, &mut dv[j * hp + head..j * hp + head + hd]);
            }
        }
    }

    for i in 0..t {
        let row = &x[i * d..(i + 1) * d];
        let dxi = &mut dx[i * d..(i + 1) * d];
        dense_backward(row, p.wq, hp, &dq[i * hp..(i + 1) * hp], g.wq, g.bq, Some(&mut *dxi));
        dense_backward(row, p.wk, hp, &dk[i * hp..(i + 1) * hp], g.wk, g.bk, Some(&mut *dxi));
        dense_backward(row, p.wv, hp, &dv[i * hp..(i + 1) * hp], g.wv, g.bv, Some(&mut *dxi));
    }
}
