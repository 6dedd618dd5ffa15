//! Forward and backward passes for the individual layer types.
//!
//! Backward functions *accumulate* into the gradient buffers they are given
//! (`+=`), so callers zero them once per optimization step and can feed
//! several samples through the same buffers. `dx` parameters are optional
//! where the input gradient is sometimes not needed (first layer of a
//! model).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::kernels::{axpy, dot};

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` inside the
/// cross-entropy so saturated sigmoids cannot produce infinities.
pub const BCE_CLAMP: f64 = 1e-7;

/// Variance floor inside layer normalization.
pub const LN_EPSILON: f64 = 1e-6;

/// Valid cross-correlation with stride 1.
///
/// `x` is `[l_in][c_in]` row-major, `w` is `[c_out][k * c_in]`, and `y` must
/// hold `(l_in - k + 1) * c_out` values. Because `x` rows are contiguous,
/// every output element is a single dot product of length `k * c_in`.
pub fn conv1d_forward(x: &[f64], c_in: usize, w: &[f64], b: &[f64], c_out: usize, k: usize, y: &mut [f64]) {
    let l_in = x.len() / c_in;
    debug_assert_eq!(x.len(), l_in * c_in);
    debug_assert_eq!(w.len(), c_out * k * c_in);
    debug_assert_eq!(b.len(), c_out);
    let l_out = l_in + 1 - k;
    debug_assert_eq!(y.len(), l_out * c_out);
    let span = k * c_in;
    for l in 0..l_out {
        let window = &x[l * c_in..l * c_in + span];
        let row = &mut y[l * c_out..(l + 1) * c_out];
        for (co, out) in row.iter_mut().enumerate() {
            *out = dot(window, &w[co * span..(co + 1) * span]) + b[co];
        }
    }
}

/// Gradients of [`conv1d_forward`]: accumulates into `dw`, `db` and, when
/// given, `dx`.
pub fn conv1d_backward(
    x: &[f64],
    c_in: usize,
    w: &[f64],
    c_out: usize,
    k: usize,
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    mut dx: Option<&mut [f64]>,
) {
    let l_in = x.len() / c_in;
    let l_out = l_in + 1 - k;
    let span = k * c_in;
    debug_assert_eq!(dy.len(), l_out * c_out);
    debug_assert_eq!(dw.len(), c_out * span);
    debug_assert_eq!(db.len(), c_out);
    if let Some(dx) = dx.as_deref() {
        debug_assert_eq!(dx.len(), x.len());
    }
    for l in 0..l_out {
        let window = &x[l * c_in..l * c_in + span];
        let grads = &dy[l * c_out..(l + 1) * c_out];
        for (co, &g) in grads.iter().enumerate() {
            axpy(g, window, &mut dw[co * span..(co + 1) * span]);
            db[co] += g;
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dwindow = &mut dx[l * c_in..l * c_in + span];
            for (co, &g) in grads.iter().enumerate() {
                axpy(g, &w[co * span..(co + 1) * span], dwindow);
            }
        }
    }
}

/// Max pooling with pool size 2 and stride 2 over the position axis,
/// channels independent. A trailing odd position is dropped. `switches`
/// records which of the two candidates won (0 = first; ties keep the first).
pub fn maxpool1d_forward(x: &[f64], c: usize, y: &mut [f64], switches: &mut [u8]) {
    let l_in = x.len() / c;
    let l_out = l_in / 2;
    debug_assert_eq!(y.len(), l_out * c);
    debug_assert_eq!(switches.len(), l_out * c);
    for l in 0..l_out {
        for ch in 0..c {
            let a = x[2 * l * c + ch];
            let b = x[(2 * l + 1) * c + ch];
            let pick_second = b > a;
            y[l * c + ch] = if pick_second { b } else { a };
            switches[l * c + ch] = pick_second as u8;
        }
    }
}

/// Routes gradients back through the recorded pooling switches; accumulates
/// into `dx`.
pub fn maxpool1d_backward(dy: &[f64], c: usize, switches: &[u8], dx: &mut [f64]) {
    let l_out = dy.len() / c;
    debug_assert_eq!(switches.len(), dy.len());
    for l in 0..l_out {
        for ch in 0..c {
            let src = (2 * l + switches[l * c + ch] as usize) * c + ch;
            dx[src] += dy[l * c + ch];
        }
    }
}

/// Mean over the position axis: `[l][c]` collapses to `[c]`.
pub fn gap_forward(x: &[f64], c: usize, y: &mut [f64]) {
    let l_in = x.len() / c;
    debug_assert!(l_in > 0);
    debug_assert_eq!(y.len(), c);
    y.fill(0.0);
    for row in x.chunks_exact(c) {
        for (acc, v) in y.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let inv = 1.0 / l_in as f64;
    for v in y.iter_mut() {
        *v *= inv;
    }
}

/// Gradient of [`gap_forward`]; accumulates `dy / l_in` into every position.
pub fn gap_backward(dy: &[f64], c: usize, l_in: usize, dx: &mut [f64]) {
    debug_assert_eq!(dy.len(), c);
    debug_assert_eq!(dx.len(), l_in * c);
    let inv = 1.0 / l_in as f64;
    for row in dx.chunks_exact_mut(c) {
        for (d, g) in row.iter_mut().zip(dy) {
            *d += g * inv;
        }
    }
}

/// Fully connected layer: `y = W x + b` with `W` stored `[output][input]`.
pub fn dense_forward(x: &[f64], w: &[f64], b: &[f64], n_out: usize, y: &mut [f64]) {
    let n_in = x.len();
    debug_assert_eq!(w.len(), n_out * n_in);
    debug_assert_eq!(b.len(), n_out);
    debug_assert_eq!(y.len(), n_out);
    for (o, out) in y.iter_mut().enumerate() {
        *out = dot(&w[o * n_in..(o + 1) * n_in], x) + b[o];
    }
}

/// Gradients of [`dense_forward`]; accumulates into `dw`, `db`, and `dx`.
pub fn dense_backward(
    x: &[f64],
    w: &[f64],
    n_out: usize,
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    mut dx: Option<&mut [f64]>,
) {
    let n_in = x.len();
    debug_assert_eq!(dy.len(), n_out);
    for (o, &g) in dy.iter().enumerate() {
        axpy(g, x, &mut dw[o * n_in..(o + 1) * n_in]);
        db[o] += g;
        if let Some(dx) = dx.as_deref_mut() {
            axpy(g, &w[o * n_in..(o + 1) * n_in], dx);
        }
    }
}

/// In-place rectifier.
pub fn relu(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Masks `grad` where the rectifier was inactive. Uses the *activated*
/// values, so the derivative at exactly zero is zero.
pub fn relu_backward(activated: &[f64], grad: &mut [f64]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Numerically stable logistic function; saturates to exactly 0 or 1 far
/// from the origin instead of producing NaN.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-call state layer-norm backward needs.
#[derive(Debug, Clone, Copy)]
pub struct LayerNormCache {
    pub mean: f64,
    pub inv_std: f64,
}

/// Normalizes one feature vector to zero mean and unit variance (population
/// variance, floored by [`LN_EPSILON`]), then applies the learned affine
/// map: `y = gamma * x_hat + beta`.
pub fn layer_norm_forward(x: &[f64], gamma: &[f64], beta: &[f64], y: &mut [f64]) -> LayerNormCache {
    let n = x.len();
    debug_assert!(n > 0);
    debug_assert_eq!(gamma.len(), n);
    debug_assert_eq!(beta.len(), n);
    debug_assert_eq!(y.len(), n);
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let inv_std = 1.0 / (var + LN_EPSILON).sqrt();
    for i in 0..n {
        y[i] = gamma[i] * (x[i] - mean) * inv_std + beta[i];
    }
    LayerNormCache { mean, inv_std }
}

/// Gradients of [`layer_norm_forward`]; accumulates into `dgamma`, `dbeta`,
/// and `dx`.
pub fn layer_norm_backward(
    x: &[f64],
    gamma: &[f64],
    cache: LayerNormCache,
    dy: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
    dx: &mut [f64],
) {
    let n = x.len();
    let inv_n = 1.0 / n as f64;
    let mut sum_dxhat = 0.0;
    let mut sum_dxhat_xhat = 0.0;
    for i in 0..n {
        let xhat = (x[i] - cache.mean) * cache.inv_std;
        let dxhat = dy[i] * gamma[i];
        dgamma[i] += dy[i] * xhat;
        dbeta[i] += dy[i];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
    }
    for i in 0..n {
        let xhat = (x[i] - cache.mean) * cache.inv_std;
        let dxhat = dy[i] * gamma[i];
        dx[i] += cache.inv_std * (dxhat - inv_n * sum_dxhat - xhat * inv_n * sum_dxhat_xhat);
    }
}

/// Row-wise softmax over a `[rows][cols]` matrix, in place, with the usual
/// max-shift so large scores cannot overflow.
pub fn softmax_rows(x: &mut [f64], cols: usize) {
    debug_assert!(cols > 0 && x.len() % cols == 0);
    for row in x.chunks_exact_mut(cols) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = 1.0 / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

/// Inverted-dropout mask: each element is `0` with probability `rate`,
/// otherwise `1 / (1 - rate)`, so the expected value of `x * mask` equals
/// `x`. Inference skips the mask entirely; this is only for training.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    assert!((0.0..1.0).contains(&rate), "dropout rate {rate} outside [0, 1)");
    if rate == 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

/// Binary cross-entropy of a predicted probability against a 0/1 target,
/// clamped by [`BCE_CLAMP`].
pub fn bce_loss(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Derivative of [`bce_loss`] with respect to `p`; zero in the clamped
/// regions where the loss is flat.
pub fn bce_grad(p: f64, y: f64) -> f64 {
    if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) {
        return 0.0;
    }
    (p - y) / (p * (1.0 - p))
}
