//! The sequence classifier: one convolutional embedder shared across all
//! spectral time steps, a stack of pre-norm self-attention blocks, average
//! pooling over time, and a dense head ending in a sigmoid.
//!
//! A model is a [`FogTransformer`] (architecture plus a parameter layout)
//! and a flat `Vec<f64>` of weights. Keeping the weights external makes
//! finite-difference checking, ADAM updates, and serialization all operate
//! on one contiguous vector with named ranges into it.

mod archive;

pub use archive::{
    load_weights, load_weights_expecting, save_weights, ArchiveManifest, ManifestLayer,
};

use std::ops::Range;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{
    bce_loss, conv1d_backward, conv1d_forward, dense_backward, dense_forward,
    dropout_mask, gap_backward, gap_forward, glorot_uniform, layer_norm_backward,
    layer_norm_forward, maxpool1d_backward, maxpool1d_forward, mha_backward, mha_forward, relu,
    relu_backward, sigmoid, LayerNormCache, MhaCache, MhaDims, MhaParams, MhaParamsMut, Model,
    BCE_CLAMP,
};
use crate::seed::SeedStream;
use crate::windows::{SpectralSequence, STEP_LEN};

/// Frequency bins per time step.
const BINS: usize = 64;
/// Acceleration channels per time step.
const CHANNELS: usize = 3;

/// Architecture hyperparameters. [`FogTransformerConfig::standard`] is the
/// deployed shape; everything is explicit so tests can build miniatures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FogTransformerConfig {
    /// Previous windows included per sample; the sequence length is
    /// `n_prev + 1`.
    pub n_prev: usize,
    /// Channels produced by the three convolution layers; the last is the
    /// token width everywhere downstream.
    pub conv_filters: [usize; 3],
    pub conv_kernel: usize,
    /// Self-attention blocks stacked after the embedder.
    pub n_blocks: usize,
    pub n_heads: usize,
    pub head_size: usize,
    /// Hidden width of each block's position-wise feed-forward stage.
    pub ff_dim: usize,
    /// Hidden widths of the two dense layers before the output unit.
    pub head_units: [usize; 2],
    /// Dropout rate inside encoder blocks.
    pub attn_dropout: f64,
    /// Dropout rate between head layers.
    pub head_dropout: f64,
}

impl FogTransformerConfig {
    /// The deployed architecture for a given history length.
    pub fn standard(n_prev: usize) -> Result<Self> {
        let cfg = FogTransformerConfig {
            n_prev,
            conv_filters: [128, 64, 32],
            conv_kernel: 4,
            n_blocks: 3,
            n_heads: 3,
            head_size: 32,
            ff_dim: 16,
            head_units: [80, 40],
            attn_dropout: 0.25,
            head_dropout: 0.4,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// A tiny variant for exhaustive gradient checking: every layer type is
    /// present but the parameter vector is small enough to perturb
    /// coordinate by coordinate.
    pub fn miniature() -> Self {
        FogTransformerConfig {
            n_prev: 1,
            conv_filters: [8, 8, 8],
            conv_kernel: 4,
            n_blocks: 1,
            n_heads: 2,
            head_size: 4,
            ff_dim: 4,
            head_units: [8, 4],
            attn_dropout: 0.25,
            head_dropout: 0.4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.n_prev) {
            return Err(Error::validation(format!(
                "n_prev must be 1, 2, or 3, got {}",
                self.n_prev
            )));
        }
        if self.conv_filters.iter().any(|&f| f == 0)
            || self.n_blocks == 0
            || self.n_heads == 0
            || self.head_size == 0
            || self.ff_dim == 0
            || self.head_units.iter().any(|&u| u == 0)
        {
            return Err(Error::validation(
                "all layer sizes must be positive".to_string(),
            ));
        }
        if !(0.0..1.0).contains(&self.attn_dropout) || !(0.0..1.0).contains(&self.head_dropout) {
            return Err(Error::validation(
                "dropout rates must lie in [0, 1)".to_string(),
            ));
        }
        conv_chain(self.conv_kernel)?;
        Ok(())
    }
}

/// Position counts along the per-step convolution tower.
#[derive(Debug, Clone, Copy)]
struct ConvChain {
    /// After conv1 (valid, stride 1).
    l1: usize,
    /// After the first pool (size 2, stride 2).
    p1: usize,
    l2: usize,
    p2: usize,
    /// After conv3; averaged away by the per-step pooling.
    l3: usize,
}

fn conv_chain(k: usize) -> Result<ConvChain> {
    if k == 0 {
        return Err(Error::validation("convolution kernel must be positive"));
    }
    let step = |l: usize| l.checked_sub(k - 1).filter(|&v| v > 0);
    let chain = (|| {
        let l1 = step(BINS)?;
        let p1 = l1 / 2;
        let l2 = step(p1)?;
        let p2 = l2 / 2;
        let l3 = step(p2)?;
        Some(ConvChain { l1, p1, l2, p2, l3 })
    })();
    chain.ok_or_else(|| {
        Error::validation(format!(
            "kernel size {k} leaves no positions after the convolution tower"
        ))
    })
}

/// One named tensor inside the flat parameter vector.
#[derive(Debug, Clone)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    init: InitKind,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy)]
enum InitKind {
    Glorot { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

#[derive(Debug, Clone)]
struct BlockLayout {
    ln1_g: Range<usize>,
    ln1_b: Range<usize>,
    wq: Range<usize>,
    bq: Range<usize>,
    wk: Range<usize>,
    bk: Range<usize>,
    wv: Range<usize>,
    bv: Range<usize>,
    wo: Range<usize>,
    bo: Range<usize>,
    ln2_g: Range<usize>,
    ln2_b: Range<usize>,
    ff1_w: Range<usize>,
    ff1_b: Range<usize>,
    ff2_w: Range<usize>,
    ff2_b: Range<usize>,
}

#[derive(Debug, Clone)]
struct Layout {
    conv_w: [Range<usize>; 3],
    conv_b: [Range<usize>; 3],
    blocks: Vec<BlockLayout>,
    head_w: [Range<usize>; 3],
    head_b: [Range<usize>; 3],
    entries: Vec<TensorSpec>,
    total: usize,
}

struct LayoutBuilder {
    entries: Vec<TensorSpec>,
    total: usize,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, shape: &[usize], init: InitKind) -> Range<usize> {
        let spec = TensorSpec {
            name,
            shape: shape.to_vec(),
            offset: self.total,
            init,
        };
        let r = spec.range();
        self.total = r.end;
        self.entries.push(spec);
        r
    }

    fn dense(&mut self, name: &str, n_out: usize, n_in: usize) -> (Range<usize>, Range<usize>) {
        let glorot = InitKind::Glorot {
            fan_in: n_in,
            fan_out: n_out,
        };
        let w = self.push(format!("{name}.weight"), &[n_out, n_in], glorot);
        let b = self.push(format!("{name}.bias"), &[n_out], InitKind::Zeros);
        (w, b)
    }

    fn norm(&mut self, name: &str, d: usize) -> (Range<usize>, Range<usize>) {
        let g = self.push(format!("{name}.gamma"), &[d], InitKind::Ones);
        let b = self.push(format!("{name}.beta"), &[d], InitKind::Zeros);
        (g, b)
    }
}

fn build_layout(cfg: &FogTransformerConfig) -> Layout {
    let [c1, c2, c3] = cfg.conv_filters;
    let k = cfg.conv_kernel;
    let d = c3;
    let proj = cfg.n_heads * cfg.head_size;
    let mut b = LayoutBuilder {
        entries: Vec::new(),
        total: 0,
    };

    let mut conv_w = Vec::new();
    let mut conv_b = Vec::new();
    for (i, (c_out, c_in)) in [(c1, CHANNELS), (c2, c1), (c3, c2)].into_iter().enumerate() {
        let glorot = InitKind::Glorot {
            fan_in: k * c_in,
            fan_out: k * c_out,
        };
        conv_w.push(b.push(
            format!("conv{}.weight", i + 1),
            &[c_out, k, c_in],
            glorot,
        ));
        conv_b.push(b.push(format!("conv{}.bias", i + 1), &[c_out], InitKind::Zeros));
    }

    let blocks = (0..cfg.n_blocks)
        .map(|i| {
            let p = format!("enc{i}");
            let (ln1_g, ln1_b) = b.norm(&format!("{p}.ln1"), d);
            let (wq, bq) = b.dense(&format!("{p}.attn.query"), proj, d);
            let (wk, bk) = b.dense(&format!("{p}.attn.key"), proj, d);
            let (wv, bv) = b.dense(&format!("{p}.attn.value"), proj, d);
            let (wo, bo) = b.dense(&format!("{p}.attn.out"), d, proj);
            let (ln2_g, ln2_b) = b.norm(&format!("{p}.ln2"), d);
            let (ff1_w, ff1_b) = b.dense(&format!("{p}.ff1"), cfg.ff_dim, d);
            let (ff2_w, ff2_b) = b.dense(&format!("{p}.ff2"), d, cfg.ff_dim);
            BlockLayout {
                ln1_g,
                ln1_b,
                wq,
                bq,
                wk,
                bk,
                wv,
                bv,
                wo,
                bo,
                ln2_g,
                ln2_b,
                ff1_w,
                ff1_b,
                ff2_w,
                ff2_b,
            }
        })
        .collect();

    let [u1, u2] = cfg.head_units;
    let (w1, b1) = b.dense("head.fc1", u1, d);
    let (w2, b2) = b.dense("head.fc2", u2, u1);
    let (w3, b3) = b.dense("head.fc3", 1, u2);

    Layout {
        conv_w: conv_w.try_into().expect("three conv layers"),
        conv_b: conv_b.try_into().expect("three conv layers"),
        blocks,
        head_w: [w1, w2, w3],
        head_b: [b1, b2, b3],
        entries: b.entries,
        total: b.total,
    }
}

/// The assembled architecture: configuration, derived dimensions, and the
/// named layout of the flat parameter vector. Weights live outside, in a
/// plain `Vec<f64>`.
#[derive(Debug, Clone)]
pub struct FogTransformer {
    cfg: FogTransformerConfig,
    chain: ConvChain,
    layout: Layout,
}

/// Builds the standard architecture and Glorot-initializes its weights.
pub fn build_fog_transformer(n_prev: usize, seed: u64) -> Result<(FogTransformer, Vec<f64>)> {
    let model = FogTransformer::new(FogTransformerConfig::standard(n_prev)?)?;
    let params = model.init_params(seed);
    Ok((model, params))
}

/// Per-layer parameter counts plus their sum.
#[derive(Debug, Clone)]
pub struct ParameterBreakdown {
    pub layers: Vec<(String, Vec<usize>, usize)>,
    pub total: usize,
}

/// Counts every trainable value in the model, layer by layer.
pub fn count_trainable_parameters(model: &FogTransformer) -> ParameterBreakdown {
    ParameterBreakdown {
        layers: model
            .layout
            .entries
            .iter()
            .map(|e| (e.name.clone(), e.shape.clone(), e.len()))
            .collect(),
        total: model.layout.total,
    }
}

impl FogTransformer {
    pub fn new(cfg: FogTransformerConfig) -> Result<Self> {
        cfg.validate()?;
        assert_eq!(BINS * CHANNELS, STEP_LEN);
        let chain = conv_chain(cfg.conv_kernel)?;
        let layout = build_layout(&cfg);
        Ok(FogTransformer { cfg, chain, layout })
    }

    pub fn config(&self) -> &FogTransformerConfig {
        &self.cfg
    }

    /// Sequence length the model expects.
    pub fn t(&self) -> usize {
        self.cfg.n_prev + 1
    }

    fn d(&self) -> usize {
        self.cfg.conv_filters[2]
    }

    fn mha_dims(&self) -> MhaDims {
        MhaDims {
            t: self.t(),
            d_model: self.d(),
            heads: self.cfg.n_heads,
            head_dim: self.cfg.head_size,
        }
    }

    /// Named tensors of the parameter vector, in storage order.
    pub fn tensors(&self) -> &[TensorSpec] {
        &self.layout.entries
    }

    /// Fresh Glorot-uniform weights (zero biases, unit norm gains), fully
    /// determined by `seed`.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let stream = SeedStream::new(seed).child("init");
        let mut params = vec![0.0; self.layout.total];
        for e in &self.layout.entries {
            match e.init {
                InitKind::Glorot { fan_in, fan_out } => {
                    let vals = glorot_uniform(fan_in, fan_out, e.len(), &stream.child(&e.name));
                    params[e.range()].copy_from_slice(&vals);
                }
                InitKind::Zeros => {}
                InitKind::Ones => params[e.range()].fill(1.0),
            }
        }
        params
    }

    /// Conv-tower output for each time step: `t` rows of `conv_filters[2]`
    /// values. The same weights process every step.
    pub fn step_embeddings(&self, params: &[f64], input: &[f64]) -> Vec<Vec<f64>> {
        let (_, emb) = self.embed_steps(params, input);
        emb.chunks_exact(self.d()).map(<[f64]>::to_vec).collect()
    }

    /// Scores a batch of spectral sequences; rows must match the model's
    /// sequence length.
    pub fn predict(&self, params: &[f64], batch: &[SpectralSequence]) -> Result<Vec<f64>> {
        for (i, seq) in batch.iter().enumerate() {
            if seq.t != self.t() || seq.values.len() != self.t() * STEP_LEN {
                return Err(Error::validation(format!(
                    "sequence {i} has {} steps of {} values, model expects {} of {STEP_LEN}",
                    seq.t,
                    if seq.t > 0 { seq.values.len() / seq.t } else { 0 },
                    self.t()
                )));
            }
        }
        Ok(batch
            .par_iter()
            .map(|seq| self.predict_one(params, &seq.values))
            .collect())
    }

    fn embed_steps(&self, params: &[f64], input: &[f64]) -> (Vec<StepCache>, Vec<f64>) {
        let t = self.t();
        let [c1, c2, c3] = self.cfg.conv_filters;
        let k = self.cfg.conv_kernel;
        let ch = self.chain;
        debug_assert_eq!(input.len(), t * STEP_LEN);

        let w1 = &params[self.layout.conv_w[0].clone()];
        let b1 = &params[self.layout.conv_b[0].clone()];
        let w2 = &params[self.layout.conv_w[1].clone()];
        let b2 = &params[self.layout.conv_b[1].clone()];
        let w3 = &params[self.layout.conv_w[2].clone()];
        let b3 = &params[self.layout.conv_b[2].clone()];

        let mut steps = Vec::with_capacity(t);
        let mut embeddings = vec![0.0; t * c3];
        for (step, x) in input.chunks_exact(STEP_LEN).enumerate() {
            let mut a1 = vec![0.0; ch.l1 * c1];
            conv1d_forward(x, CHANNELS, w1, b1, c1, k, &mut a1);
            relu(&mut a1);
            let mut p1 = vec![0.0; ch.p1 * c1];
            let mut s1 = vec![0u8; ch.p1 * c1];
            maxpool1d_forward(&a1, c1, &mut p1, &mut s1);

            let mut a2 = vec![0.0; ch.l2 * c2];
            conv1d_forward(&p1, c1, w2, b2, c2, k, &mut a2);
            relu(&mut a2);
            let mut p2 = vec![0.0; ch.p2 * c2];
            let mut s2 = vec![0u8; ch.p2 * c2];
            maxpool1d_forward(&a2, c2, &mut p2, &mut s2);

            let mut a3 = vec![0.0; ch.l3 * c3];
            conv1d_forward(&p2, c2, w3, b3, c3, k, &mut a3);
            relu(&mut a3);
            gap_forward(&a3, c3, &mut embeddings[step * c3..(step + 1) * c3]);

            steps.push(StepCache { a1, s1, p1, a2, s2, p2, a3 });
        }
        (steps, embeddings)
    }

    fn mha_params<'a>(&self, params: &'a [f64], bl: &BlockLayout) -> MhaParams<'a> {
        MhaParams {
            wq: &params[bl.wq.clone()],
            bq: &params[bl.bq.clone()],
            wk: &params[bl.wk.clone()],
            bk: &params[bl.bk.clone()],
            wv: &params[bl.wv.clone()],
            bv: &params[bl.bv.clone()],
            wo: &params[bl.wo.clone()],
            bo: &params[bl.bo.clone()],
        }
    }

    fn forward(&self, params: &[f64], input: &[f64], mut rng: Option<&mut ChaCha8Rng>) -> Cache {
        let t = self.t();
        let d = self.d();
        let ff = self.cfg.ff_dim;
        let dims = self.mha_dims();
        debug_assert_eq!(params.len(), self.layout.total);

        let (steps, embeddings) = self.embed_steps(params, input);

        let mut s = embeddings.clone();
        let mut blocks = Vec::with_capacity(self.cfg.n_blocks);
        for bl in &self.layout.blocks {
            let input_b = s;
            let ln1_g = &params[bl.ln1_g.clone()];
            let ln1_b = &params[bl.ln1_b.clone()];
            let mut ln1_out = vec![0.0; t * d];
            let mut ln1_caches = Vec::with_capacity(t);
            for i in 0..t {
                ln1_caches.push(layer_norm_forward(
                    &input_b[i * d..(i + 1) * d],
                    ln1_g,
                    ln1_b,
                    &mut ln1_out[i * d..(i + 1) * d],
                ));
            }

            let mut attn = vec![0.0; t * d];
            let mha = mha_forward(&ln1_out, &dims, &self.mha_params(params, bl), &mut attn);
            let mask_attn = rng
                .as_deref_mut()
                .map(|r| dropout_mask(t * d, self.cfg.attn_dropout, r));
            mul_mask(&mut attn, &mask_attn);
            let s_mid: Vec<f64> = input_b.iter().zip(&attn).map(|(a, b)| a + b).collect();

            let ln2_g = &params[bl.ln2_g.clone()];
            let ln2_b = &params[bl.ln2_b.clone()];
            let mut ln2_out = vec![0.0; t * d];
            let mut ln2_caches = Vec::with_capacity(t);
            for i in 0..t {
                ln2_caches.push(layer_norm_forward(
                    &s_mid[i * d..(i + 1) * d],
                    ln2_g,
                    ln2_b,
                    &mut ln2_out[i * d..(i + 1) * d],
                ));
            }

            let ff1_w = &params[bl.ff1_w.clone()];
            let ff1_b = &params[bl.ff1_b.clone()];
            let mut ff1 = vec![0.0; t * ff];
            for i in 0..t {
                dense_forward(
                    &ln2_out[i * d..(i + 1) * d],
                    ff1_w,
                    ff1_b,
                    ff,
                    &mut ff1[i * ff..(i + 1) * ff],
                );
            }
            relu(&mut ff1);
            let mask_ff = rng
                .as_deref_mut()
                .map(|r| dropout_mask(t * ff, self.cfg.attn_dropout, r));
            let mut ff1_dropped = ff1.clone();
            mul_mask(&mut ff1_dropped, &mask_ff);

            let ff2_w = &params[bl.ff2_w.clone()];
            let ff2_b = &params[bl.ff2_b.clone()];
            let mut next = s_mid.clone();
            let mut ff2_row = vec![0.0; d];
            for i in 0..t {
                dense_forward(
                    &ff1_dropped[i * ff..(i + 1) * ff],
                    ff2_w,
                    ff2_b,
                    d,
                    &mut ff2_row,
                );
                for (n, v) in next[i * d..(i + 1) * d].iter_mut().zip(&ff2_row) {
                    *n += v;
                }
            }

            blocks.push(BlockCache {
                input: input_b,
                ln1_out,
                ln1_caches,
                mha,
                mask_attn,
                s_mid,
                ln2_out,
                ln2_caches,
                ff1,
                mask_ff,
                ff1_dropped,
            });
            s = next;
        }

        let mut g = vec![0.0; d];
        gap_forward(&s, d, &mut g);

        let [u1, u2] = self.cfg.head_units;
        let mut h1 = vec![0.0; u1];
        dense_forward(
            &g,
            &params[self.layout.head_w[0].clone()],
            &params[self.layout.head_b[0].clone()],
            u1,
            &mut h1,
        );
        relu(&mut h1);
        let mask_h1 = rng
            .as_deref_mut()
            .map(|r| dropout_mask(u1, self.cfg.head_dropout, r));
        let mut h1_dropped = h1.clone();
        mul_mask(&mut h1_dropped, &mask_h1);

        let mut h2 = vec![0.0; u2];
        dense_forward(
            &h1_dropped,
            &params[self.layout.head_w[1].clone()],
            &params[self.layout.head_b[1].clone()],
            u2,
            &mut h2,
        );
        relu(&mut h2);
        let mask_h2 = rng
            .as_deref_mut()
            .map(|r| dropout_mask(u2, self.cfg.head_dropout, r));
        let mut h2_dropped = h2.clone();
        mul_mask(&mut h2_dropped, &mask_h2);

        let mut z = [0.0];
        dense_forward(
            &h2_dropped,
            &params[self.layout.head_w[2].clone()],
            &params[self.layout.head_b[2].clone()],
            1,
            &mut z,
        );
        let p = sigmoid(z[0]);

        Cache {
            steps,
            blocks,
            g,
            h1,
            mask_h1,
            h1_dropped,
            h2,
            mask_h2,
            h2_dropped,
            p,
        }
    }

    fn backward(&self, params: &[f64], input: &[f64], cache: &Cache, label: f64, grads: &mut [f64]) {
        let t = self.t();
        let d = self.d();
        let ff = self.cfg.ff_dim;
        let k = self.cfg.conv_kernel;
        let [c1, c2, c3] = self.cfg.conv_filters;
        let ch = self.chain;
        let dims = self.mha_dims();
        let [u1, u2] = self.cfg.head_units;
        debug_assert_eq!(grads.len(), self.layout.total);

        // Clamped cross-entropy through the sigmoid collapses to p - y; in
        // the clamp's flat zones the loss has zero slope.
        let p = cache.p;
        let dz = if (BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) {
            p - label
        } else {
            0.0
        };

        let mut dh2_dropped = vec![0.0; u2];
        {
            let (gw, gb) = wb_mut(grads, &self.layout.head_w[2], &self.layout.head_b[2]);
            dense_backward(
                &cache.h2_dropped,
                &params[self.layout.head_w[2].clone()],
                1,
                &[dz],
                gw,
                gb,
                Some(&mut dh2_dropped),
            );
        }
        let mut dh2 = dh2_dropped;
        mul_mask(&mut dh2, &cache.mask_h2);
        relu_backward(&cache.h2, &mut dh2);

        let mut dh1_dropped = vec![0.0; u1];
        {
            let (gw, gb) = wb_mut(grads, &self.layout.head_w[1], &self.layout.head_b[1]);
            dense_backward(
                &cache.h1_dropped,
                &params[self.layout.head_w[1].clone()],
                u2,
                &dh2,
                gw,
                gb,
                Some(&mut dh1_dropped),
            );
        }
        let mut dh1 = dh1_dropped;
        mul_mask(&mut dh1, &cache.mask_h1);
        relu_backward(&cache.h1, &mut dh1);

        let mut dg = vec![0.0; d];
        {
            let (gw, gb) = wb_mut(grads, &self.layout.head_w[0], &self.layout.head_b[0]);
            dense_backward(
                &cache.g,
                &params[self.layout.head_w[0].clone()],
                u1,
                &dh1,
                gw,
                gb,
                Some(&mut dg),
            );
        }

        let mut d_next = vec![0.0; t * d];
        gap_backward(&dg, d, t, &mut d_next);

        for (bl, c) in self.layout.blocks.iter().zip(&cache.blocks).rev() {
            let mut ds_mid = d_next.clone();

            let mut dff1_dropped = vec![0.0; t * ff];
            for i in 0..t {
                let (gw, gb) = wb_mut(grads, &bl.ff2_w, &bl.ff2_b);
                dense_backward(
                    &c.ff1_dropped[i * ff..(i + 1) * ff],
                    &params[bl.ff2_w.clone()],
                    d,
                    &d_next[i * d..(i + 1) * d],
                    gw,
                    gb,
                    Some(&mut dff1_dropped[i * ff..(i + 1) * ff]),
                );
            }
            let mut dff1 = dff1_dropped;
            mul_mask(&mut dff1, &c.mask_ff);
            relu_backward(&c.ff1, &mut dff1);

            let mut dln2 = vec![0.0; t * d];
            for i in 0..t {
                let (gw, gb) = wb_mut(grads, &bl.ff1_w, &bl.ff1_b);
                dense_backward(
                    &c.ln2_out[i * d..(i + 1) * d],
                    &params[bl.ff1_w.clone()],
                    ff,
                    &dff1[i * ff..(i + 1) * ff],
                    gw,
                    gb,
                    Some(&mut dln2[i * d..(i + 1) * d]),
                );
            }
            for i in 0..t {
                let (gg, gb) = wb_mut(grads, &bl.ln2_g, &bl.ln2_b);
                layer_norm_backward(
                    &c.s_mid[i * d..(i + 1) * d],
                    &params[bl.ln2_g.clone()],
                    c.ln2_caches[i],
                    &dln2[i * d..(i + 1) * d],
                    gg,
                    gb,
                    &mut ds_mid[i * d..(i + 1) * d],
                );
            }

            let mut dattn = ds_mid.clone();
            mul_mask(&mut dattn, &c.mask_attn);
            let mut dln1 = vec![0.0; t * d];
            {
                let p = self.mha_params(params, bl);
                let mut g = mha_grads(grads, bl);
                mha_backward(&c.ln1_out, &dims, &p, &c.mha, &dattn, &mut g, &mut dln1);
            }

            let mut d_input = ds_mid;
            for i in 0..t {
                let (gg, gb) = wb_mut(grads, &bl.ln1_g, &bl.ln1_b);
                layer_norm_backward(
                    &c.input[i * d..(i + 1) * d],
                    &params[bl.ln1_g.clone()],
                    c.ln1_caches[i],
                    &dln1[i * d..(i + 1) * d],
                    gg,
                    gb,
                    &mut d_input[i * d..(i + 1) * d],
                );
            }
            d_next = d_input;
        }

        let w1 = &params[self.layout.conv_w[0].clone()];
        let w2 = &params[self.layout.conv_w[1].clone()];
        let w3 = &params[self.layout.conv_w[2].clone()];
        for (step, (sc, x)) in cache
            .steps
            .iter()
            .zip(input.chunks_exact(STEP_LEN))
            .enumerate()
        {
            let mut da3 = vec![0.0; ch.l3 * c3];
            gap_backward(&d_next[step * c3..(step + 1) * c3], c3, ch.l3, &mut da3);
            relu_backward(&sc.a3, &mut da3);

            let mut dp2 = vec![0.0; ch.p2 * c2];
            {
                let (gw, gb) = wb_mut(grads, &self.layout.conv_w[2], &self.layout.conv_b[2]);
                conv1d_backward(&sc.p2, c2, w3, c3, k, &da3, gw, gb, Some(&mut dp2));
            }
            let mut da2 = vec![0.0; ch.l2 * c2];
            maxpool1d_backward(&dp2, c2, &sc.s2, &mut da2);
            relu_backward(&sc.a2, &mut da2);

            let mut dp1 = vec![0.0; ch.p1 * c1];
            {
                let (gw, gb) = wb_mut(grads, &self.layout.conv_w[1], &self.layout.conv_b[1]);
                conv1d_backward(&sc.p1, c1, w2, c2, k, &da2, gw, gb, Some(&mut dp1));
            }
            let mut da1 = vec![0.0; ch.l1 * c1];
            maxpool1d_backward(&dp1, c1, &sc.s1, &mut da1);
            relu_backward(&sc.a1, &mut da1);

            let (gw, gb) = wb_mut(grads, &self.layout.conv_w[0], &self.layout.conv_b[0]);
            conv1d_backward(x, CHANNELS, w1, c1, k, &da1, gw, gb, None);
        }
    }
}

/// Multiplies a mask in when one was drawn; inference passes keep the
/// activations untouched.
fn mul_mask(v: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        for (x, &f) in v.iter_mut().zip(m) {
            *x *= f;
        }
    }
}

/// Two disjoint mutable gradient slices for an adjacent (weight, bias)
/// pair.
fn wb_mut<'a>(
    grads: &'a mut [f64],
    w: &Range<usize>,
    b: &Range<usize>,
) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert_eq!(w.end, b.start);
    grads[w.start..b.end].split_at_mut(w.end - w.start)
}

/// Mutable gradient slices for all eight attention tensors, which the
/// layout keeps adjacent.
fn mha_grads<'a>(grads: &'a mut [f64], bl: &BlockLayout) -> MhaParamsMut<'a> {
    let region = &mut grads[bl.wq.start..bl.bo.end];
    let (wq, rest) = region.split_at_mut(bl.wq.len());
    let (bq, rest) = rest.split_at_mut(bl.bq.len());
    let (wk, rest) = rest.split_at_mut(bl.wk.len());
    let (bk, rest) = rest.split_at_mut(bl.bk.len());
    let (wv, rest) = rest.split_at_mut(bl.wv.len());
    let (bv, rest) = rest.split_at_mut(bl.bv.len());
    let (wo, bo) = rest.split_at_mut(bl.wo.len());
    MhaParamsMut {
        wq,
        bq,
        wk,
        bk,
        wv,
        bv,
        wo,
        bo,
    }
}

struct StepCache {
    /// Post-rectifier activations of the three convolutions.
    a1: Vec<f64>,
    s1: Vec<u8>,
    p1: Vec<f64>,
    a2: Vec<f64>,
    s2: Vec<u8>,
    p2: Vec<f64>,
    a3: Vec<f64>,
}

struct BlockCache {
    input: Vec<f64>,
    ln1_out: Vec<f64>,
    ln1_caches: Vec<LayerNormCache>,
    mha: MhaCache,
    mask_attn: Option<Vec<f64>>,
    s_mid: Vec<f64>,
    ln2_out: Vec<f64>,
    ln2_caches: Vec<LayerNormCache>,
    /// Post-rectifier, pre-dropout feed-forward hidden activations.
    ff1: Vec<f64>,
    mask_ff: Option<Vec<f64>>,
    ff1_dropped: Vec<f64>,
}

struct Cache {
    steps: Vec<StepCache>,
    blocks: Vec<BlockCache>,
    g: Vec<f64>,
    h1: Vec<f64>,
    mask_h1: Option<Vec<f64>>,
    h1_dropped: Vec<f64>,
    h2: Vec<f64>,
    mask_h2: Option<Vec<f64>>,
    h2_dropped: Vec<f64>,
    p: f64,
}

impl Model for FogTransformer {
    fn input_len(&self) -> usize {
        self.t() * STEP_LEN
    }

    fn param_count(&self) -> usize {
        self.layout.total
    }

    fn predict_one(&self, params: &[f64], input: &[f64]) -> f64 {
        self.forward(params, input, None).p
    }

    fn train_step_one(
        &self,
        params: &[f64],
        input: &[f64],
        label: f64,
        dropout: &SeedStream,
        grads: &mut [f64],
    ) -> f64 {
        let mut rng = dropout.rng();
        let cache = self.forward(params, input, Some(&mut rng));
        self.backward(params, input, &cache, label, grads);
        bce_loss(cache.p, label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{check_gradient, fit, DataSet, TrainConfig};
    use rand::Rng;
    use rand::SeedableRng;

    fn random_input(t: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..t * STEP_LEN).map(|_| rng.gen_range(-2.0..2.0)).collect()
    }

    #[test]
    fn standard_parameter_count_is_frozen() {
        for n_prev in 1..=3 {
            let (model, params) = build_fog_transformer(n_prev, 0).unwrap();
            let breakdown = count_trainable_parameters(&model);
            assert_eq!(breakdown.total, 90_065, "n_prev {n_prev}");
            assert_eq!(params.len(), 90_065);
            let sum: usize = breakdown.layers.iter().map(|(_, _, n)| n).sum();
            assert_eq!(sum, breakdown.total);
        }
    }

    #[test]
    fn named_layer_counts_match_hand_arithmetic() {
        let (model, _) = build_fog_transformer(3, 0).unwrap();
        let breakdown = count_trainable_parameters(&model);
        let count = |prefix: &str| -> usize {
            breakdown
                .layers
                .iter()
                .filter(|(name, _, _)| name.starts_with(prefix))
                .map(|(_, _, n)| n)
                .sum()
        };
        assert_eq!(count("conv1."), 1_664);
        assert_eq!(count("conv2."), 32_832);
        assert_eq!(count("conv3."), 8_224);
        assert_eq!(count("enc0."), 13_808);
        assert_eq!(count("enc1."), 13_808);
        assert_eq!(count("enc2."), 13_808);
        assert_eq!(count("head.fc1."), 2_640);
        assert_eq!(count("head.fc2."), 3_240);
        assert_eq!(count("head.fc3."), 41);
    }

    #[test]
    fn same_seed_builds_identical_weights() {
        let (_, a) = build_fog_transformer(2, 42).unwrap();
        let (_, b) = build_fog_transformer(2, 42).unwrap();
        assert_eq!(a, b);
        let (_, c) = build_fog_transformer(2, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn initialization_is_bounded_and_biases_zero() {
        let model = FogTransformer::new(FogTransformerConfig::standard(1).unwrap()).unwrap();
        let params = model.init_params(5);
        for e in model.tensors() {
            let vals = &params[e.range()];
            match e.init {
                InitKind::Glorot { fan_in, fan_out } => {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    assert!(vals.iter().all(|v| v.abs() <= limit), "{}", e.name);
                    assert!(vals.iter().any(|v| *v != 0.0), "{}", e.name);
                }
                InitKind::Zeros => assert!(vals.iter().all(|&v| v == 0.0), "{}", e.name),
                InitKind::Ones => assert!(vals.iter().all(|&v| v == 1.0), "{}", e.name),
            }
        }
    }

    #[test]
    fn scores_stay_strictly_inside_the_unit_interval() {
        let (model, params) = build_fog_transformer(3, 9).unwrap();
        for seed in 0..5 {
            let p = model.predict_one(&params, &random_input(4, seed));
            assert!(p > 0.0 && p < 1.0, "score {p}");
        }
    }

    #[test]
    fn prediction_is_stateless_and_batch_invariant() {
        let (model, params) = build_fog_transformer(1, 3).unwrap();
        let a = SpectralSequence {
            t: 2,
            values: random_input(2, 11),
        };
        let b = SpectralSequence {
            t: 2,
            values: random_input(2, 12),
        };
        let solo = model.predict(&params, &[a.clone()]).unwrap()[0];
        let batch = model
            .predict(&params, &[b.clone(), a.clone(), a.clone(), b])
            .unwrap();
        assert!((batch[1] - solo).abs() < 1e-9);
        assert_eq!(batch[1], batch[2]);
    }

    #[test]
    fn predict_rejects_wrong_sequence_length() {
        let (model, params) = build_fog_transformer(2, 3).unwrap();
        let bad = SpectralSequence {
            t: 2,
            values: random_input(2, 1),
        };
        assert!(model.predict(&params, &[bad]).is_err());
    }

    #[test]
    fn conv_weights_are_shared_across_time_steps() {
        let (model, mut params) = build_fog_transformer(3, 21).unwrap();
        // All four steps identical.
        let one_step = random_input(1, 31);
        let mut input = Vec::new();
        for _ in 0..4 {
            input.extend_from_slice(&one_step);
        }
        let equal_rows = |emb: &[Vec<f64>]| {
            emb.windows(2)
                .all(|w| w[0].iter().zip(&w[1]).all(|(a, b)| a == b))
        };
        let before = model.step_embeddings(&params, &input);
        assert!(equal_rows(&before));
        // Perturbing conv weights must move every step the same way.
        params[0] += 0.37;
        params[500] -= 0.11;
        let after = model.step_embeddings(&params, &input);
        assert!(equal_rows(&after));
        assert_ne!(before[0], after[0]);
    }

    #[test]
    fn miniature_end_to_end_gradients_match_finite_differences() {
        let model = FogTransformer::new(FogTransformerConfig::miniature()).unwrap();
        for seed in 0..3 {
            let params = model.init_params(seed);
            let input = random_input(2, 100 + seed);
            let label = f64::from(seed % 2 == 0);
            let stream = SeedStream::new(777).child_idx("dropout", seed);

            let mut analytic = vec![0.0; model.param_count()];
            model.train_step_one(&params, &input, label, &stream, &mut analytic);

            let mut scratch = vec![0.0; model.param_count()];
            let report = check_gradient(
                &mut |p: &[f64]| {
                    scratch.fill(0.0);
                    model.train_step_one(p, &input, label, &stream, &mut scratch)
                },
                &params,
                &analytic,
                1e-5,
            );
            assert!(
                report.max_rel_err < 1e-4,
                "seed {seed}: err {} at {}",
                report.max_rel_err,
                report.worst_index
            );
        }
    }

    #[test]
    fn miniature_inference_gradients_match_without_dropout() {
        // Same check through the inference path (no masks), isolating the
        // deterministic part of the network.
        let model = FogTransformer::new(FogTransformerConfig {
            attn_dropout: 0.0,
            head_dropout: 0.0,
            ..FogTransformerConfig::miniature()
        })
        .unwrap();
        let params = model.init_params(8);
        let input = random_input(2, 9);
        let stream = SeedStream::new(0);

        let mut analytic = vec![0.0; model.param_count()];
        model.train_step_one(&params, &input, 1.0, &stream, &mut analytic);
        let report = check_gradient(
            &mut |p: &[f64]| bce_loss(model.predict_one(p, &input), 1.0),
            &params,
            &analytic,
            1e-5,
        );
        assert!(report.max_rel_err < 1e-4, "err {}", report.max_rel_err);
    }

    #[test]
    fn gradient_accumulation_adds_across_samples() {
        let model = FogTransformer::new(FogTransformerConfig::miniature()).unwrap();
        let params = model.init_params(4);
        let xa = random_input(2, 50);
        let xb = random_input(2, 51);
        let sa = SeedStream::new(1).child("a");
        let sb = SeedStream::new(1).child("b");

        let mut ga = vec![0.0; model.param_count()];
        model.train_step_one(&params, &xa, 1.0, &sa, &mut ga);
        let mut gb = vec![0.0; model.param_count()];
        model.train_step_one(&params, &xb, 0.0, &sb, &mut gb);
        let mut both = vec![0.0; model.param_count()];
        model.train_step_one(&params, &xa, 1.0, &sa, &mut both);
        model.train_step_one(&params, &xb, 0.0, &sb, &mut both);
        for i in 0..both.len() {
            assert!((both[i] - (ga[i] + gb[i])).abs() < 1e-12);
        }
    }

    /// Two spectrally distinct window populations, as flat standardized-ish
    /// sequence rows.
    fn separable_sequences(n: usize, t: usize, seed: u64) -> (Vec<f64>, Vec<u8>) {
        use crate::dsp::rfft128;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(n * t * STEP_LEN);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let fog = i % 2 == 0;
            let f0 = if fog {
                rng.gen_range(4.0..7.0)
            } else {
                rng.gen_range(0.8..2.0)
            };
            let amp: f64 = rng.gen_range(0.6..1.2);
            let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            for _step in 0..t {
                let mut window = [0.0f64; 128];
                for (j, w) in window.iter_mut().enumerate() {
                    let time = j as f64 / 40.0;
                    *w = amp * (std::f64::consts::TAU * f0 * time + phase).sin()
                        + 0.1 * rng.gen_range(-1.0..1.0);
                }
                let spec = rfft128(&window);
                for bin in 0..BINS {
                    // Same magnitude on all three channels; scaled down so
                    // inputs sit in a tame numeric range without a fitted
                    // standardizer.
                    for _ in 0..CHANNELS {
                        values.push(spec.bins[bin] / 8.0);
                    }
                }
            }
            labels.push(u8::from(fog));
        }
        (values, labels)
    }

    #[test]
    fn training_separates_two_spectral_populations() {
        let model = FogTransformer::new(FogTransformerConfig::standard(1).unwrap()).unwrap();
        let (values, labels) = separable_sequences(2_000, 2, 3);
        let data = DataSet::new(values, 2 * STEP_LEN, labels).unwrap();
        let mut params = model.init_params(12);
        let cfg = TrainConfig {
            max_epochs: 150,
            seed: 5,
            ..TrainConfig::default()
        };
        let history = fit(&model, &mut params, &data, &cfg).unwrap();
        let best_train = history
            .train_loss
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert!(
            best_train < 0.05,
            "training loss stalled at {best_train} after {} epochs",
            history.epochs_run
        );
    }
}
