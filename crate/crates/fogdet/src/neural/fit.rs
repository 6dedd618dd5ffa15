//! The mini-batch training loop: stratified validation split, seeded
//! shuffling, ADAM updates, early stopping with best-weight restoration.
//!
//! Results are bit-reproducible for a given seed regardless of worker
//! count: samples are processed in fixed-size chunks whose partial results
//! are combined in index order, and every random decision (split, per-epoch
//! shuffle, per-sample dropout) is drawn from a seed stream addressed by
//! epoch and sample identity rather than from a shared generator.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seed::SeedStream;

use super::adam::AdamState;
use super::kernels::axpy;
use super::ops::bce_loss;

/// Samples per parallel gradient task. Fixed so the floating-point
/// summation tree does not depend on the number of workers.
const GRAD_CHUNK: usize = 16;

/// A model trainable by [`fit`]: a pure function of a flat parameter
/// vector, differentiable sample by sample.
pub trait Model: Sync {
    /// Length of one input row.
    fn input_len(&self) -> usize;
    /// Length of the flat parameter vector.
    fn param_count(&self) -> usize;
    /// Predicted probability for one sample with dropout disabled.
    fn predict_one(&self, params: &[f64], input: &[f64]) -> f64;
    /// Forward and backward for one sample in training mode. Accumulates
    /// the gradient of this sample's loss into `grads` and returns the
    /// loss value. `dropout` addresses this sample's dropout draws.
    fn train_step_one(
        &self,
        params: &[f64],
        input: &[f64],
        label: f64,
        dropout: &SeedStream,
        grads: &mut [f64],
    ) -> f64;
}

/// Row-major feature matrix with 0/1 labels.
#[derive(Debug, Clone)]
pub struct DataSet {
    features: Vec<f64>,
    width: usize,
    labels: Vec<u8>,
}

impl DataSet {
    pub fn new(features: Vec<f64>, width: usize, labels: Vec<u8>) -> Result<Self> {
        if width == 0 {
            return Err(Error::validation("feature width must be positive"));
        }
        if features.len() != width * labels.len() {
            return Err(Error::validation(format!(
                "feature matrix of {} values is not {} rows of width {}",
                features.len(),
                labels.len(),
                width
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::validation(format!(
                "labels must be 0 or 1, found {bad}"
            )));
        }
        Ok(DataSet {
            features,
            width,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.width..(i + 1) * self.width]
    }

    pub fn label(&self, i: usize) -> f64 {
        f64::from(self.labels[i])
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Consecutive epochs without validation improvement before stopping.
    pub patience: usize,
    /// Fraction of the data held out, stratified by label.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 6e-4,
            batch_size: 512,
            max_epochs: 150,
            patience: 7,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

/// What happened during a [`fit`] call.
#[derive(Debug, Clone)]
pub struct TrainHistory {
    /// Mean training loss per epoch, in epoch order.
    pub train_loss: Vec<f64>,
    /// Validation loss per epoch.
    pub val_loss: Vec<f64>,
    /// 1-based epoch whose weights were restored at the end.
    pub best_epoch: usize,
    /// Epochs actually run (`<= max_epochs` when stopped early).
    pub epochs_run: usize,
    /// Set when the data contained only one class; training proceeds, but
    /// the stratified split degenerates.
    pub single_class_data: bool,
}

/// Strict-improvement early stopping.
///
/// The first observation always counts as an improvement over the initial
/// state; afterwards a loss must be strictly lower than the best seen.
/// With `patience = 7` and no improvement from epoch 2 on, epoch 8 is the
/// last one run.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    best: f64,
    stale: usize,
    patience: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            best: f64::INFINITY,
            stale: 0,
            patience,
        }
    }

    /// Feeds one validation loss; returns `(improved, stop_now)`.
    pub fn observe(&mut self, loss: f64) -> (bool, bool) {
        if loss < self.best {
            self.best = loss;
            self.stale = 0;
            (true, false)
        } else {
            self.stale += 1;
            (false, self.stale >= self.patience)
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

/// Glorot-uniform initialization: `U(-l, l)` with `l = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(fan_in: usize, fan_out: usize, n: usize, stream: &SeedStream) -> Vec<f64> {
    use rand::Rng;
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut rng = stream.rng();
    (0..n).map(|_| rng.gen_range(-limit..=limit)).collect()
}

/// Splits `data` into stratified train/validation index lists.
fn stratified_split(
    data: &DataSet,
    val_fraction: f64,
    stream: &SeedStream,
) -> (Vec<u32>, Vec<u32>, bool) {
    let mut by_class: [Vec<u32>; 2] = [Vec::new(), Vec::new()];
    for (i, &l) in data.labels().iter().enumerate() {
        by_class[l as usize].push(i as u32);
    }
    let single_class = by_class.iter().filter(|c| !c.is_empty()).count() < 2;
    let mut rng = stream.child("split").rng();
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in by_class.iter_mut() {
        class.shuffle(&mut rng);
        let take = ((class.len() as f64) * val_fraction).round() as usize;
        let take = take.min(class.len());
        val.extend_from_slice(&class[..take]);
        train.extend_from_slice(&class[take..]);
    }
    // Keep both sides populated; with two or more samples there is always a
    // way.
    if val.is_empty() && train.len() > 1 {
        val.push(train.pop().expect("train nonempty"));
    }
    if train.is_empty() && val.len() > 1 {
        train.push(val.pop().expect("val nonempty"));
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val, single_class)
}

/// Mean loss over `indices` with dropout off; summation order fixed by
/// chunk structure.
fn evaluate<M: Model>(model: &M, params: &[f64], data: &DataSet, indices: &[u32]) -> f64 {
    let chunk_losses: Vec<f64> = indices
        .par_chunks(256)
        .map(|chunk| {
            chunk
                .iter()
                .map(|&i| {
                    let p = model.predict_one(params, data.row(i as usize));
                    bce_loss(p, data.label(i as usize))
                })
                .sum()
        })
        .collect();
    chunk_losses.iter().sum::<f64>() / indices.len() as f64
}

/// Scores every row of a feature matrix, in order, with dropout off.
pub fn predict_all<M: Model>(model: &M, params: &[f64], rows: &[f64], width: usize) -> Vec<f64> {
    assert_eq!(rows.len() % width, 0);
    rows.par_chunks(width)
        .map(|row| model.predict_one(params, row))
        .collect()
}

/// Trains `params` in place and reports the loss history.
///
/// The data is split into stratified train/validation parts; each epoch
/// shuffles the training indices with an epoch-addressed stream, walks
/// mini-batches of `batch_size`, and updates with ADAM at the configured
/// learning rate. Training stops after `patience` epochs without strict
/// validation improvement or at `max_epochs`, whichever comes first, and
/// the weights of the best validation epoch are restored.
pub fn fit<M: Model>(
    model: &M,
    params: &mut [f64],
    data: &DataSet,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    if params.len() != model.param_count() {
        return Err(Error::validation(format!(
            "parameter vector of {} values does not match the model's {}",
            params.len(),
            model.param_count()
        )));
    }
    if data.width() != model.input_len() {
        return Err(Error::validation(format!(
            "data width {} does not match the model input width {}",
            data.width(),
            model.input_len()
        )));
    }
    if data.len() < 2 {
        return Err(Error::validation(
            "training needs at least two samples".to_string(),
        ));
    }
    if cfg.batch_size == 0 || cfg.max_epochs == 0 || cfg.patience == 0 {
        return Err(Error::validation(
            "batch size, epoch limit, and patience must all be positive".to_string(),
        ));
    }
    if !(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0) {
        return Err(Error::validation(format!(
            "validation fraction must lie in (0, 1), got {}",
            cfg.val_fraction
        )));
    }

    let stream = SeedStream::new(cfg.seed).child("fit");
    let (train, val, single_class_data) = stratified_split(data, cfg.val_fraction, &stream);

    let mut adam = AdamState::new(params.len());
    let mut grads = vec![0.0; params.len()];
    let mut best_params = params.to_vec();
    let mut best_epoch = 0usize;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut history = TrainHistory {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        epochs_run: 0,
        single_class_data,
    };

    let mut order = train.clone();
    for epoch in 1..=cfg.max_epochs {
        let epoch_stream = stream.child_idx("epoch", epoch as u64);
        order.copy_from_slice(&train);
        order.shuffle(&mut epoch_stream.child("shuffle").rng());

        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let partials: Vec<(f64, Vec<f64>)> = batch
                .par_chunks(GRAD_CHUNK)
                .map(|chunk| {
                    let mut g = vec![0.0; params.len()];
                    let mut loss = 0.0;
                    for &i in chunk {
                        let dropout = epoch_stream.child_idx("dropout", u64::from(i));
                        loss += model.train_step_one(
                            &*params,
                            data.row(i as usize),
                            data.label(i as usize),
                            &dropout,
                            &mut g,
                        );
                    }
                    (loss, g)
                })
                .collect();
            grads.fill(0.0);
            for (l, g) in &partials {
                loss_sum += l;
                axpy(1.0, g, &mut grads);
            }
            let inv = 1.0 / batch.len() as f64;
            for g in grads.iter_mut() {
                *g *= inv;
            }
            adam.step(params, &grads, cfg.learning_rate);
        }

        history.train_loss.push(loss_sum / train.len() as f64);
        let val_loss = evaluate(model, params, data, &val);
        history.val_loss.push(val_loss);
        history.epochs_run = epoch;

        let (improved, stop) = stopper.observe(val_loss);
        if improved {
            best_params.copy_from_slice(params);
            best_epoch = epoch;
        }
        if stop {
            break;
        }
    }

    params.copy_from_slice(&best_params);
    history.best_epoch = best_epoch;
    Ok(history)
}
