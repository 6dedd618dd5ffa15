//! Freezing-of-gait detection from waist-worn accelerometer recordings.
//!
//! The crate covers the full experimental loop: generating labeled synthetic
//! walking/freezing cohorts, resampling and filtering the raw signals,
//! windowed spectral features, two classifiers built from scratch (a small
//! transformer over stacked window spectra, trained with hand-derived
//! gradients, and a random forest over summary features), leave-one-subject-out
//! evaluation, and episode-level post-processing of the resulting prediction
//! traces.
//!
//! Start with the runnable examples, each a tour of one capability:
//!
//! ```text
//! cargo run --release --example generate_cohort
//! cargo run --release --example filter_design
//! cargo run --release --example spectral_windows
//! cargo run --release --example gradient_check
//! cargo run --release --example train_transformer
//! cargo run --release --example random_forest_baseline
//! cargo run --release --example loso_evaluation
//! cargo run --release --example episode_postprocessing
//! ```
//!
//! Module map:
//!
//! - [`synthcohort`]: synthetic cohort generation and recording I/O
//! - [`dsp`]: Butterworth filters, resampling, 128-point FFT, band powers
//! - [`windows`]: window segmentation, labeling, and feature representations
//! - [`neural`]: layer primitives, ADAM, the training loop, gradient checks
//! - [`fogformer`]: the transformer model, parameter accounting, weight archives
//! - [`forest`]: the random-forest baseline
//! - [`metrics`]: confusion metrics, ROC/AUC, EER, AUC comparison, LOSO driver
//! - [`episodes`]: episode, false-positive, and cluster analyses of traces
//! - [`pipeline`]: file-based configuration and the four CLI commands
//! - [`oracles`]: slow reference implementations backing the verification suite
//!
//! The accompanying `fogdet` binary exposes the pipeline as four subcommands
//! (`generate`, `loso`, `postprocess`, `verify`); see the README for the file
//! formats it reads and writes.

pub mod dsp;
pub mod error;
pub mod fogformer;
pub mod neural;
pub mod oracles;
pub mod seed;
pub mod synthcohort;
pub mod windows;
mod textio;

pub use error::{Error, Result};
