//! Neural-network building blocks with hand-derived backward passes.
//!
//! Layers are free functions over flat `f64` slices rather than objects:
//! the caller owns one parameter vector for a whole model and wires slices
//! of it into each call. Forward functions return whatever intermediate
//! state their backward pass needs as an explicit cache value, so a model
//! is `&self` during both passes and gradient accumulation lands in a
//! caller-owned buffer. That keeps training trivially parallel over samples
//! and keeps finite-difference checking a matter of perturbing one flat
//! vector.
//!
//! Data layout conventions, used everywhere:
//!
//! - sequences and feature maps are row-major `[position][channel]`
//! - convolution kernels are `[out_channel][tap * in_channel]`
//! - dense weights are `[output][input]`

mod adam;
mod attention;
mod fit;
mod gradcheck;
pub(crate) mod kernels;
mod ops;

pub use adam::AdamState;
pub use attention::{mha_backward, mha_forward, MhaCache, MhaDims, MhaParams, MhaParamsMut};
pub use fit::{
    fit, glorot_uniform, predict_all, DataSet, EarlyStopping, Model, TrainConfig, TrainHistory,
};
pub use gradcheck::{check_gradient, GradCheckReport, FD_STEP};
pub use ops::{
    bce_grad, bce_loss, conv1d_backward, conv1d_forward, dense_backward, dense_forward,
    dropout_mask, gap_backward, gap_forward, layer_norm_backward, layer_norm_forward,
    maxpool1d_backward, maxpool1d_forward, relu, relu_backward, sigmoid, softmax_rows,
    LayerNormCache, BCE_CLAMP, LN_EPSILON,
};
