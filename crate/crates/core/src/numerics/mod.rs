//! Tensor kernels, sequential networks, SGD and gradient checking.
//!
//! Everything is double precision. Activations of conv and pool layers are
//! `(channels, rows, cols)` grids; dense layers flatten whatever they get.

mod batch;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
mod network;
mod params;
mod tensor;

pub use batch::{accumulate_batch, GRADIENT_CHUNK};
pub use checkpoint::Checkpoint;
pub use gradcheck::{finite_diff_check, GradCheckOptions, GradCheckReport, Objective};
pub use layers::{
    conv_forward, dense_forward, format_chain, maxpool_forward, parse_chain, relu, softmax, softmax_xent, LayerSpec,
};
pub use network::{Gradients, Network, Trace};
pub use params::{glorot_uniform, sgd_step, ParamPair, ParamSet};
pub use tensor::Tensor;
