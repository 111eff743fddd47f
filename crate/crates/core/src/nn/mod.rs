//! Dense-network numerics: layers with exact reverse-mode gradients,
//! parameter initialization and the AdamW update rule.
//!
//! Everything is 64-bit and single-threaded; forward passes in infer mode are
//! pure functions of their inputs and the (immutable) parameters.

mod activation;
mod adamw;
mod batchnorm;
mod dense;
mod dropout;
mod init;

pub use activation::{
    activation, relu, relu_backward, sigmoid, sigmoid_backward, softmax_backward, softmax_rows,
    Activation,
};
pub use adamw::{AdamWConfig, AdamWState, ParamBlockMut};
pub use batchnorm::{BatchNormCache, BatchNormLayer};
pub use dense::{DenseBackward, DenseLayer};
pub use dropout::{dropout_backward, dropout_infer, dropout_train, DropoutMask, DropoutSpec};
pub use init::{init_params, InitScheme};
