//! Dense `f64` tensors and the small set of differentiable layers needed by
//! compact EEG classifiers: grouped 2-D convolution, batch/layer norm,
//! pointwise activations, average pooling, dropout, linear maps and a
//! pre-norm transformer encoder block.
//!
//! Models are plain layer sequences ([`ModelGraph`]). A recorded forward
//! pass keeps per-layer caches; [`ModelGraph::backward`] walks them in
//! reverse and accumulates parameter gradients, optionally returning the
//! gradient with respect to the input.

mod alloc;
mod error;
mod graph;
pub mod layers;
mod optim;
mod tensor;

pub use error::TensorError;
pub use graph::{BackwardOutput, Mode, ModelGraph, NamedTensor};
pub use layers::{
    Activation, AttentionSpec, Conv2dSpec, LayerSpec, PoolSpec,
};
pub use optim::{clip_grad_norm, scheduler_lr, Adam, AdamConfig, Schedule};
pub use tensor::Tensor;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
