//! Backprop-free deep learning with soft winner-take-all Hebbian plasticity.
//!
//! Every layer is `batch norm -> convolution -> pooling -> activation`. The
//! convolution weights are learned without any feedback signal: each input
//! patch is presented to a softmax competition between the layer's neurons
//! and every neuron updates its weights from purely local quantities. Layers
//! are trained greedily, one after another, and a linear classifier head is
//! fit on top of the frozen features.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, dataset readers
//! and the command line live in the companion `hebbnet` crate.
//!
//! - [`tensor`]: dense tensors, patch extraction, convolution, pooling, batch norm
//! - [`plasticity`]: weight init, competition, Hebbian / anti-Hebbian deltas, adaptive rate
//! - [`activation`]: forward activations (RePU, Triangle, softmax, ReLU)
//! - [`network`]: layer specs, the width-scaled architecture builder, the model
//! - [`training`]: greedy unsupervised training, the linear head, evaluation
//! - [`data`]: in-memory datasets, normalization, augmentation, batching
//! - [`analysis`]: R1 counting, receptive fields, top-activating patches

#![no_std]
// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod activation;
pub mod analysis;
pub mod data;
pub mod error;
mod math;
pub mod network;
pub mod plasticity;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use network::{ArchitectureSpec, Layer, LayerSpec, Model};
pub use plasticity::{NeuronBank, PlasticityConfig, PlasticityMode};
pub use tensor::{Shape, Tensor};
