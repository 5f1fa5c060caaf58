//! Tensor engine, reverse-mode autodiff and the two-stage FCN+RL network for
//! handwritten-signature segmentation.
//!
//! Everything runs on dense `f32` tensors shaped `(N, C, H, W)`. Operations are
//! recorded on a [`Tape`] and differentiated in reverse order; models are
//! ordered parameter sets ([`nn::ModelGraph`]) bound onto a fresh tape for each
//! forward pass.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod reference;
pub mod tape;
pub mod tensor;

pub use checkpoint::{Checkpoint, NamedTensor};
pub use error::{Error, Result};
pub use ops::Mode;
pub use optim::{Adam, AdamConfig};
pub use tape::{Tape, Var};
pub use tensor::{Shape, Tensor};
