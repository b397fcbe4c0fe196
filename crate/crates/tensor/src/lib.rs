//! Dense tensors and a tape-based reverse-mode differentiator.
//!
//! Layout is row-major `[batch, height, width, channel]`; token sequences are
//! `[batch, height·width, channel]` with row-major spatial flattening.

pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod layout;
mod ops;
pub mod param;
pub mod real;
pub mod tape;
pub mod tensor;

pub use error::{Result, TensorError};
pub use ops::BatchStats;
pub use param::{ParamId, ParamStore, Parameter};
pub use real::{DType, Real};
pub use tape::{Counters, Gradients, Tape, Var};
pub use tensor::Tensor;
