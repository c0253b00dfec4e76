//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records operations on [`Var`]s; [`Var::backward`] returns the
//! gradients of every tracked leaf. Convolutions lower to GEMM and the
//! spectral ops use real FFTs, so the same kernels serve training (`f32`)
//! and gradient checking (`f64`).

mod conv;
mod float;
mod ops;
mod spectral;
mod storage;
mod tape;

#[cfg(test)]
pub(crate) mod testutil;

pub use conv::{conv2d_raw, Conv2dSpec};
pub use float::{gemm, Float, MatRef};
pub use ops::{broadcast_shape, reduce_to, PadMode};
pub use spectral::{hann_periodic, window_envelope, Framing};
pub use storage::{numel, Tensor};
pub use tape::{Grads, Tape, Var};
