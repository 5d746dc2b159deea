//! 1-bit two-layer networks trained with straight-through gradients.
//!
//! The crate is organised bottom-up:
//!
//! * [`binq`] packs sign-quantized weight vectors and computes addition-only
//!   inner products together with the exact dequantization correction.
//! * [`net`] holds the two-layer model in its three flavours: the 1-bit
//!   network, the straight-through surrogate and the full-precision twin.
//! * [`train`] runs synchronized gradient descent on both twins and records
//!   losses, weight drift, pattern flips and the exact loss decomposition.
//! * [`kernel`] builds the empirical neural tangent kernel from activation
//!   patterns and reports its spectrum and drift.
//! * [`data`] generates the regression targets (including the Lambert W and
//!   Gamma based one) and reads/writes datasets.
//! * [`theory`] evaluates the closed-form bounds with explicit constants.
//! * [`lab`] is the experiment harness behind the `bitkernel-lab` binary.

pub mod binq;
pub mod data;
mod error;
pub mod kernel;
pub mod lab;
mod matrix;
pub mod net;
pub mod rng;
pub mod theory;
pub mod train;

pub use error::{Error, Result};
pub use matrix::{Matrix, WeightMatrix};
