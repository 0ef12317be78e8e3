//! Minimal CPU neural-network kernels: NHWC convolutions lowered to GEMM,
//! batch norm, dense layers, Adam, and a checkpointable parameter map.
//!
//! Every kernel is generic over [`Scalar`] (`f32` or `f64`); backward passes
//! are written by hand and verified against finite differences.

pub mod error;
pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod ops;
pub mod optim;
pub mod params;
pub mod scalar;

pub use error::{NnError, Result};
pub use layers::ConvGeom;
pub use optim::Adam;
pub use params::{CheckpointManifest, ParamSet};
pub use scalar::{gemm, Scalar};
