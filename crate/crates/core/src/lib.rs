//! Rate-distortion optimized codec for streamable dynamic 3D Gaussian scenes.
//!
//! A keyframe carries a full set of Gaussian primitives. Every later frame is
//! predicted from the previously decoded frame by a multi-resolution motion
//! grid driving two small shared MLPs, refined with a sparse set of
//! compensated Gaussians, and entropy coded with per-tensor frequency tables
//! and an integer range coder. Training minimizes photometric distortion plus
//! a learned rate estimate on noise-quantized tensors.

pub mod compensation;
pub mod config;
pub mod diff;
pub mod entropy;
pub mod error;
pub mod eval;
pub mod model;
pub mod motion;
pub mod pipeline;
pub mod render;
pub mod stream;
pub mod synth;

pub use error::{Error, Result};
