//! One-bit quantized deep unrolled networks for sparse recovery.
//!
//! The library covers the full pipeline: synthetic compressed-sensing data,
//! LISTA-style unrolled forward/backward passes, two-stage quantization-aware
//! training with a single learned global scale, physics-driven block
//! sparsity, baseline quantizers, and spectral/bit-count/NMSE diagnostics.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod diag;
pub mod fcn;
pub mod io;
pub mod linalg;
pub mod physics;
pub mod quant;
pub mod rng;
pub mod train;
pub mod unroll;
