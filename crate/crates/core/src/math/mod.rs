//! Deterministic dense linear algebra and statistics primitives.
//!
//! All routines fix their floating-point summation order, so results are
//! bit-identical across runs, platforms, and optimization levels.

pub mod matrix;
pub mod ops;
pub mod rng;

pub use matrix::{Matrix, Vector};
pub use rng::Rng;
