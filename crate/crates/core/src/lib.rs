//! Toy autoregressive token transformer with per-head activation taps,
//! logistic attention-head probes, and self-monitored inference-time steering.
//!
//! The crate is organized as a pipeline:
//!
//! * [`math`] — deterministic dense linear algebra, statistics, and a
//!   counter-based RNG shared by everything else.
//! * [`model`] — a small causal decoder-only transformer with per-head
//!   activation records, an intervention injection point, a next-token
//!   trainer, and checkpoint I/O.
//! * [`corpus`] — synthetic sequence generator with periodic "trait" motifs
//!   over a Markov background, plus an exact trait-presence oracle.
//! * [`probes`] — per-(layer, head) logistic classifier probes on frozen
//!   activations, head selection, and probe-bank serialization.
//! * [`intervention`] — the steering engine: direction injection,
//!   soft-weighting, sparse scheduling, baselines, and the self-monitoring
//!   state machine driving generation.
//! * [`metrics`] — objective evaluation: success rates, Fréchet feature
//!   distance, embedding similarity, Spearman validation.
//!
//! The math kernel is generic over the scalar type (see [`Scalar`]); the
//! pipeline itself runs on the crate-level [`Real`] alias (64-bit). Storage
//! formats (checkpoints, probe banks) are 32-bit at the boundary.

pub mod corpus;
pub mod error;
pub mod intervention;
pub mod math;
pub mod metrics;
pub mod model;
pub mod probes;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Scalar type used for all pipeline computation.
pub type Real = f64;
/// Matrix over the default scalar.
pub type RealMatrix = math::Matrix<Real>;
/// Vector over the default scalar.
pub type RealVector = math::Vector<Real>;
/// Token identifier within the model vocabulary.
pub type Token = u32;
