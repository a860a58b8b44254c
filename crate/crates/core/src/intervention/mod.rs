//! Steered generation: direction injection with self-monitoring.
//!
//! A [`plan::InterventionPlan`] says what to inject (probe or mass-mean
//! directions, per-trait), where (which heads, with what weights), when
//! (sparse schedule from a start step), and how strongly (α, possibly
//! decaying). The generation loop injects `δ = α·w·σ·θ` into each head's
//! output and, in the self-monitored mode, reads the probes back every
//! scheduled step to grow, shrink, or zero the weights.

pub mod generate;
pub mod monitor;
pub mod plan;

pub use generate::{
    build_hook, generate, init_monitor_state, GenerationTrace, MonitorState, TraceStep,
    TraitStepInfo,
};
pub use monitor::{monitor, MonitorReading, TraitMonitor, REMOVAL_TAU};
pub use plan::{
    decay_alpha, initial_weights, scheduled, soft_weights, threshold_tau, DirectionKind,
    InterventionMode, InterventionPlan, TraitBanks, Weighting, DEFAULT_MONITOR_K, DEFAULT_POWER,
    DEFAULT_SPARSE_STEP,
};
