//! Probe read-back and the weight-update state machine.
//!
//! At every generated step the monitored probes are applied to the freshest
//! pre-intervention activations, giving per-probe confidences
//! `sigmoid(⟨θ_{l,h}, z_{l,h}⟩)` whose median `C̄` summarizes how present
//! the trait already is. At scheduled steps the self-monitored mode turns
//! `C̄` into weight updates:
//!
//! 1. goal not reached and `w > 0` — damp by recent progress:
//!    `w ← clamp(w·(1 − Δ), 0, 1)` with `Δ = C̄(t) − C̄(t−s)`;
//! 2. goal not reached and `w = 0` — restore the initial weight;
//! 3. goal reached — switch the head off: `w ← 0`.
//!
//! For addition plans (α > 0) the goal is `C̄ ≥ τ` with the learned
//! threshold τ. Removal plans (α < 0) mirror the machine: the goal is
//! `C̄ < 0.5` (fixed threshold, [`REMOVAL_TAU`]) and progress is a
//! *falling* `C̄`, so case 1 damps by `(1 + Δ)`.

use crate::error::{Error, Result};
use crate::math::ops;
use crate::model::ActivationRecord;
use crate::probes::{HeadSet, ProbeBank};
use crate::Real;

/// Fixed success threshold of removal plans.
pub const REMOVAL_TAU: Real = 0.5;

/// Per-probe confidences of one step plus their summary statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorReading {
    /// `sigmoid(⟨θ, z⟩)` per monitored head, in head-set order.
    pub values: Vec<Real>,
    pub median: Real,
    pub mean: Real,
    pub std: Real,
}

impl MonitorReading {
    /// The neutral reading reported before any activations exist (single
    /// token of context, first step): every confidence is exactly 1/2.
    pub fn neutral(k: usize) -> Self {
        MonitorReading {
            values: vec![0.5; k],
            median: 0.5,
            mean: 0.5,
            std: 0.0,
        }
    }
}

/// Applies the monitored probes of `bank` to one step's pre-intervention
/// activations.
pub fn monitor(
    record: &ActivationRecord,
    bank: &ProbeBank,
    heads: &HeadSet,
) -> Result<MonitorReading> {
    if heads.heads.is_empty() {
        return Err(Error::Empty("monitored head set"));
    }
    let mut values = Vec::with_capacity(heads.heads.len());
    for &(l, h) in &heads.heads {
        let probe = bank.probe(l, h);
        let z = record.z_flat(bank.cell_index(l, h));
        if z.dim() != probe.theta.dim() {
            return Err(Error::DimMismatch(format!(
                "monitored activation dim {} != probe dim {} at ({l},{h})",
                z.dim(),
                probe.theta.dim()
            )));
        }
        values.push(ops::sigmoid(ops::dot(&probe.theta, z)));
    }
    Ok(MonitorReading {
        median: ops::median(&values)?,
        mean: ops::mean(&values)?,
        std: ops::stddev(&values)?,
        values,
    })
}

/// Mutable monitoring state of one steered trait.
#[derive(Debug, Clone, PartialEq)]
pub struct TraitMonitor {
    pub name: String,
    /// Current per-cell weights `w_{l,h}(t)`, flat cell order, in `[0, 1]`.
    pub weights: Vec<Real>,
    /// Weights at the start step; case-2 resets restore these.
    pub w_init: Vec<Real>,
    /// Monitored heads `H_K`.
    pub heads: HeadSet,
    /// Success threshold τ.
    pub tau: Real,
    /// Mirrored (removal) state machine for negative-strength plans.
    pub removal: bool,
    /// `C̄` at the previous scheduled step.
    pub c_prev: Option<Real>,
    /// Most recent `Δ` (0 until the second scheduled step).
    pub delta: Real,
}

impl TraitMonitor {
    /// Applies one scheduled observation `C̄(t)` to the weight grid.
    pub fn update_weights(&mut self, c_median: Real) {
        let delta = self.c_prev.map_or(0.0, |prev| c_median - prev);
        self.delta = delta;
        self.c_prev = Some(c_median);
        let reached = if self.removal {
            c_median < self.tau
        } else {
            c_median >= self.tau
        };
        let progress = if self.removal { -delta } else { delta };
        for (w, &init) in self.weights.iter_mut().zip(&self.w_init) {
            if reached {
                *w = 0.0;
            } else if *w > 0.0 {
                *w = (*w * (1.0 - progress)).clamp(0.0, 1.0);
            } else {
                *w = init;
            }
        }
    }

    /// Exact bound check `0 ≤ w ≤ 1` over the grid.
    pub fn weights_in_bounds(&self) -> bool {
        self.weights.iter().all(|w| (0.0..=1.0).contains(w))
    }

    /// Sum of the current weights (the α-free part of the injection mass).
    pub fn weight_sum(&self) -> Real {
        self.weights.iter().sum()
    }
}
