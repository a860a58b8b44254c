//! Intervention plans: what to inject, where, when, and how strongly.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::math::ops;
use crate::model::ModelConfig;
use crate::probes::ProbeBank;
use crate::Real;

/// Default exponent of the accuracy → weight power law.
pub const DEFAULT_POWER: Real = 3.0;
/// Default number of monitored probes.
pub const DEFAULT_MONITOR_K: usize = 16;
/// Default steering period: inject every `s`-th generated step.
pub const DEFAULT_SPARSE_STEP: usize = 5;

/// How steering behaves over the course of a generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterventionMode {
    /// No steering at all; the pure sampling baseline.
    None,
    /// Constant injection on a fixed top-K′ head set at every step.
    OriginalIti,
    /// Top-K′ injection whose strength decays linearly to zero.
    WeightDecay,
    /// Sparse, soft-weighted injection driven by the probe monitor.
    Smitin,
}

impl InterventionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InterventionMode::None => "none",
            InterventionMode::OriginalIti => "original_iti",
            InterventionMode::WeightDecay => "weight_decay",
            InterventionMode::Smitin => "smitin",
        }
    }
}

impl fmt::Display for InterventionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InterventionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(InterventionMode::None),
            "original_iti" => Ok(InterventionMode::OriginalIti),
            "weight_decay" => Ok(InterventionMode::WeightDecay),
            "smitin" => Ok(InterventionMode::Smitin),
            other => Err(Error::InvalidArgument(format!(
                "unknown intervention mode {other:?} \
                 (expected none | original_iti | weight_decay | smitin)"
            ))),
        }
    }
}

/// How per-head weights are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// Weight 1 on the K′ most accurate heads, 0 elsewhere.
    TopK(usize),
    /// Accuracy-graded soft weights (power law, exponent `power`).
    Soft,
}

/// Which stored direction is injected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirectionKind {
    /// The logistic probe direction θ.
    Logistic,
    /// The class-centroid difference direction.
    MassMean,
}

/// The probe banks backing one steered trait. Monitoring, thresholds, and
/// weights always come from the logistic bank; the mass-mean bank, when
/// present, only supplies the injected (θ, σ) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct TraitBanks {
    pub logistic: ProbeBank,
    pub mass_mean: Option<ProbeBank>,
}

impl TraitBanks {
    pub fn name(&self) -> &str {
        &self.logistic.trait_name
    }

    /// The bank whose directions get injected under `kind`.
    pub fn direction_bank(&self, kind: DirectionKind) -> Result<&ProbeBank> {
        match kind {
            DirectionKind::Logistic => Ok(&self.logistic),
            DirectionKind::MassMean => self.mass_mean.as_ref().ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "trait {:?} has no mass-mean bank but the plan injects mass-mean directions",
                    self.name()
                ))
            }),
        }
    }
}

/// Complete description of one steering configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct InterventionPlan {
    pub mode: InterventionMode,
    /// Signed injection strength; negative removes the trait.
    pub alpha: Real,
    /// Injection period in steps (1 = every step).
    pub sparse_step: usize,
    /// First steered step, as an absolute sequence position. `None` means
    /// the first generated (non-prefix) step.
    pub start: Option<usize>,
    /// Exponent of the soft-weight power law.
    pub power: Real,
    /// Number of monitored probes.
    pub monitor_k: usize,
    pub weighting: Weighting,
    pub direction_kind: DirectionKind,
    pub traits: Vec<TraitBanks>,
}

impl InterventionPlan {
    /// The unsteered baseline.
    pub fn baseline() -> Self {
        InterventionPlan {
            mode: InterventionMode::None,
            alpha: 0.0,
            sparse_step: 1,
            start: None,
            power: DEFAULT_POWER,
            monitor_k: DEFAULT_MONITOR_K,
            weighting: Weighting::Soft,
            direction_kind: DirectionKind::Logistic,
            traits: Vec::new(),
        }
    }

    /// Self-monitored steering with the default sparse schedule and soft
    /// weights.
    pub fn smitin(alpha: Real, traits: Vec<TraitBanks>) -> Self {
        InterventionPlan {
            mode: InterventionMode::Smitin,
            alpha,
            sparse_step: DEFAULT_SPARSE_STEP,
            weighting: Weighting::Soft,
            traits,
            ..InterventionPlan::baseline()
        }
    }

    /// Constant top-K′ injection at every step.
    pub fn original_iti(alpha: Real, top_k: usize, traits: Vec<TraitBanks>) -> Self {
        InterventionPlan {
            mode: InterventionMode::OriginalIti,
            alpha,
            sparse_step: 1,
            weighting: Weighting::TopK(top_k),
            traits,
            ..InterventionPlan::baseline()
        }
    }

    /// Top-K′ injection with strength decaying linearly to zero over the
    /// generation horizon.
    pub fn weight_decay(alpha: Real, top_k: usize, traits: Vec<TraitBanks>) -> Self {
        InterventionPlan {
            mode: InterventionMode::WeightDecay,
            ..InterventionPlan::original_iti(alpha, top_k, traits)
        }
    }

    /// Checks internal consistency and compatibility with a model shape.
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        config.validate()?;
        if self.sparse_step == 0 {
            return Err(Error::InvalidArgument(
                "sparse step must be at least 1".into(),
            ));
        }
        if !self.alpha.is_finite() || !self.power.is_finite() {
            return Err(Error::NonFinite("plan alpha/power".into()));
        }
        let cells = config.cells();
        if self.monitor_k == 0 || self.monitor_k > cells {
            return Err(Error::InvalidArgument(format!(
                "monitor size {} outside [1, {cells}]",
                self.monitor_k
            )));
        }
        if let Weighting::TopK(k) = self.weighting {
            if k == 0 || k > cells {
                return Err(Error::InvalidArgument(format!(
                    "top-k weight size {k} outside [1, {cells}]"
                )));
            }
        }
        if self.mode != InterventionMode::None && self.traits.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "mode {} requires at least one trait bank",
                self.mode
            )));
        }
        for tb in &self.traits {
            for bank in std::iter::once(&tb.logistic).chain(tb.mass_mean.as_ref()) {
                bank.validate()?;
                if bank.num_layers != config.num_layers
                    || bank.num_heads != config.num_heads
                    || bank.head_dim != config.head_dim
                {
                    return Err(Error::DimMismatch(format!(
                        "bank {:?} shape {}x{}x{} does not match model {}x{}x{}",
                        bank.trait_name,
                        bank.num_layers,
                        bank.num_heads,
                        bank.head_dim,
                        config.num_layers,
                        config.num_heads,
                        config.head_dim
                    )));
                }
            }
            tb.direction_bank(self.direction_kind)?;
        }
        Ok(())
    }
}

/// Whether step `t` is on the sparse schedule `t0, t0+s, t0+2s, …`.
pub fn scheduled(t: usize, t0: usize, sparse_step: usize) -> bool {
    debug_assert!(sparse_step >= 1);
    t >= t0 && (t - t0) % sparse_step == 0
}

/// Accuracy-graded head weights: `((acc − acc_min)/(acc_max − acc_min))^c`
/// per cell, in cell order. A flat accuracy grid (max = min) grades every
/// head at 1.
pub fn soft_weights(bank: &ProbeBank, power: Real) -> Vec<Real> {
    let accs = bank.accs();
    let min = accs.iter().cloned().fold(Real::INFINITY, Real::min);
    let max = accs.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
    if max == min {
        return vec![1.0; accs.len()];
    }
    accs.iter()
        .map(|&a| ((a - min) / (max - min)).powf(power))
        .collect()
}

/// Weight grid implied by a plan's weighting rule, in cell order.
pub fn initial_weights(plan: &InterventionPlan, bank: &ProbeBank) -> Result<Vec<Real>> {
    match plan.weighting {
        Weighting::Soft => Ok(soft_weights(bank, plan.power)),
        Weighting::TopK(k) => {
            let set = crate::probes::top_k_heads(bank, k)?;
            let mut w = vec![0.0; bank.cells()];
            for (l, h) in set.heads {
                w[bank.cell_index(l, h)] = 1.0;
            }
            Ok(w)
        }
    }
}

/// Monitoring threshold: median minus population standard deviation of the
/// top-`k` probe accuracies.
pub fn threshold_tau(bank: &ProbeBank, k: usize) -> Result<Real> {
    let set = crate::probes::top_k_heads(bank, k)?;
    let accs: Vec<Real> = set
        .heads
        .iter()
        .map(|&(l, h)| bank.probe(l, h).acc)
        .collect();
    Ok(ops::median(&accs)? - ops::stddev(&accs)?)
}

/// Linearly decaying strength: `α0` at `t0`, 0 from `horizon` onward.
pub fn decay_alpha(alpha0: Real, t: usize, t0: usize, horizon: usize) -> Result<Real> {
    if horizon <= t0 {
        return Err(Error::InvalidArgument(format!(
            "decay horizon {horizon} must lie beyond the start step {t0}"
        )));
    }
    if t < t0 {
        return Err(Error::InvalidArgument(format!(
            "decay evaluated at step {t} before the start step {t0}"
        )));
    }
    let frac = (t - t0) as Real / (horizon - t0) as Real;
    Ok(alpha0 * (1.0 - frac).max(0.0))
}
