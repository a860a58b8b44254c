//! Objective evaluation of steered generations.
//!
//! * **Success rate** — fraction of post-start steps whose monitored median
//!   confidence clears the threshold (falls below 0.5 for removal plans).
//! * **Ground-truth rate** — the corpus oracle applied to the generated
//!   suffix; the external check that the probes steer the real trait.
//! * **Simultaneous success** — for multi-trait steering, the fraction of
//!   generations where *every* target trait is present more than half the
//!   time.
//! * **FFD** — Fréchet distance between diagonal-covariance Gaussian fits
//!   of two embedding sets; measures how far steered generations drift
//!   from the unsteered distribution.
//! * **Similarity** — cosine similarity of frozen-model embeddings
//!   (mean-pooled final hidden states).
//! * **Spearman ρ** — rank correlation validating the monitor-based
//!   success rate against the oracle.

use crate::corpus::{trait_oracle, TraitSpec};
use crate::error::{Error, Result};
use crate::intervention::{GenerationTrace, REMOVAL_TAU};
use crate::model::{forward_sequence, TransformerModel};
use crate::{Real, RealVector, Token};

// ─── Success rates ───────────────────────────────────────────────────────────

fn post_start_medians(trace: &GenerationTrace, trait_index: usize) -> Result<Vec<Real>> {
    if trait_index >= trace.trait_names.len() {
        return Err(Error::InvalidArgument(format!(
            "trait index {trait_index} out of range ({} monitored traits)",
            trace.trait_names.len()
        )));
    }
    let medians: Vec<Real> = trace
        .steps
        .iter()
        .filter(|s| s.step >= trace.start)
        .map(|s| s.traits[trait_index].c_median)
        .collect();
    if medians.is_empty() {
        return Err(Error::Empty("post-start trace steps"));
    }
    Ok(medians)
}

/// Fraction of post-start steps whose monitored median confidence exceeds
/// `tau`. Steps before the start step never count.
pub fn success_rate(trace: &GenerationTrace, trait_index: usize, tau: Real) -> Result<Real> {
    let medians = post_start_medians(trace, trait_index)?;
    let hits = medians.iter().filter(|&&c| c > tau).count();
    Ok(hits as Real / medians.len() as Real)
}

/// Success rate of a removal plan: fraction of post-start steps whose
/// median confidence is *below* the fixed threshold 0.5.
pub fn removal_success_rate(trace: &GenerationTrace, trait_index: usize) -> Result<Real> {
    let medians = post_start_medians(trace, trait_index)?;
    let hits = medians.iter().filter(|&&c| c < REMOVAL_TAU).count();
    Ok(hits as Real / medians.len() as Real)
}

/// Oracle presence fraction of a trait on generated tokens (pass the
/// generated suffix, not the prompt).
pub fn ground_truth_rate(generated: &[Token], tr: &TraitSpec) -> Result<Real> {
    trait_oracle(generated, tr)
}

/// Fraction of generations in which every target trait's presence fraction
/// exceeds one half. `fractions[song][trait]`.
pub fn simultaneous_success(fractions: &[Vec<Real>]) -> Result<Real> {
    if fractions.is_empty() {
        return Err(Error::Empty("simultaneous-success generations"));
    }
    let n_traits = fractions[0].len();
    if n_traits == 0 {
        return Err(Error::Empty("simultaneous-success trait set"));
    }
    for (i, row) in fractions.iter().enumerate() {
        if row.len() != n_traits {
            return Err(Error::DimMismatch(format!(
                "generation {i} has {} trait fractions, expected {n_traits}",
                row.len()
            )));
        }
    }
    let hits = fractions
        .iter()
        .filter(|row| row.iter().all(|&f| f > 0.5))
        .count();
    Ok(hits as Real / fractions.len() as Real)
}

// ─── Embeddings ──────────────────────────────────────────────────────────────

/// Frozen-model sequence embedding: the mean over positions of the
/// final-layer hidden state (pre-logits residual stream).
pub fn embed(model: &TransformerModel, tokens: &[Token]) -> Result<RealVector> {
    let out = forward_sequence(model, tokens)?;
    let (rows, dim) = out.hidden.shape();
    let mut pooled = RealVector::zeros(dim);
    for r in 0..rows {
        pooled.add_scaled(out.hidden.row(r), 1.0);
    }
    for v in pooled.as_mut_slice() {
        *v /= rows as Real;
    }
    Ok(pooled)
}

/// Standard cosine similarity, clamped into [−1, 1]. Zero-norm inputs are
/// rejected.
pub fn cosine_similarity(a: &RealVector, b: &RealVector) -> Result<Real> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch(format!(
            "cosine of vectors with dims {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let dot = crate::math::ops::dot(a, b);
    let na = crate::math::ops::dot(a, a).sqrt();
    let nb = crate::math::ops::dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine of a zero vector".into()));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Fréchet distance between diagonal-covariance Gaussian fits of two
/// embedding sets: `Σ_d (μ_A − μ_B)² + (√v_A − √v_B)²` with per-dimension
/// means μ and population variances v. Exactly 0 for identical sets,
/// symmetric, and non-negative by construction.
pub fn ffd(set_a: &[RealVector], set_b: &[RealVector]) -> Result<Real> {
    for (set, name) in [(set_a, "A"), (set_b, "B")] {
        if set.len() < 2 {
            return Err(Error::Degenerate(format!(
                "embedding set {name} holds {} points; a Gaussian fit needs at least 2",
                set.len()
            )));
        }
    }
    let dim = set_a[0].dim();
    for v in set_a.iter().chain(set_b) {
        if v.dim() != dim {
            return Err(Error::DimMismatch(format!(
                "embedding of dim {} in sets of dim {dim}",
                v.dim()
            )));
        }
    }
    let moments = |set: &[RealVector], d: usize| -> (Real, Real) {
        let n = set.len() as Real;
        let mean = set.iter().map(|v| v[d]).sum::<Real>() / n;
        let var = set.iter().map(|v| (v[d] - mean).powi(2)).sum::<Real>() / n;
        (mean, var)
    };
    let mut total = 0.0;
    for d in 0..dim {
        let (mu_a, var_a) = moments(set_a, d);
        let (mu_b, var_b) = moments(set_b, d);
        total += (mu_a - mu_b).powi(2) + (var_a.sqrt() - var_b.sqrt()).powi(2);
    }
    Ok(total)
}

// ─── Rank correlation ────────────────────────────────────────────────────────

/// Ranks with ties resolved to the average of their positions (1-based).
fn average_ranks(xs: &[Real]) -> Vec<Real> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share the average 1-based rank
        let avg = (i + j) as Real / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties: the Pearson
/// correlation of the two rank vectors, clamped into [−1, 1]. Constant
/// inputs have undefined ranks and are rejected.
pub fn spearman(x: &[Real], y: &[Real]) -> Result<Real> {
    if x.len() != y.len() {
        return Err(Error::DimMismatch(format!(
            "rank correlation of lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "rank correlation needs at least 3 pairs, got {}",
            x.len()
        )));
    }
    for (vals, name) in [(x, "first"), (y, "second")] {
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{name} rank-correlation input")));
        }
        if vals.iter().all(|&v| v == vals[0]) {
            return Err(Error::Degenerate(format!(
                "{name} rank-correlation input is constant"
            )));
        }
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as Real;
    let mean = (n + 1.0) / 2.0; // both rank vectors average to (n+1)/2
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mean) * (b - mean);
        var_x += (a - mean).powi(2);
        var_y += (b - mean).powi(2);
    }
    Ok((cov / (var_x * var_y).sqrt()).clamp(-1.0, 1.0))
}

// ─── Reports ─────────────────────────────────────────────────────────────────

/// One evaluated (trait, mode) combination.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub trait_name: String,
    pub mode: String,
    /// Number of generations behind the averages.
    pub n: usize,
    /// Mean monitored success rate over generations.
    pub success_rate: Real,
    /// Mean oracle presence fraction over generations.
    pub ground_truth_rate: Real,
    /// Fréchet feature distance of steered vs baseline embeddings.
    pub ffd: Real,
    /// Mean cosine similarity to the seed-paired baseline generation.
    pub similarity: Real,
    /// Rank correlation of per-generation success vs oracle rates;
    /// `None` when either side is constant.
    pub spearman_rho: Option<Real>,
}

/// Full evaluation outcome across traits and modes.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub n_generations: usize,
    pub base_seed: u64,
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        for row in &self.rows {
            let rates_ok = (0.0..=1.0).contains(&row.success_rate)
                && (0.0..=1.0).contains(&row.ground_truth_rate);
            let rho_ok = row
                .spearman_rho
                .is_none_or(|r| (-1.0..=1.0).contains(&r));
            if !rates_ok || !rho_ok || row.ffd < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "evaluation row for {}/{} leaves its domain",
                    row.trait_name, row.mode
                )));
            }
        }
        Ok(())
    }

    /// Machine-readable form, one line per row.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("trait,mode,n,success_rate,ground_truth_rate,ffd,similarity,spearman_rho\n");
        for r in &self.rows {
            let rho = r.spearman_rho.map_or(String::new(), |v| v.to_string());
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.trait_name,
                r.mode,
                r.n,
                r.success_rate,
                r.ground_truth_rate,
                r.ffd,
                r.similarity,
                rho
            ));
        }
        out
    }

    /// Human-readable table (success rate first, then FFD and similarity).
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<10} {:<14} {:>5} {:>14} {:>10} {:>12} {:>12} {:>10}\n",
            "trait", "mode", "n", "success rate", "ffd", "similarity", "ground truth", "spearman"
        );
        for r in &self.rows {
            let rho = r
                .spearman_rho
                .map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
            out.push_str(&format!(
                "{:<10} {:<14} {:>5} {:>13.1}% {:>10.4} {:>12.4} {:>11.1}% {:>10}\n",
                r.trait_name,
                r.mode,
                r.n,
                r.success_rate * 100.0,
                r.ffd,
                r.similarity,
                r.ground_truth_rate * 100.0,
                rho
            ));
        }
        out
    }
}
