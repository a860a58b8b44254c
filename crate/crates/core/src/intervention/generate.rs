//! The steered autoregressive generation loop.
//!
//! Step `t` produces the token at absolute position `t`: the model forwards
//! the newest committed token (position `t−1`), the resulting logits are
//! sampled, and the forward's pre-intervention activation record becomes
//! the freshest observable state for step `t+1`. The per-step order is
//!
//! 1. read the monitored probes on the freshest available record,
//! 2. at scheduled steps in the self-monitored mode, update the weights,
//! 3. build the injection hook `δ_{l,h} = α·w_{l,h}·σ_{l,h}·θ_{l,h}`,
//! 4. forward with the hook, 5. sample, 6. append a trace row.
//!
//! Because the hook must be fixed *before* the forward, the monitor at step
//! `t` sees the record of position `t−2` — the freshest activations that
//! exist at decision time, which already carry the downstream effect of all
//! earlier injections but never the current step's. With a single-token
//! prefix the first step has no record at all and reads a neutral
//! confidence of exactly 1/2.

use crate::error::{Error, Result};
use crate::math::rng::Rng;
use crate::model::{
    forward_step, sample_token, ActivationRecord, Hook, KvCache, ModelConfig, TransformerModel,
};
use crate::probes::top_k_heads;
use crate::{Real, Token};

use super::monitor::{monitor, MonitorReading, TraitMonitor, REMOVAL_TAU};
use super::plan::{
    decay_alpha, initial_weights, scheduled, threshold_tau, InterventionMode, InterventionPlan,
};

/// Monitoring state of every steered trait.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorState {
    pub traits: Vec<TraitMonitor>,
}

/// Builds the start-of-generation state for `plan`: initial weights from
/// the weighting rule, monitored heads, and the success threshold (learned
/// τ for addition, fixed 0.5 for removal).
pub fn init_monitor_state(plan: &InterventionPlan) -> Result<MonitorState> {
    let removal = plan.alpha < 0.0;
    let mut traits = Vec::with_capacity(plan.traits.len());
    for tb in &plan.traits {
        let heads = top_k_heads(&tb.logistic, plan.monitor_k)?;
        let weights = initial_weights(plan, &tb.logistic)?;
        let tau = if removal {
            REMOVAL_TAU
        } else {
            threshold_tau(&tb.logistic, plan.monitor_k)?
        };
        traits.push(TraitMonitor {
            name: tb.name().to_string(),
            w_init: weights.clone(),
            weights,
            heads,
            tau,
            removal,
            c_prev: None,
            delta: 0.0,
        });
    }
    Ok(MonitorState { traits })
}

/// Assembles the per-head injection for one step: every trait contributes
/// `step_alpha · w_{l,h} · σ_{l,h} · θ_{l,h}` on its active cells, summed
/// across traits. Returns `None` when nothing would be injected.
pub fn build_hook(
    plan: &InterventionPlan,
    state: &MonitorState,
    config: &ModelConfig,
    step_alpha: Real,
) -> Result<Option<Hook>> {
    if plan.mode == InterventionMode::None || step_alpha == 0.0 {
        return Ok(None);
    }
    let mut hook = Hook::empty(config);
    for (tb, tm) in plan.traits.iter().zip(&state.traits) {
        let bank = tb.direction_bank(plan.direction_kind)?;
        for l in 0..config.num_layers {
            for h in 0..config.num_heads {
                let w = tm.weights[config.cell_index(l, h)];
                if w == 0.0 {
                    continue;
                }
                let probe = bank.probe(l, h);
                let mut delta = probe.theta.clone();
                let scale = step_alpha * w * probe.sigma;
                for v in delta.as_mut_slice() {
                    *v *= scale;
                }
                hook.add(config, l, h, delta);
            }
        }
    }
    Ok(if hook.is_empty() { None } else { Some(hook) })
}

/// Monitor numbers of one trait at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct TraitStepInfo {
    pub c_median: Real,
    pub c_mean: Real,
    pub c_std: Real,
    /// Most recent scheduled `Δ` (0 before the second scheduled step).
    pub delta: Real,
    /// Injected mass `α(t) · Σ_{l,h} w_{l,h}(t)`; 0 off the schedule.
    pub mass: Real,
}

/// One generated step of a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    /// Absolute position of the sampled token.
    pub step: usize,
    pub token: Token,
    /// Whether this step was on the injection schedule (mode ≠ none).
    pub intervened: bool,
    /// Per-trait monitor numbers, in plan order.
    pub traits: Vec<TraitStepInfo>,
}

/// Everything a steered generation produced.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationTrace {
    /// Prefix followed by the generated tokens.
    pub tokens: Vec<Token>,
    pub prefix_len: usize,
    /// Resolved first steered step `t0`.
    pub start: usize,
    pub trait_names: Vec<String>,
    pub steps: Vec<TraceStep>,
}

impl GenerationTrace {
    /// The generated suffix (everything after the prefix).
    pub fn generated(&self) -> &[Token] {
        &self.tokens[self.prefix_len..]
    }

    /// Renders the trace as CSV, one row per (step, trait):
    /// `step,token,intervened,trait,c_median,c_mean,c_std,delta,mass`
    /// with `intervened` ∈ {0, 1}. Traces without monitored traits render
    /// as the bare header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,token,intervened,trait,c_median,c_mean,c_std,delta,mass\n");
        for step in &self.steps {
            for (name, info) in self.trait_names.iter().zip(&step.traits) {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    step.step,
                    step.token,
                    step.intervened as u8,
                    name,
                    info.c_median,
                    info.c_mean,
                    info.c_std,
                    info.delta,
                    info.mass
                ));
            }
        }
        out
    }
}

/// Runs one steered generation: `length` tokens sampled at `temperature`
/// after `prefix`, with the plan's injection and (in the self-monitored
/// mode) weight adaptation. The probe monitor is read at every step for the
/// trace; weights change only at scheduled steps.
pub fn generate(
    model: &TransformerModel,
    plan: &InterventionPlan,
    prefix: &[Token],
    length: usize,
    temperature: Real,
    seed: u64,
) -> Result<GenerationTrace> {
    let config = &model.config;
    plan.validate(config)?;
    if prefix.is_empty() {
        return Err(Error::Empty("generation prefix"));
    }
    if length == 0 {
        return Err(Error::InvalidArgument(
            "generation length must be at least 1".into(),
        ));
    }
    let m = prefix.len();
    let total = m + length;
    if total > config.max_context {
        return Err(Error::ContextOverflow {
            position: total - 1,
            max_context: config.max_context,
        });
    }
    let t0 = plan.start.unwrap_or(m);
    if t0 < m {
        return Err(Error::InvalidArgument(format!(
            "steering start {t0} lies inside the {m}-token prefix"
        )));
    }

    let mut state = init_monitor_state(plan)?;
    let mut rng = Rng::from_seed(seed);
    let mut cache = KvCache::new(config);
    let mut tokens = prefix.to_vec();

    // Encode all but the final prefix token; that one is forwarded inside
    // the loop so the first generated step can already steer it.
    let mut last_record: Option<ActivationRecord> = None;
    for &tok in &prefix[..m - 1] {
        last_record = Some(forward_step(model, &mut cache, tok, None)?.record);
    }

    let mut steps = Vec::with_capacity(length);
    for t in m..total {
        // 1. Read the probes on the freshest pre-intervention activations.
        let mut readings: Vec<MonitorReading> = Vec::with_capacity(state.traits.len());
        for (tb, tm) in plan.traits.iter().zip(&state.traits) {
            readings.push(match &last_record {
                Some(record) => monitor(record, &tb.logistic, &tm.heads)?,
                None => MonitorReading::neutral(tm.heads.heads.len()),
            });
        }

        let on_schedule = scheduled(t, t0, plan.sparse_step);
        let intervened = plan.mode != InterventionMode::None && on_schedule;

        // 2. Scheduled self-monitoring updates the weights before injection.
        if plan.mode == InterventionMode::Smitin && on_schedule {
            for (tm, reading) in state.traits.iter_mut().zip(&readings) {
                tm.update_weights(reading.median);
                debug_assert!(tm.weights_in_bounds());
            }
        }

        // 3. Strength at this step; the decay baseline ramps to zero over
        // the generation horizon.
        let step_alpha = if !intervened {
            0.0
        } else if plan.mode == InterventionMode::WeightDecay {
            decay_alpha(plan.alpha, t, t0, total)?
        } else {
            plan.alpha
        };
        let hook = build_hook(plan, &state, config, step_alpha)?;

        // 4–5. Forward the newest committed token, steered, and sample.
        let out = forward_step(model, &mut cache, tokens[t - 1], hook.as_ref())?;
        let token = sample_token(&out.logits, temperature, &mut rng)?;
        tokens.push(token);
        last_record = Some(out.record);

        // 6. Trace row.
        let infos = state
            .traits
            .iter()
            .zip(&readings)
            .map(|(tm, reading)| TraitStepInfo {
                c_median: reading.median,
                c_mean: reading.mean,
                c_std: reading.std,
                delta: tm.delta,
                mass: step_alpha * tm.weight_sum(),
            })
            .collect();
        steps.push(TraceStep {
            step: t,
            token,
            intervened,
            traits: infos,
        });
    }

    Ok(GenerationTrace {
        tokens,
        prefix_len: m,
        start: t0,
        trait_names: plan.traits.iter().map(|tb| tb.name().to_string()).collect(),
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intervention::plan::{TraitBanks, Weighting};
    use crate::probes::bank_from_accs;

    fn tiny_model(seed: u64) -> TransformerModel {
        TransformerModel::init(
            ModelConfig {
                num_layers: 2,
                num_heads: 2,
                head_dim: 4,
                vocab_size: 16,
                max_context: 48,
            },
            seed,
        )
        .unwrap()
    }

    fn banked_traits() -> Vec<TraitBanks> {
        vec![TraitBanks {
            logistic: bank_from_accs(2, 2, 4, &[0.6, 0.9, 0.8, 0.7]),
            mass_mean: None,
        }]
    }

    fn fit_plan(mut plan: InterventionPlan) -> InterventionPlan {
        plan.monitor_k = 4;
        plan
    }

    #[test]
    fn zero_strength_plans_reproduce_the_baseline_stream() {
        let model = tiny_model(81);
        let prefix = [1u32, 5, 9];
        let mut baseline = InterventionPlan::baseline();
        baseline.traits = banked_traits();
        baseline.monitor_k = 4;
        let base = generate(&model, &baseline, &prefix, 20, 1.0, 99).unwrap();

        for plan in [
            fit_plan(InterventionPlan::smitin(0.0, banked_traits())),
            fit_plan(InterventionPlan::original_iti(0.0, 2, banked_traits())),
            fit_plan(InterventionPlan::weight_decay(0.0, 2, banked_traits())),
        ] {
            let got = generate(&model, &plan, &prefix, 20, 1.0, 99).unwrap();
            assert_eq!(got.tokens, base.tokens);
        }
    }

    #[test]
    fn intervened_flags_sit_exactly_on_the_schedule() {
        let model = tiny_model(82);
        let plan = fit_plan(InterventionPlan::smitin(4.0, banked_traits()));
        let trace = generate(&model, &plan, &[1, 2, 3], 12, 1.0, 5).unwrap();
        assert_eq!(trace.start, 3);
        for step in &trace.steps {
            let scheduled_here = (step.step - 3) % 5 == 0;
            assert_eq!(step.intervened, scheduled_here, "step {}", step.step);
            if !step.intervened {
                for info in &step.traits {
                    assert_eq!(info.mass, 0.0);
                }
            }
        }
    }

    #[test]
    fn monitor_readings_are_invariant_to_strength_at_the_first_steered_step() {
        let model = tiny_model(83);
        let prefix = [2u32, 7, 11, 3];
        let start = Some(8);
        let mut weak = fit_plan(InterventionPlan::smitin(0.0, banked_traits()));
        weak.start = start;
        let mut strong = fit_plan(InterventionPlan::smitin(9.0, banked_traits()));
        strong.start = start;

        let a = generate(&model, &weak, &prefix, 16, 1.0, 7).unwrap();
        let b = generate(&model, &strong, &prefix, 16, 1.0, 7).unwrap();
        // Identical RNG stream and no injection before t0 = 8: tokens match
        // up to the first steered step, and the monitor reading at t0 itself
        // is identical too — it sees only pre-intervention records, while
        // the sampled token at t0 already feels the hook.
        for (sa, sb) in a.steps.iter().zip(&b.steps).take_while(|(s, _)| s.step <= 8) {
            if sa.step < 8 {
                assert_eq!(sa.token, sb.token);
            }
            assert_eq!(sa.traits[0].c_median, sb.traits[0].c_median);
            assert_eq!(sa.traits[0].c_std, sb.traits[0].c_std);
        }
    }

    #[test]
    fn constant_top_k_injection_reports_constant_mass() {
        let model = tiny_model(84);
        let plan = fit_plan(InterventionPlan::original_iti(8.0, 2, banked_traits()));
        let trace = generate(&model, &plan, &[1, 2], 10, 1.0, 11).unwrap();
        for step in &trace.steps {
            assert!(step.intervened);
            assert_eq!(step.traits[0].mass, 16.0); // α·Σw = 8·(1+1)
            assert_eq!(step.traits[0].delta, 0.0); // no self-monitoring
        }
    }

    #[test]
    fn decay_mode_ramps_the_mass_linearly_to_zero() {
        let model = tiny_model(85);
        let plan = fit_plan(InterventionPlan::weight_decay(8.0, 2, banked_traits()));
        let trace = generate(&model, &plan, &[1, 2, 3, 4], 20, 1.0, 13).unwrap();
        let masses: Vec<Real> = trace.steps.iter().map(|s| s.traits[0].mass).collect();
        assert_eq!(masses[0], 16.0); // full strength at t0
        for pair in masses.windows(2) {
            assert!(pair[1] < pair[0]);
        }
        // t0 = 4, horizon = 24: at step t the ramp is 1 − (t−4)/20.
        for (i, &mass) in masses.iter().enumerate() {
            let t = 4 + i;
            let want = 16.0 * (1.0 - (t - 4) as Real / 20.0);
            assert!((mass - want).abs() < 1e-12);
        }
    }

    #[test]
    fn single_token_prefix_reads_neutral_confidence_first() {
        let model = tiny_model(86);
        let plan = fit_plan(InterventionPlan::smitin(2.0, banked_traits()));
        let trace = generate(&model, &plan, &[3], 8, 1.0, 17).unwrap();
        assert_eq!(trace.tokens.len(), 9);
        assert_eq!(trace.steps[0].traits[0].c_median, 0.5);
        assert_eq!(trace.steps[0].traits[0].c_std, 0.0);
        // Later steps see real records.
        assert_ne!(trace.steps[2].traits[0].c_std, 0.0);
    }

    #[test]
    fn invalid_generation_requests_are_rejected() {
        let model = tiny_model(87);
        let mut plan = InterventionPlan::baseline();
        plan.monitor_k = 4;
        assert!(matches!(
            generate(&model, &plan, &[], 4, 1.0, 1),
            Err(Error::Empty(_))
        ));
        assert!(matches!(
            generate(&model, &plan, &[1, 2], 0, 1.0, 1),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            generate(&model, &plan, &[1, 2], 47, 1.0, 1),
            Err(Error::ContextOverflow { .. })
        ));
        let mut early = fit_plan(InterventionPlan::smitin(1.0, banked_traits()));
        early.start = Some(1);
        assert!(matches!(
            generate(&model, &early, &[1, 2, 3], 4, 1.0, 1),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn removal_plans_monitor_against_the_fixed_threshold() {
        let plan = fit_plan(InterventionPlan::smitin(-6.0, banked_traits()));
        let state = init_monitor_state(&plan).unwrap();
        assert!(state.traits[0].removal);
        assert_eq!(state.traits[0].tau, REMOVAL_TAU);
        let addition = fit_plan(InterventionPlan::smitin(6.0, banked_traits()));
        let state = init_monitor_state(&addition).unwrap();
        assert!(!state.traits[0].removal);
        // Accs {0.9, 0.8, 0.7, 0.6}: median 0.75, population std √0.0125.
        let want = 0.75 - 0.0125f64.sqrt();
        assert!((state.traits[0].tau - want).abs() < 1e-12);
    }

    #[test]
    fn two_opposed_traits_cancel_their_injection() {
        // Same bank twice, once with negated directions: δ sums to zero,
        // so the token stream matches the unsteered baseline exactly.
        let model = tiny_model(88);
        let bank = bank_from_accs(2, 2, 4, &[0.6, 0.9, 0.8, 0.7]);
        let mut flipped = bank.clone();
        for p in &mut flipped.probes {
            for v in p.theta.as_mut_slice() {
                *v = -*v;
            }
        }
        flipped.trait_name = "anti".into();
        let plan = fit_plan(InterventionPlan::original_iti(
            8.0,
            2,
            vec![
                TraitBanks { logistic: bank.clone(), mass_mean: None },
                TraitBanks { logistic: flipped, mass_mean: None },
            ],
        ));
        let steered = generate(&model, &plan, &[1, 2, 3], 16, 1.0, 21).unwrap();

        let mut baseline = InterventionPlan::baseline();
        baseline.monitor_k = 4;
        let base = generate(&model, &baseline, &[1, 2, 3], 16, 1.0, 21).unwrap();
        assert_eq!(steered.tokens, base.tokens);
    }

    #[test]
    fn trace_csv_has_one_row_per_step_and_trait() {
        let model = tiny_model(89);
        let plan = fit_plan(InterventionPlan::smitin(3.0, banked_traits()));
        let trace = generate(&model, &plan, &[1, 2], 6, 1.0, 23).unwrap();
        let csv = trace.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "step,token,intervened,trait,c_median,c_mean,c_std,delta,mass"
        );
        assert_eq!(lines.len(), 1 + 6);
        for row in &lines[1..] {
            assert_eq!(row.split(',').count(), 9);
            assert!(row.contains(",fixture,"));
        }
    }

    #[test]
    fn soft_weighted_injection_uses_graded_mass() {
        let model = tiny_model(90);
        let mut plan = fit_plan(InterventionPlan::smitin(2.0, banked_traits()));
        plan.weighting = Weighting::Soft;
        let trace = generate(&model, &plan, &[1, 2, 3], 6, 1.0, 29).unwrap();
        let first = &trace.steps[0];
        assert!(first.intervened);
        // Soft weights of accs {0.6, 0.9, 0.8, 0.7} with c=3:
        // {0, 1, (2/3)^3, (1/3)^3}; mass = α · Σw unless monitoring
        // already switched heads off at t0 (C̄ ≥ τ); either way it is
        // bounded by α · Σw_init.
        let w_sum = 1.0 + (2.0f64 / 3.0).powi(3) + (1.0f64 / 3.0).powi(3);
        assert!(first.traits[0].mass <= 2.0 * w_sum + 1e-12);
        assert!(first.traits[0].mass >= 0.0);
    }
}
