//! The seven subcommands. Each one is a thin orchestration layer over the
//! core library: build data, train, fit probes, generate, evaluate, ablate,
//! and emit plot-ready traces. Every command is deterministic given its
//! config, and every CSV it writes carries the config hash.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use steer_core::corpus::{save_dataset, TraitSpec};
use steer_core::intervention::{
    threshold_tau, GenerationTrace, InterventionMode, InterventionPlan, TraitBanks, Weighting,
};
use steer_core::metrics::{
    cosine_similarity, embed, ffd, ground_truth_rate, removal_success_rate, spearman,
    success_rate, EvalReport, EvalRow,
};
use steer_core::model::{
    model_hash, save_checkpoint, sequence_loss, train_model, TrainHyper, TrainLog,
    TransformerModel,
};
use steer_core::probes::{
    accuracy_map, extract_activations, mass_mean_bank_from_tables, save_bank,
    train_bank_from_tables, ActivationTable, ProbeBank,
};
use steer_core::{Error, Real, RealVector, Token};

use crate::artifacts::{read_generation, write_generation, write_stamped_csv};
use crate::config::ExperimentConfig;
use crate::pipeline::{
    build_plan, effective_alpha, generate_many, generation_seed, heldout_continuations,
    load_model, load_trait_banks, logistic_bank_path, mass_mean_bank_path, model_corpus,
    plan_for_mode, prefix_filter_for, prefix_pool, probe_hyper, probing_split, world,
};

/// Table-II-style experiment matrix: unsteered baseline plus the three
/// intervention flavours.
pub const EVAL_MODES: [InterventionMode; 4] = [
    InterventionMode::None,
    InterventionMode::OriginalIti,
    InterventionMode::WeightDecay,
    InterventionMode::Smitin,
];

/// Held-out sequences for the training-loss check come from a corpus stream
/// never touched by training (`corpus_seed + 1`).
const HELD_OUT_SEQUENCES: usize = 128;
/// Cap on corpus-side FFD reference embeddings.
const FFD_REFERENCE_CAP: usize = 256;

fn hex32(bytes: &[u8; 32]) -> String {
    use std::fmt::Write as _;
    bytes.iter().fold(String::new(), |mut acc, b| {
        write!(acc, "{b:02x}").unwrap();
        acc
    })
}

// ─── gen-corpus ──────────────────────────────────────────────────────────────

pub struct CorpusPaths {
    pub probe_train: PathBuf,
    pub probe_test: PathBuf,
    pub model_corpus: PathBuf,
}

/// Writes the probing split and the transformer training corpus as text
/// files. Re-running with the same config rewrites identical bytes.
pub fn cmd_gen_corpus(cfg: &ExperimentConfig) -> Result<CorpusPaths> {
    let w = world(cfg);
    let names = w.trait_names();
    let split = probing_split(cfg, &w)?;
    let corpus = model_corpus(cfg, &w)?;
    let dir = cfg.out_dir.join("corpus");
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating directory {}", dir.display()))?;
    let paths = CorpusPaths {
        probe_train: dir.join("probe_train.txt"),
        probe_test: dir.join("probe_test.txt"),
        model_corpus: dir.join("model_corpus.txt"),
    };
    save_dataset(&paths.probe_train, &split.train, &names)?;
    save_dataset(&paths.probe_test, &split.test, &names)?;
    save_dataset(&paths.model_corpus, &corpus, &names)?;
    println!(
        "wrote {} probing train rows, {} probing test rows, {} corpus sequences under {}",
        split.train.len(),
        split.test.len(),
        corpus.len(),
        dir.display()
    );
    Ok(paths)
}

// ─── train ───────────────────────────────────────────────────────────────────

pub struct TrainOutcome {
    pub model: TransformerModel,
    pub log: TrainLog,
    pub held_out_loss: Real,
    pub loss_csv: String,
}

/// Trains the reference transformer on the synthetic corpus, saves the
/// checkpoint, and prints the loss curve as CSV (one row per logging step).
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    let w = world(cfg);
    let corpus = model_corpus(cfg, &w)?;
    let tokens: Vec<Vec<Token>> = corpus.into_iter().map(|s| s.tokens).collect();
    let hyper = TrainHyper {
        lr: cfg.learning_rate,
        steps: cfg.train_steps,
        batch: cfg.batch_size,
        seed: cfg.train_seed,
        log_every: cfg.log_every,
        ..TrainHyper::default()
    };
    let (model, log) = train_model(&tokens, &crate::pipeline::REFERENCE_MODEL, &hyper)
        .context("training the transformer")?;

    if let Some(parent) = cfg.checkpoint.parent() {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating directory {}", parent.display()))?;
    }
    save_checkpoint(&model, &cfg.checkpoint)
        .with_context(|| format!("saving checkpoint {}", cfg.checkpoint.display()))?;

    let mut held_cfg = cfg.clone();
    held_cfg.corpus_seed = cfg.corpus_seed + 1;
    held_cfg.corpus_sequences = HELD_OUT_SEQUENCES;
    let held_out = model_corpus(&held_cfg, &w)?;
    let held_out_loss = held_out
        .iter()
        .map(|s| sequence_loss(&model, &s.tokens))
        .sum::<steer_core::Result<Real>>()?
        / held_out.len() as Real;

    let mut loss_csv = String::from("step,loss\n");
    for (step, loss) in &log.history {
        loss_csv.push_str(&format!("{step},{loss}\n"));
    }
    write_stamped_csv(&cfg.out_dir.join("train_loss.csv"), &cfg.hash(), &loss_csv)?;
    print!("{loss_csv}");
    println!("held_out_loss = {held_out_loss}");
    println!("model_hash = {}", hex32(&model_hash(&model)));
    println!("checkpoint written to {}", cfg.checkpoint.display());
    Ok(TrainOutcome {
        model,
        log,
        held_out_loss,
        loss_csv,
    })
}

// ─── probe ───────────────────────────────────────────────────────────────────

pub struct ProbeOutcome {
    /// One entry per world trait, in world order.
    pub banks: Vec<TraitBanks>,
    /// `(trait, "(max% / τ)")` summary per trait.
    pub summaries: Vec<(String, String)>,
}

/// Fits the full probe grid for every trait (logistic, plus mass-mean if
/// configured), saves the banks, and writes per-trait accuracy maps.
pub fn cmd_probe(cfg: &ExperimentConfig) -> Result<ProbeOutcome> {
    let model = load_model(cfg)?;
    let w = world(cfg);
    let names = w.trait_names();
    let split = probing_split(cfg, &w)?;
    let train = extract_activations(&model, &split.train, &names)?;
    let test = extract_activations(&model, &split.test, &names)?;
    let hyper = probe_hyper(cfg);

    let banks: Vec<TraitBanks> = names
        .par_iter()
        .map(|name| -> Result<TraitBanks> {
            let logistic = train_bank_from_tables(
                &model,
                &train,
                &test,
                name,
                &hyper,
                Some(cfg.dataset_seed),
            )
            .with_context(|| format!("fitting logistic probes for {name}"))?;
            let mass_mean = if cfg.mass_mean {
                Some(
                    mass_mean_bank_from_tables(&model, &train, &test, name, Some(cfg.dataset_seed))
                        .with_context(|| format!("fitting mass-mean probes for {name}"))?,
                )
            } else {
                None
            };
            Ok(TraitBanks {
                logistic,
                mass_mean,
            })
        })
        .collect::<Result<_>>()?;

    std::fs::create_dir_all(&cfg.bank_dir)
        .with_context(|| format!("creating directory {}", cfg.bank_dir.display()))?;
    let mut summaries = Vec::new();
    for (name, tb) in names.iter().zip(&banks) {
        save_bank(&tb.logistic, &logistic_bank_path(cfg, name))?;
        if let Some(mm) = &tb.mass_mean {
            save_bank(mm, &mass_mean_bank_path(cfg, name))?;
        }
        let map = accuracy_map(&tb.logistic, cfg.monitor_k)?;
        write_stamped_csv(
            &cfg.out_dir.join(format!("accuracy_{name}.csv")),
            &cfg.hash(),
            &map.to_csv(),
        )?;
        println!("{name} {}", map.summary);
        summaries.push((name.clone(), map.summary.clone()));
    }
    Ok(ProbeOutcome { banks, summaries })
}

// ─── generate ────────────────────────────────────────────────────────────────

pub struct GenerateOutcome {
    pub traces: Vec<GenerationTrace>,
    pub dir: PathBuf,
}

/// Runs the configured plan (all listed traits jointly) across
/// `n_generations` seeds, writing one trace CSV and one token file each.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<GenerateOutcome> {
    let model = load_model(cfg)?;
    let w = world(cfg);
    let split = probing_split(cfg, &w)?;
    let banks: Vec<TraitBanks> = cfg
        .traits
        .iter()
        .map(|name| load_trait_banks(cfg, &model, name))
        .collect::<Result<_>>()?;
    let plan = build_plan(cfg, banks)?;
    let pool = prefix_pool(
        &split,
        &w,
        &cfg.traits,
        cfg.prefix_len,
        prefix_filter_for(effective_alpha(cfg)),
    )?;
    let traces = generate_many(
        &model,
        &plan,
        &pool,
        cfg.n_generations,
        cfg.gen_len,
        cfg.temperature,
        cfg.base_seed,
    )?;
    let dir = cfg.out_dir.join("generations");
    let hash = cfg.hash();
    for (i, trace) in traces.iter().enumerate() {
        write_generation(&dir, i, &hash, &cfg.mode, generation_seed(cfg.base_seed, i), trace)?;
    }
    println!(
        "wrote {} generations ({} prefix + {} generated tokens each) under {}",
        traces.len(),
        cfg.prefix_len,
        cfg.gen_len,
        dir.display()
    );
    Ok(GenerateOutcome { traces, dir })
}

// ─── eval ────────────────────────────────────────────────────────────────────

/// Per-generation numbers of one (trait, mode) run.
struct GenStat {
    seed: u64,
    success: Real,
    oracle: Real,
    total_mass: Real,
    embedding: RealVector,
}

fn trace_total_mass(trace: &GenerationTrace) -> Real {
    trace
        .steps
        .iter()
        .map(|s| s.traits.iter().map(|t| t.mass).sum::<Real>())
        .sum()
}

fn gen_stat(
    model: &TransformerModel,
    trace: &GenerationTrace,
    spec: &TraitSpec,
    removal: bool,
    tau: Real,
    seed: u64,
) -> Result<GenStat> {
    let success = if removal {
        removal_success_rate(trace, 0)?
    } else {
        success_rate(trace, 0, tau)?
    };
    Ok(GenStat {
        seed,
        success,
        oracle: ground_truth_rate(trace.generated(), spec)?,
        total_mass: trace_total_mass(trace),
        embedding: embed(model, trace.generated())?,
    })
}

/// Rank correlation, with statistically undefined cases (constant input,
/// too few points) reported as absent rather than failing the run.
fn spearman_opt(xs: &[Real], ys: &[Real]) -> Result<Option<Real>> {
    match spearman(xs, ys) {
        Ok(rho) => Ok(Some(rho)),
        Err(Error::Degenerate(_)) | Err(Error::InvalidArgument(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

pub struct EvalOutcome {
    pub report: EvalReport,
    pub report_csv: String,
    pub per_gen_csv: String,
    pub table: String,
}

fn eval_dir(cfg: &ExperimentConfig, trait_name: &str, mode: InterventionMode) -> PathBuf {
    cfg.out_dir
        .join("eval")
        .join(trait_name)
        .join(mode.as_str())
}

/// Runs (or, `from_traces`, re-reads) the traits × modes matrix under
/// paired seeds and prefixes, and assembles the evaluation report.
pub fn cmd_eval(cfg: &ExperimentConfig, from_traces: bool) -> Result<EvalOutcome> {
    let model = load_model(cfg)?;
    let w = world(cfg);
    let split = probing_split(cfg, &w)?;
    let hash = cfg.hash();
    let removal = effective_alpha(cfg) < 0.0;

    let heldout_refs: Vec<RealVector> =
        heldout_continuations(&split, cfg.prefix_len, cfg.gen_len, FFD_REFERENCE_CAP)
            .par_iter()
            .map(|toks| embed(&model, toks).map_err(anyhow::Error::from))
            .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut per_gen_csv = String::from("trait,mode,gen,seed,success,oracle,total_mass\n");
    for trait_name in &cfg.traits {
        let spec = &w.traits[w.trait_index(trait_name).map_err(anyhow::Error::from)?];
        let banks = load_trait_banks(cfg, &model, trait_name)?;
        let tau = threshold_tau(&banks.logistic, cfg.monitor_k).map_err(anyhow::Error::from)?;
        let base_plan = build_plan(cfg, vec![banks])?;
        let pool = prefix_pool(
            &split,
            &w,
            std::slice::from_ref(trait_name),
            cfg.prefix_len,
            prefix_filter_for(effective_alpha(cfg)),
        )?;

        let mut baseline_embeddings: Vec<RealVector> = Vec::new();
        for mode in EVAL_MODES {
            let dir = eval_dir(cfg, trait_name, mode);
            let stats: Vec<GenStat> = if from_traces {
                (0..cfg.n_generations)
                    .into_par_iter()
                    .map(|i| -> Result<GenStat> {
                        let (meta, trace) = read_generation(&dir, i)?;
                        if meta.config_hash != hash {
                            bail!(
                                "stored generation {} under {} was produced by config {}, not {}",
                                i,
                                dir.display(),
                                meta.config_hash,
                                hash
                            );
                        }
                        gen_stat(&model, &trace, spec, removal, tau, meta.seed)
                    })
                    .collect::<Result<_>>()?
            } else {
                let plan = plan_for_mode(&base_plan, mode, cfg.top_k);
                let traces = generate_many(
                    &model,
                    &plan,
                    &pool,
                    cfg.n_generations,
                    cfg.gen_len,
                    cfg.temperature,
                    cfg.base_seed,
                )?;
                traces
                    .par_iter()
                    .enumerate()
                    .map(|(i, trace)| {
                        gen_stat(
                            &model,
                            trace,
                            spec,
                            removal,
                            tau,
                            generation_seed(cfg.base_seed, i),
                        )
                    })
                    .collect::<Result<Vec<_>>>()
                    .and_then(|stats| {
                        for (i, trace) in traces.iter().enumerate() {
                            write_generation(
                                &dir,
                                i,
                                &hash,
                                mode.as_str(),
                                generation_seed(cfg.base_seed, i),
                                trace,
                            )?;
                        }
                        Ok(stats)
                    })?
            };

            if mode == InterventionMode::None {
                baseline_embeddings = stats.iter().map(|s| s.embedding.clone()).collect();
            }
            let n = stats.len() as Real;
            let successes: Vec<Real> = stats.iter().map(|s| s.success).collect();
            let oracles: Vec<Real> = stats.iter().map(|s| s.oracle).collect();
            let refs: &[RealVector] = match cfg.ffd_reference.as_str() {
                "heldout" => &heldout_refs,
                _ => &baseline_embeddings,
            };
            let mode_embeddings: Vec<RealVector> =
                stats.iter().map(|s| s.embedding.clone()).collect();
            let similarity = stats
                .iter()
                .zip(&baseline_embeddings)
                .map(|(s, b)| cosine_similarity(&s.embedding, b).map_err(anyhow::Error::from))
                .sum::<Result<Real>>()?
                / n;
            rows.push(EvalRow {
                trait_name: trait_name.clone(),
                mode: mode.as_str().to_string(),
                n: stats.len(),
                success_rate: successes.iter().sum::<Real>() / n,
                ground_truth_rate: oracles.iter().sum::<Real>() / n,
                ffd: ffd(&mode_embeddings, refs).map_err(anyhow::Error::from)?,
                similarity,
                spearman_rho: spearman_opt(&successes, &oracles)?,
            });
            for (i, s) in stats.iter().enumerate() {
                per_gen_csv.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    trait_name,
                    mode.as_str(),
                    i,
                    s.seed,
                    s.success,
                    s.oracle,
                    s.total_mass
                ));
            }
        }
    }

    let report = EvalReport {
        rows,
        n_generations: cfg.n_generations,
        base_seed: cfg.base_seed,
    };
    report.validate().map_err(anyhow::Error::from)?;
    let report_csv = report.to_csv();
    let table = report.to_table();
    write_stamped_csv(&cfg.out_dir.join("eval").join("report.csv"), &hash, &report_csv)?;
    write_stamped_csv(
        &cfg.out_dir.join("eval").join("per_generation.csv"),
        &hash,
        &per_gen_csv,
    )?;
    print!("{table}");
    Ok(EvalOutcome {
        report,
        report_csv,
        per_gen_csv,
        table,
    })
}

// ─── ablate ──────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    NumData,
    TopK,
    Alpha,
    SparseS,
}

impl std::str::FromStr for AblationAxis {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "num_data" => Ok(AblationAxis::NumData),
            "top_k" => Ok(AblationAxis::TopK),
            "alpha" => Ok(AblationAxis::Alpha),
            "sparse_s" => Ok(AblationAxis::SparseS),
            other => bail!(
                "unknown ablation axis {other:?} (expected num_data, top_k, alpha or sparse_s)"
            ),
        }
    }
}

fn parse_values<T: std::str::FromStr>(axis: &str, raw: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| anyhow::anyhow!("axis {axis}: cannot parse value {s:?}"))
        })
        .collect()
}

/// Stratified first-`n` probing rows for one trait: n/2 with the trait,
/// n − n/2 without, in original row order.
fn stratified_rows(table: &ActivationTable, trait_index: usize, n: usize) -> Result<Vec<usize>> {
    let column = table.trait_column(trait_index).map_err(anyhow::Error::from)?;
    let mut pos: Vec<usize> = column
        .iter()
        .enumerate()
        .filter(|(_, &on)| on)
        .map(|(i, _)| i)
        .collect();
    let neg: Vec<usize> = column
        .iter()
        .enumerate()
        .filter(|(_, &on)| !on)
        .map(|(i, _)| i)
        .collect();
    let want_pos = n / 2;
    let want_neg = n - want_pos;
    if pos.len() < want_pos || neg.len() < want_neg {
        bail!(
            "axis num_data: {n} rows requested but only {} positive / {} negative available",
            pos.len(),
            neg.len()
        );
    }
    pos.truncate(want_pos);
    pos.extend(neg.into_iter().take(want_neg));
    pos.sort_unstable();
    Ok(pos)
}

/// One steered run summarized into an ablation row.
struct AblationRun<'a> {
    value_label: String,
    bank_for_tau: &'a ProbeBank,
    plan: InterventionPlan,
}

/// Sweeps one axis with everything else at the configured defaults and
/// writes `ablate/{axis}.csv` (one row per axis value per trait).
pub fn cmd_ablate(
    cfg: &ExperimentConfig,
    axis: AblationAxis,
    values: Option<&str>,
) -> Result<String> {
    let model = load_model(cfg)?;
    let w = world(cfg);
    let split = probing_split(cfg, &w)?;
    let hash = cfg.hash();
    let removal = effective_alpha(cfg) < 0.0;
    let heldout_refs: Vec<RealVector> =
        heldout_continuations(&split, cfg.prefix_len, cfg.gen_len, FFD_REFERENCE_CAP)
            .par_iter()
            .map(|toks| embed(&model, toks).map_err(anyhow::Error::from))
            .collect::<Result<_>>()?;

    // Extraction is only needed for probe retraining on data subsets.
    let tables = if axis == AblationAxis::NumData {
        let names = w.trait_names();
        Some((
            extract_activations(&model, &split.train, &names)?,
            extract_activations(&model, &split.test, &names)?,
        ))
    } else {
        None
    };

    let cells = crate::pipeline::REFERENCE_MODEL.cells();
    let mut csv = String::from(
        "axis,value,trait,max_acc,tau,success_rate,ground_truth_rate,mean_total_mass,ffd\n",
    );
    let axis_name = match axis {
        AblationAxis::NumData => "num_data",
        AblationAxis::TopK => "top_k",
        AblationAxis::Alpha => "alpha",
        AblationAxis::SparseS => "sparse_s",
    };

    for trait_name in &cfg.traits {
        let spec = &w.traits[w.trait_index(trait_name).map_err(anyhow::Error::from)?];
        let banks = load_trait_banks(cfg, &model, trait_name)?;
        let base_plan = build_plan(cfg, vec![banks.clone()])?;
        let pool = prefix_pool(
            &split,
            &w,
            std::slice::from_ref(trait_name),
            cfg.prefix_len,
            prefix_filter_for(effective_alpha(cfg)),
        )?;

        // Banks retrained per num_data value live here so runs can borrow.
        let mut subset_banks: Vec<TraitBanks> = Vec::new();
        let mut runs: Vec<AblationRun> = Vec::new();
        match axis {
            AblationAxis::NumData => {
                let values: Vec<usize> = match values {
                    Some(raw) => parse_values(axis_name, raw)?,
                    None => vec![10, 100, 500, 1000],
                };
                let (train, test) = tables.as_ref().unwrap();
                let trait_idx = train.trait_index(trait_name).map_err(anyhow::Error::from)?;
                for &n in &values {
                    if n < 2 {
                        bail!("axis num_data: value {n} is below the 2-row minimum");
                    }
                    let rows = stratified_rows(train, trait_idx, n)?;
                    let sub = train.subset(&rows).map_err(anyhow::Error::from)?;
                    let bank = train_bank_from_tables(
                        &model,
                        &sub,
                        test,
                        trait_name,
                        &probe_hyper(cfg),
                        Some(cfg.dataset_seed),
                    )
                    .with_context(|| format!("fitting probes on {n} rows"))?;
                    subset_banks.push(TraitBanks {
                        logistic: bank,
                        mass_mean: None,
                    });
                }
                for (tb, &n) in subset_banks.iter().zip(&values) {
                    let mut plan = base_plan.clone();
                    plan.traits = vec![tb.clone()];
                    runs.push(AblationRun {
                        value_label: n.to_string(),
                        bank_for_tau: &tb.logistic,
                        plan,
                    });
                }
            }
            AblationAxis::TopK => {
                let values: Vec<usize> = match values {
                    Some(raw) => parse_values(axis_name, raw)?,
                    None => vec![1, 2, 4, 8, 16],
                };
                for &k in &values {
                    if k == 0 || k > cells {
                        bail!(
                            "axis top_k: value {k} outside [1, {cells}] (capped at the {cells} heads of the reference model)"
                        );
                    }
                    let mut plan = base_plan.clone();
                    plan.weighting = Weighting::TopK(k);
                    runs.push(AblationRun {
                        value_label: k.to_string(),
                        bank_for_tau: &base_plan.traits[0].logistic,
                        plan,
                    });
                }
                let mut plan = base_plan.clone();
                plan.weighting = Weighting::Soft;
                runs.push(AblationRun {
                    value_label: "soft".into(),
                    bank_for_tau: &base_plan.traits[0].logistic,
                    plan,
                });
            }
            AblationAxis::Alpha => {
                let values: Vec<Real> = match values {
                    Some(raw) => parse_values(axis_name, raw)?,
                    None => vec![1.0, 5.0, 10.0],
                };
                for &a in &values {
                    if !a.is_finite() || a <= 0.0 {
                        bail!("axis alpha: value {a} must be a positive finite strength");
                    }
                    let mut plan = base_plan.clone();
                    plan.alpha = if cfg.remove { -a } else { a };
                    runs.push(AblationRun {
                        value_label: a.to_string(),
                        bank_for_tau: &base_plan.traits[0].logistic,
                        plan,
                    });
                }
            }
            AblationAxis::SparseS => {
                let values: Vec<usize> = match values {
                    Some(raw) => parse_values(axis_name, raw)?,
                    None => vec![1, 5, 10, 20],
                };
                for &s in &values {
                    if s == 0 {
                        bail!("axis sparse_s: the injection period must be at least 1");
                    }
                    let mut plan = base_plan.clone();
                    plan.sparse_step = s;
                    runs.push(AblationRun {
                        value_label: s.to_string(),
                        bank_for_tau: &base_plan.traits[0].logistic,
                        plan,
                    });
                }
            }
        }

        for run in &runs {
            let tau = threshold_tau(run.bank_for_tau, cfg.monitor_k).map_err(anyhow::Error::from)?;
            let traces = generate_many(
                &model,
                &run.plan,
                &pool,
                cfg.n_generations,
                cfg.gen_len,
                cfg.temperature,
                cfg.base_seed,
            )?;
            let stats: Vec<GenStat> = traces
                .par_iter()
                .enumerate()
                .map(|(i, trace)| {
                    gen_stat(
                        &model,
                        trace,
                        spec,
                        removal,
                        tau,
                        generation_seed(cfg.base_seed, i),
                    )
                })
                .collect::<Result<_>>()?;
            let n = stats.len() as Real;
            let embeddings: Vec<RealVector> = stats.iter().map(|s| s.embedding.clone()).collect();
            let max_acc = run
                .bank_for_tau
                .accs()
                .iter()
                .fold(Real::NEG_INFINITY, |a, &b| a.max(b));
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                axis_name,
                run.value_label,
                trait_name,
                max_acc,
                tau,
                stats.iter().map(|s| s.success).sum::<Real>() / n,
                stats.iter().map(|s| s.oracle).sum::<Real>() / n,
                stats.iter().map(|s| s.total_mass).sum::<Real>() / n,
                ffd(&embeddings, &heldout_refs).map_err(anyhow::Error::from)?,
            ));

            if axis == AblationAxis::SparseS {
                // Fig-3-style per-step confidence curve for this period.
                let mut curve = String::from("step,mean_c_median,mean_mass\n");
                for j in 0..traces[0].steps.len() {
                    let step = traces[0].steps[j].step;
                    let c = traces
                        .iter()
                        .map(|t| t.steps[j].traits[0].c_median)
                        .sum::<Real>()
                        / n;
                    let m = traces
                        .iter()
                        .map(|t| t.steps[j].traits[0].mass)
                        .sum::<Real>()
                        / n;
                    curve.push_str(&format!("{step},{c},{m}\n"));
                }
                write_stamped_csv(
                    &cfg.out_dir
                        .join("ablate")
                        .join(format!("confidence_{trait_name}_s{}.csv", run.value_label)),
                    &hash,
                    &curve,
                )?;
            }
        }
    }

    write_stamped_csv(
        &cfg.out_dir.join("ablate").join(format!("{axis_name}.csv")),
        &hash,
        &csv,
    )?;
    print!("{csv}");
    Ok(csv)
}

// ─── trace-plot ──────────────────────────────────────────────────────────────

/// Runs the configured plan and writes a per-step CSV averaged over
/// generations, ready for any plotting tool.
pub fn cmd_trace_plot(cfg: &ExperimentConfig) -> Result<String> {
    let model = load_model(cfg)?;
    let w = world(cfg);
    let split = probing_split(cfg, &w)?;
    let banks: Vec<TraitBanks> = cfg
        .traits
        .iter()
        .map(|name| load_trait_banks(cfg, &model, name))
        .collect::<Result<_>>()?;
    let plan = build_plan(cfg, banks)?;
    let pool = prefix_pool(
        &split,
        &w,
        &cfg.traits,
        cfg.prefix_len,
        prefix_filter_for(effective_alpha(cfg)),
    )?;
    let traces = generate_many(
        &model,
        &plan,
        &pool,
        cfg.n_generations,
        cfg.gen_len,
        cfg.temperature,
        cfg.base_seed,
    )?;

    let n = traces.len() as Real;
    let mut csv = String::from(
        "step,trait,mean_c_median,mean_c_mean,mean_delta,mean_mass,frac_intervened\n",
    );
    for j in 0..traces[0].steps.len() {
        let step = traces[0].steps[j].step;
        let frac = traces.iter().filter(|t| t.steps[j].intervened).count() as Real / n;
        for (k, name) in traces[0].trait_names.iter().enumerate() {
            let mean_of = |f: &dyn Fn(&GenerationTrace) -> Real| -> Real {
                traces.iter().map(|t| f(t)).sum::<Real>() / n
            };
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                step,
                name,
                mean_of(&|t| t.steps[j].traits[k].c_median),
                mean_of(&|t| t.steps[j].traits[k].c_mean),
                mean_of(&|t| t.steps[j].traits[k].delta),
                mean_of(&|t| t.steps[j].traits[k].mass),
                frac,
            ));
        }
    }
    let path = cfg.out_dir.join("trace_plot.csv");
    write_stamped_csv(&path, &cfg.hash(), &csv)?;
    println!("wrote per-step trace summary to {}", path.display());
    Ok(csv)
}
