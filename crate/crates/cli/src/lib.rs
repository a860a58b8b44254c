//! Experiment harness around the steering library: reproducible
//! corpus/model/probe pipelines, steered generation, objective evaluation,
//! and ablation sweeps, all driven by a flat config file plus flag
//! overrides.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod pipeline;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use config::ExperimentConfig;

/// Steering workbench: train a toy token transformer, probe its attention
/// heads, and steer generation with self-monitored interventions.
#[derive(Debug, Parser)]
#[command(name = "steer", version)]
pub struct Cli {
    /// Flat `key = value` config file; flags override file values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Intervention mode: none, original_iti, weight_decay or smitin.
    #[arg(long, global = true)]
    pub mode: Option<String>,
    /// Injection strength α.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Injection period s in steps.
    #[arg(long = "sparse-s", global = true)]
    pub sparse_s: Option<usize>,
    /// Soft-weight exponent c.
    #[arg(long = "power-c", global = true)]
    pub power_c: Option<f64>,
    /// Head count for hard top-K weighting.
    #[arg(long = "top-k", global = true)]
    pub top_k: Option<usize>,
    /// Weighting scheme: soft or topk.
    #[arg(long, global = true)]
    pub weighting: Option<String>,
    /// Steering direction: logistic or massmean.
    #[arg(long, global = true)]
    pub direction: Option<String>,
    /// Comma-separated trait names.
    #[arg(long, global = true)]
    pub traits: Option<String>,
    /// Removal steering: negate α and flip the success criterion.
    #[arg(long, global = true)]
    pub remove: bool,
    /// Base generation seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = hardware default).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Write the probing split and transformer corpus as text files.
    GenCorpus,
    /// Train the reference transformer and save its checkpoint.
    Train,
    /// Fit head-wise probes for every trait and save the banks.
    Probe,
    /// Run steered generations, writing trace and token files.
    Generate,
    /// Evaluate the traits × modes matrix into a report.
    Eval {
        /// Recompute the report from stored generation files instead of
        /// re-running the model.
        #[arg(long)]
        from_traces: bool,
    },
    /// Sweep one axis with everything else at configured defaults.
    Ablate {
        /// num_data, top_k, alpha or sparse_s.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values overriding the default sweep.
        #[arg(long)]
        values: Option<String>,
    },
    /// Emit a per-step CSV of monitor readings averaged over generations.
    TracePlot,
}

/// Resolves the configuration: defaults, then the config file, then flags.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    if let Some(v) = &cli.mode {
        cfg.mode = v.clone();
    }
    if let Some(v) = cli.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = cli.sparse_s {
        cfg.sparse_step = v;
    }
    if let Some(v) = cli.power_c {
        cfg.power = v;
    }
    if let Some(v) = cli.top_k {
        cfg.top_k = v;
    }
    if let Some(v) = &cli.weighting {
        cfg.weighting = v.clone();
    }
    if let Some(v) = &cli.direction {
        cfg.direction = v.clone();
    }
    if let Some(v) = &cli.traits {
        cfg.traits = v
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
    }
    if cli.remove {
        cfg.remove = true;
    }
    if let Some(v) = cli.seed {
        cfg.base_seed = v;
    }
    if let Some(v) = &cli.out {
        cfg.out_dir = v.clone();
    }
    if let Some(v) = cli.threads {
        cfg.threads = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses the process arguments and runs the selected command.
pub fn run() -> Result<()> {
    let cli = Cli::parse();
    let cfg = resolve_config(&cli)?;
    pipeline::init_threads(cfg.threads);
    match &cli.cmd {
        Cmd::GenCorpus => {
            commands::cmd_gen_corpus(&cfg)?;
        }
        Cmd::Train => {
            commands::cmd_train(&cfg)?;
        }
        Cmd::Probe => {
            commands::cmd_probe(&cfg)?;
        }
        Cmd::Generate => {
            commands::cmd_generate(&cfg)?;
        }
        Cmd::Eval { from_traces } => {
            commands::cmd_eval(&cfg, *from_traces)?;
        }
        Cmd::Ablate { axis, values } => {
            let axis: commands::AblationAxis = axis.parse()?;
            commands::cmd_ablate(&cfg, axis, values.as_deref())?;
        }
        Cmd::TracePlot => {
            commands::cmd_trace_plot(&cfg)?;
        }
    }
    Ok(())
}
