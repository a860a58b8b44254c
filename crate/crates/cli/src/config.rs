//! Flat `key = value` experiment configuration with CLI flag overrides.
//!
//! Precedence, lowest to highest: built-in defaults, then the config file,
//! then command-line flags. Every output CSV is stamped with the SHA-256 of
//! the canonical config text, so artifacts can always be traced back to the
//! exact settings that produced them. Location and execution keys
//! (`checkpoint`, `bank_dir`, `out_dir`, `threads`) never change artifact
//! bytes and are excluded from the hash.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};
use steer_core::Real;

/// All knobs of the experiment pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    // ── world ──
    /// Seed of the background Markov transitions.
    pub world_seed: u64,
    /// Seed of the probing train/test split.
    pub dataset_seed: u64,
    /// Seed of the transformer training corpus.
    pub corpus_seed: u64,
    /// Probing pairs per trait and split (each split holds 2·n_pairs rows).
    pub n_pairs: usize,
    /// Probing sequence length.
    pub probe_seq_len: usize,
    /// Number of transformer training sequences.
    pub corpus_sequences: usize,
    /// Transformer training sequence length.
    pub corpus_seq_len: usize,

    // ── model ──
    /// Checkpoint path written by `train` and read by later stages.
    pub checkpoint: PathBuf,
    pub train_seed: u64,
    pub train_steps: usize,
    pub batch_size: usize,
    pub learning_rate: Real,
    /// Steps between loss-curve entries.
    pub log_every: usize,

    // ── probes ──
    /// Directory of probe-bank files (`{trait}.smpb`, `{trait}.mm.smpb`).
    pub bank_dir: PathBuf,
    pub probe_lr: Real,
    pub probe_epochs: usize,
    /// Also fit mass-mean direction banks.
    pub mass_mean: bool,

    // ── steering plan ──
    pub mode: String,
    pub alpha: Real,
    pub sparse_step: usize,
    pub power: Real,
    /// Head count for hard top-K weighting.
    pub top_k: usize,
    /// Number of monitored probes.
    pub monitor_k: usize,
    /// "soft" or "topk".
    pub weighting: String,
    /// "logistic" or "massmean".
    pub direction: String,
    /// Steered traits. `generate`/`trace-plot` steer them jointly; `eval`
    /// and `ablate` report each separately.
    pub traits: Vec<String>,
    /// Removal steering: negates α and flips the success criterion.
    pub remove: bool,
    /// Absolute first steered step; empty = first generated step.
    pub start: Option<usize>,

    // ── generation ──
    pub prefix_len: usize,
    pub gen_len: usize,
    pub temperature: Real,
    pub n_generations: usize,
    /// Generation i uses seed `base_seed + i`, paired across modes.
    pub base_seed: u64,

    // ── evaluation ──
    /// Embedding reference for the Fréchet distance: "heldout" (corpus
    /// continuations) or "unconditioned" (this run's unsteered generations).
    pub ffd_reference: String,

    // ── execution (not part of the config hash) ──
    pub out_dir: PathBuf,
    /// Worker threads; 0 = hardware default.
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            world_seed: 7001,
            dataset_seed: 7002,
            corpus_seed: 7003,
            n_pairs: 1000,
            probe_seq_len: 128,
            corpus_sequences: 3000,
            corpus_seq_len: 128,
            checkpoint: PathBuf::from("out/model.stfm"),
            train_seed: 42,
            train_steps: 1200,
            batch_size: 8,
            learning_rate: 1e-3,
            log_every: 50,
            bank_dir: PathBuf::from("out/banks"),
            probe_lr: 0.1,
            probe_epochs: 500,
            mass_mean: true,
            mode: "smitin".into(),
            alpha: 5.0,
            sparse_step: 5,
            power: 3.0,
            top_k: 16,
            monitor_k: 16,
            weighting: "soft".into(),
            direction: "logistic".into(),
            traits: vec!["pulse4".into()],
            remove: false,
            start: None,
            prefix_len: 32,
            gen_len: 64,
            temperature: 1.0,
            n_generations: 100,
            base_seed: 1234,
            ffd_reference: "heldout".into(),
            out_dir: PathBuf::from("out"),
            threads: 0,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| anyhow::anyhow!("config key {key}: cannot parse {value:?}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => bail!("config key {key}: expected true or false, got {value:?}"),
    }
}

fn parse_traits(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

impl ExperimentConfig {
    /// Applies one `key = value` assignment. Unknown keys are errors so
    /// typos cannot silently fall back to defaults.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "world_seed" => self.world_seed = parse_num(key, value)?,
            "dataset_seed" => self.dataset_seed = parse_num(key, value)?,
            "corpus_seed" => self.corpus_seed = parse_num(key, value)?,
            "n_pairs" => self.n_pairs = parse_num(key, value)?,
            "probe_seq_len" => self.probe_seq_len = parse_num(key, value)?,
            "corpus_sequences" => self.corpus_sequences = parse_num(key, value)?,
            "corpus_seq_len" => self.corpus_seq_len = parse_num(key, value)?,
            "checkpoint" => self.checkpoint = PathBuf::from(value),
            "train_seed" => self.train_seed = parse_num(key, value)?,
            "train_steps" => self.train_steps = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "log_every" => self.log_every = parse_num(key, value)?,
            "bank_dir" => self.bank_dir = PathBuf::from(value),
            "probe_lr" => self.probe_lr = parse_num(key, value)?,
            "probe_epochs" => self.probe_epochs = parse_num(key, value)?,
            "mass_mean" => self.mass_mean = parse_bool(key, value)?,
            "mode" => self.mode = value.into(),
            "alpha" => self.alpha = parse_num(key, value)?,
            "sparse_step" => self.sparse_step = parse_num(key, value)?,
            "power" => self.power = parse_num(key, value)?,
            "top_k" => self.top_k = parse_num(key, value)?,
            "monitor_k" => self.monitor_k = parse_num(key, value)?,
            "weighting" => self.weighting = value.into(),
            "direction" => self.direction = value.into(),
            "traits" => self.traits = parse_traits(value),
            "remove" => self.remove = parse_bool(key, value)?,
            "start" => {
                self.start = if value.is_empty() {
                    None
                } else {
                    Some(parse_num(key, value)?)
                }
            }
            "prefix_len" => self.prefix_len = parse_num(key, value)?,
            "gen_len" => self.gen_len = parse_num(key, value)?,
            "temperature" => self.temperature = parse_num(key, value)?,
            "n_generations" => self.n_generations = parse_num(key, value)?,
            "base_seed" => self.base_seed = parse_num(key, value)?,
            "ffd_reference" => self.ffd_reference = value.into(),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "threads" => self.threads = parse_num(key, value)?,
            _ => bail!("unknown config key {key:?}"),
        }
        Ok(())
    }

    /// Parses a flat config file: `key = value` lines, `#` comments and
    /// blank lines ignored.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("config line {}: expected key = value", ln + 1))?;
            self.set(key.trim(), value.trim())
                .with_context(|| format!("config line {}", ln + 1))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_generations < 1 {
            bail!("n_generations must be at least 1");
        }
        if self.n_pairs < 1 || self.corpus_sequences < 1 {
            bail!("n_pairs and corpus_sequences must be at least 1");
        }
        if self.prefix_len < 1 || self.gen_len < 1 {
            bail!("prefix_len and gen_len must be at least 1");
        }
        if self.traits.is_empty() {
            bail!("at least one trait must be configured");
        }
        if !matches!(self.weighting.as_str(), "soft" | "topk") {
            bail!("weighting must be soft or topk, got {:?}", self.weighting);
        }
        if !matches!(self.direction.as_str(), "logistic" | "massmean") {
            bail!(
                "direction must be logistic or massmean, got {:?}",
                self.direction
            );
        }
        if !matches!(self.ffd_reference.as_str(), "heldout" | "unconditioned") {
            bail!(
                "ffd_reference must be heldout or unconditioned, got {:?}",
                self.ffd_reference
            );
        }
        if !matches!(
            self.mode.as_str(),
            "none" | "original_iti" | "weight_decay" | "smitin"
        ) {
            bail!("unknown mode {:?}", self.mode);
        }
        if !self.alpha.is_finite() || !self.power.is_finite() || !self.temperature.is_finite() {
            bail!("alpha, power and temperature must be finite");
        }
        if self.temperature <= 0.0 {
            bail!("temperature must be positive");
        }
        Ok(())
    }

    /// Canonical text form: every artifact-relevant key in declaration
    /// order. Location and execution keys (`checkpoint`, `bank_dir`,
    /// `out_dir`, `threads`) are excluded, so the hash identifies the
    /// experiment, not where it ran.
    pub fn canonical_string(&self) -> String {
        let mut s = String::new();
        let kv = |s: &mut String, k: &str, v: &str| writeln!(s, "{k} = {v}").unwrap();
        kv(&mut s, "world_seed", &self.world_seed.to_string());
        kv(&mut s, "dataset_seed", &self.dataset_seed.to_string());
        kv(&mut s, "corpus_seed", &self.corpus_seed.to_string());
        kv(&mut s, "n_pairs", &self.n_pairs.to_string());
        kv(&mut s, "probe_seq_len", &self.probe_seq_len.to_string());
        kv(&mut s, "corpus_sequences", &self.corpus_sequences.to_string());
        kv(&mut s, "corpus_seq_len", &self.corpus_seq_len.to_string());
        kv(&mut s, "train_seed", &self.train_seed.to_string());
        kv(&mut s, "train_steps", &self.train_steps.to_string());
        kv(&mut s, "batch_size", &self.batch_size.to_string());
        kv(&mut s, "learning_rate", &self.learning_rate.to_string());
        kv(&mut s, "log_every", &self.log_every.to_string());
        kv(&mut s, "probe_lr", &self.probe_lr.to_string());
        kv(&mut s, "probe_epochs", &self.probe_epochs.to_string());
        kv(&mut s, "mass_mean", &self.mass_mean.to_string());
        kv(&mut s, "mode", &self.mode);
        kv(&mut s, "alpha", &self.alpha.to_string());
        kv(&mut s, "sparse_step", &self.sparse_step.to_string());
        kv(&mut s, "power", &self.power.to_string());
        kv(&mut s, "top_k", &self.top_k.to_string());
        kv(&mut s, "monitor_k", &self.monitor_k.to_string());
        kv(&mut s, "weighting", &self.weighting);
        kv(&mut s, "direction", &self.direction);
        kv(&mut s, "traits", &self.traits.join(","));
        kv(&mut s, "remove", &self.remove.to_string());
        let start = self.start.map_or(String::new(), |v| v.to_string());
        kv(&mut s, "start", &start);
        kv(&mut s, "prefix_len", &self.prefix_len.to_string());
        kv(&mut s, "gen_len", &self.gen_len.to_string());
        kv(&mut s, "temperature", &self.temperature.to_string());
        kv(&mut s, "n_generations", &self.n_generations.to_string());
        kv(&mut s, "base_seed", &self.base_seed.to_string());
        kv(&mut s, "ffd_reference", &self.ffd_reference);
        s
    }

    /// Hex SHA-256 of [`canonical_string`], stamped into every output CSV.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_string().as_bytes());
        digest.iter().fold(String::new(), |mut acc, b| {
            write!(acc, "{b:02x}").unwrap();
            acc
        })
    }
}
