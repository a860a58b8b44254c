//! Shared plumbing between subcommands: world construction, checkpoint and
//! bank loading with provenance checks, plan assembly, prefix pools, and
//! the parallel generation driver.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use steer_core::corpus::{
    build_dataset, build_model_corpus, default_traits, BackgroundSpec, DatasetSplit,
    LabeledSequence, ModelCorpusSpec, WorldSpec,
};
use steer_core::intervention::{
    generate, DirectionKind, GenerationTrace, InterventionMode, InterventionPlan, TraitBanks,
    Weighting,
};
use steer_core::model::{load_checkpoint, model_hash, ModelConfig, TransformerModel};
use steer_core::probes::{load_bank, ProbeHyper};
use steer_core::{Real, Token};

use crate::config::ExperimentConfig;

/// The fixed reference transformer shape: 4 layers × 4 heads × 16-dim heads
/// over a 64-token vocabulary and 256-position context.
pub const REFERENCE_MODEL: ModelConfig = ModelConfig {
    num_layers: 4,
    num_heads: 4,
    head_dim: 16,
    vocab_size: 64,
    max_context: 256,
};

/// Background state space: token ids 16..63 (ids 0..15 are motif tokens).
const BACKGROUND_FIRST_TOKEN: Token = 16;
const BACKGROUND_STATES: usize = 48;

/// The synthetic world described by a config: the four reference traits
/// over a Markov background seeded by `world_seed`.
pub fn world(cfg: &ExperimentConfig) -> WorldSpec {
    WorldSpec {
        traits: default_traits(),
        background: BackgroundSpec::new(cfg.world_seed, BACKGROUND_FIRST_TOKEN, BACKGROUND_STATES),
        seq_len: cfg.probe_seq_len,
    }
}

/// Balanced probing pools (deterministic in `dataset_seed`).
pub fn probing_split(cfg: &ExperimentConfig, world: &WorldSpec) -> Result<DatasetSplit> {
    build_dataset(world, cfg.n_pairs, cfg.dataset_seed).context("building probing dataset")
}

/// Transformer training corpus (deterministic in `corpus_seed`).
pub fn model_corpus(cfg: &ExperimentConfig, world: &WorldSpec) -> Result<Vec<LabeledSequence>> {
    let spec = ModelCorpusSpec {
        n_sequences: cfg.corpus_sequences,
        seq_len: cfg.corpus_seq_len,
        ..ModelCorpusSpec::default()
    };
    build_model_corpus(world, &spec, cfg.corpus_seed).context("building model corpus")
}

pub fn probe_hyper(cfg: &ExperimentConfig) -> ProbeHyper {
    ProbeHyper {
        lr: cfg.probe_lr,
        epochs: cfg.probe_epochs,
    }
}

pub fn load_model(cfg: &ExperimentConfig) -> Result<TransformerModel> {
    load_checkpoint(&cfg.checkpoint)
        .with_context(|| format!("loading checkpoint {}", cfg.checkpoint.display()))
}

pub fn logistic_bank_path(cfg: &ExperimentConfig, trait_name: &str) -> PathBuf {
    cfg.bank_dir.join(format!("{trait_name}.smpb"))
}

pub fn mass_mean_bank_path(cfg: &ExperimentConfig, trait_name: &str) -> PathBuf {
    cfg.bank_dir.join(format!("{trait_name}.mm.smpb"))
}

/// Loads the banks of one trait and checks they were fit on `model`'s exact
/// checkpoint bytes. The mass-mean bank is optional on disk.
pub fn load_trait_banks(
    cfg: &ExperimentConfig,
    model: &TransformerModel,
    trait_name: &str,
) -> Result<TraitBanks> {
    let hash = model_hash(model);
    let check = |bank: &steer_core::probes::ProbeBank, path: &PathBuf| -> Result<()> {
        if bank.provenance.model_hash != hash {
            bail!(
                "probe bank {} was fit on a different checkpoint than {}",
                path.display(),
                cfg.checkpoint.display()
            );
        }
        Ok(())
    };
    let path = logistic_bank_path(cfg, trait_name);
    let logistic =
        load_bank(&path).with_context(|| format!("loading probe bank {}", path.display()))?;
    check(&logistic, &path)?;
    let mm_path = mass_mean_bank_path(cfg, trait_name);
    let mass_mean = if mm_path.exists() {
        let bank = load_bank(&mm_path)
            .with_context(|| format!("loading mass-mean bank {}", mm_path.display()))?;
        check(&bank, &mm_path)?;
        Some(bank)
    } else {
        None
    };
    Ok(TraitBanks {
        logistic,
        mass_mean,
    })
}

/// Signed strength after the removal flag: `--remove` flips a positive α
/// into trait-removal steering.
pub fn effective_alpha(cfg: &ExperimentConfig) -> Real {
    if cfg.remove {
        -cfg.alpha.abs()
    } else {
        cfg.alpha
    }
}

/// Builds the steering plan described by the config around the given banks.
pub fn build_plan(cfg: &ExperimentConfig, traits: Vec<TraitBanks>) -> Result<InterventionPlan> {
    let mode: InterventionMode = cfg
        .mode
        .parse()
        .map_err(|e: steer_core::Error| anyhow::anyhow!(e))?;
    let weighting = match cfg.weighting.as_str() {
        "soft" => Weighting::Soft,
        "topk" => Weighting::TopK(cfg.top_k),
        other => bail!("weighting must be soft or topk, got {other:?}"),
    };
    let direction_kind = match cfg.direction.as_str() {
        "logistic" => DirectionKind::Logistic,
        "massmean" => DirectionKind::MassMean,
        other => bail!("direction must be logistic or massmean, got {other:?}"),
    };
    Ok(InterventionPlan {
        mode,
        alpha: effective_alpha(cfg),
        sparse_step: cfg.sparse_step,
        start: cfg.start,
        power: cfg.power,
        monitor_k: cfg.monitor_k,
        weighting,
        direction_kind,
        traits,
    })
}

/// Same plan with a different mode, keeping each mode's reference schedule
/// and weighting: every-step hard top-K for the original and weight-decay
/// interventions, the configured sparse schedule and weighting for the
/// self-monitored mode, and monitor-only settings for the baseline.
pub fn plan_for_mode(base: &InterventionPlan, mode: InterventionMode, top_k: usize) -> InterventionPlan {
    let mut plan = base.clone();
    plan.mode = mode;
    match mode {
        InterventionMode::None => {}
        InterventionMode::OriginalIti | InterventionMode::WeightDecay => {
            plan.sparse_step = 1;
            plan.weighting = Weighting::TopK(top_k);
        }
        InterventionMode::Smitin => {}
    }
    plan
}

/// Which held-out sequences may seed a continuation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrefixFilter {
    /// Sequences without any of the traits: steering has something to add.
    AvoidTraits,
    /// Sequences with every trait: removal has something to take away.
    RequireTraits,
}

/// The filter matching a plan's steering direction.
pub fn prefix_filter_for(alpha: Real) -> PrefixFilter {
    if alpha < 0.0 {
        PrefixFilter::RequireTraits
    } else {
        PrefixFilter::AvoidTraits
    }
}

/// Prefixes for continuation: opening `prefix_len` tokens of held-out
/// sequences selected by `filter` over the given traits.
pub fn prefix_pool(
    split: &DatasetSplit,
    world: &WorldSpec,
    traits: &[String],
    prefix_len: usize,
    filter: PrefixFilter,
) -> Result<Vec<Vec<Token>>> {
    let indices: Vec<usize> = traits
        .iter()
        .map(|name| world.trait_index(name).map_err(anyhow::Error::from))
        .collect::<Result<_>>()?;
    let keep = |seq: &&LabeledSequence| match filter {
        PrefixFilter::AvoidTraits => indices.iter().all(|&k| !seq.labels[k]),
        PrefixFilter::RequireTraits => indices.iter().all(|&k| seq.labels[k]),
    };
    let pool: Vec<Vec<Token>> = split
        .test
        .iter()
        .filter(keep)
        .map(|seq| seq.tokens[..prefix_len.min(seq.tokens.len())].to_vec())
        .collect();
    if pool.is_empty() {
        bail!(
            "no held-out sequence matches the {filter:?} filter for traits {traits:?}; \
             cannot build a prefix pool"
        );
    }
    Ok(pool)
}

/// Held-out continuation slices used as the corpus-side FFD reference: the
/// tokens each prefix would really continue into.
pub fn heldout_continuations(
    split: &DatasetSplit,
    prefix_len: usize,
    gen_len: usize,
    cap: usize,
) -> Vec<Vec<Token>> {
    split
        .test
        .iter()
        .take(cap)
        .filter(|seq| seq.tokens.len() >= prefix_len + gen_len)
        .map(|seq| seq.tokens[prefix_len..prefix_len + gen_len].to_vec())
        .collect()
}

/// Seed of generation `i` under a base seed; paired across modes by
/// construction.
pub fn generation_seed(base: u64, i: usize) -> u64 {
    base.wrapping_add(i as u64)
}

/// Runs `n` generations in the worker pool, generation `i` continuing
/// `prefixes[i % len]` under seed `base_seed + i`. Results come back in
/// index order regardless of thread count.
pub fn generate_many(
    model: &TransformerModel,
    plan: &InterventionPlan,
    prefixes: &[Vec<Token>],
    n: usize,
    gen_len: usize,
    temperature: Real,
    base_seed: u64,
) -> Result<Vec<GenerationTrace>> {
    if prefixes.is_empty() {
        bail!("empty prefix pool");
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let prefix = &prefixes[i % prefixes.len()];
            generate(
                model,
                plan,
                prefix,
                gen_len,
                temperature,
                generation_seed(base_seed, i),
            )
            .with_context(|| format!("generation {i}"))
        })
        .collect()
}

/// Installs the global worker pool size once; 0 keeps the hardware default.
pub fn init_threads(threads: usize) {
    if threads > 0 {
        // Ignore the error if a pool already exists (tests, repeated calls).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
}
