//! On-disk artifact formats: provenance-stamped CSVs, per-generation trace
//! and token files, and their parsers.
//!
//! Every CSV starts with `# key = value` comment lines (at minimum the
//! config hash) followed by a header row. Trace files additionally record
//! the seed, mode, prefix length and start step, so a stored generation can
//! be re-evaluated without re-running the model.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use steer_core::intervention::{GenerationTrace, TraceStep, TraitStepInfo};
use steer_core::Token;

/// Creates parent directories and writes `content` atomically enough for
/// our purposes (single writer per file).
pub fn write_text(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating directory {}", parent.display()))?;
    }
    std::fs::write(path, content).with_context(|| format!("writing {}", path.display()))
}

/// Writes a CSV body under a `# config_hash = …` provenance comment.
pub fn write_stamped_csv(path: &Path, config_hash: &str, body: &str) -> Result<()> {
    write_text(path, &format!("# config_hash = {config_hash}\n{body}"))
}

/// Splits a stamped CSV into its comment map and data lines.
pub fn read_stamped_csv(path: &Path) -> Result<(HashMap<String, String>, Vec<String>)> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut comments = HashMap::new();
    let mut data = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                comments.insert(k.trim().to_string(), v.trim().to_string());
            }
        } else if !line.is_empty() {
            data.push(line.to_string());
        }
    }
    Ok((comments, data))
}

pub fn trace_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("trace_{index:04}.csv"))
}

pub fn tokens_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("tokens_{index:04}.txt"))
}

/// Provenance of one stored generation.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceMeta {
    pub config_hash: String,
    pub mode: String,
    pub seed: u64,
}

/// Writes one generation as a trace CSV plus a token file (full sequence,
/// prefix included, space-separated).
pub fn write_generation(
    dir: &Path,
    index: usize,
    config_hash: &str,
    mode: &str,
    seed: u64,
    trace: &GenerationTrace,
) -> Result<()> {
    let header = format!(
        "# config_hash = {config_hash}\n# mode = {mode}\n# seed = {seed}\n# prefix_len = {}\n# start = {}\n",
        trace.prefix_len, trace.start
    );
    write_text(&trace_path(dir, index), &format!("{header}{}", trace.to_csv()))?;
    let toks: Vec<String> = trace.tokens.iter().map(|t| t.to_string()).collect();
    write_text(&tokens_path(dir, index), &format!("{}\n", toks.join(" ")))
}

fn comment_field<'a>(
    comments: &'a HashMap<String, String>,
    key: &str,
    path: &Path,
) -> Result<&'a str> {
    comments
        .get(key)
        .map(String::as_str)
        .with_context(|| format!("{}: missing comment field {key:?}", path.display()))
}

/// Reads a generation stored by [`write_generation`], reconstructing the
/// exact in-memory trace (token list, step rows, start step).
pub fn read_generation(dir: &Path, index: usize) -> Result<(TraceMeta, GenerationTrace)> {
    let t_path = trace_path(dir, index);
    let (comments, data) = read_stamped_csv(&t_path)?;
    let meta = TraceMeta {
        config_hash: comment_field(&comments, "config_hash", &t_path)?.to_string(),
        mode: comment_field(&comments, "mode", &t_path)?.to_string(),
        seed: comment_field(&comments, "seed", &t_path)?
            .parse()
            .with_context(|| format!("{}: bad seed", t_path.display()))?,
    };
    let prefix_len: usize = comment_field(&comments, "prefix_len", &t_path)?
        .parse()
        .with_context(|| format!("{}: bad prefix_len", t_path.display()))?;
    let start: usize = comment_field(&comments, "start", &t_path)?
        .parse()
        .with_context(|| format!("{}: bad start", t_path.display()))?;

    const HEADER: &str = "step,token,intervened,trait,c_median,c_mean,c_std,delta,mass";
    if data.first().map(String::as_str) != Some(HEADER) {
        bail!("{}: unexpected trace header", t_path.display());
    }

    let mut steps: Vec<TraceStep> = Vec::new();
    let mut trait_names: Vec<String> = Vec::new();
    for (ln, line) in data[1..].iter().enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            bail!("{} row {}: expected 9 fields", t_path.display(), ln + 1);
        }
        let ctx = || format!("{} row {}", t_path.display(), ln + 1);
        let step: usize = fields[0].parse().with_context(ctx)?;
        let token: Token = fields[1].parse().with_context(ctx)?;
        let intervened = match fields[2] {
            "0" => false,
            "1" => true,
            other => bail!("{}: bad intervened flag {other:?}", ctx()),
        };
        let info = TraitStepInfo {
            c_median: fields[4].parse().with_context(ctx)?,
            c_mean: fields[5].parse().with_context(ctx)?,
            c_std: fields[6].parse().with_context(ctx)?,
            delta: fields[7].parse().with_context(ctx)?,
            mass: fields[8].parse().with_context(ctx)?,
        };
        match steps.last_mut() {
            Some(last) if last.step == step => {
                if last.token != token || last.intervened != intervened {
                    bail!("{}: inconsistent step fields", ctx());
                }
                last.traits.push(info);
                if steps.len() == 1 {
                    trait_names.push(fields[3].to_string());
                }
            }
            _ => {
                if steps.is_empty() {
                    trait_names.push(fields[3].to_string());
                }
                steps.push(TraceStep {
                    step,
                    token,
                    intervened,
                    traits: vec![info],
                });
            }
        }
    }
    for s in &steps {
        if s.traits.len() != trait_names.len() {
            bail!(
                "{}: step {} lists {} traits, expected {}",
                t_path.display(),
                s.step,
                s.traits.len(),
                trait_names.len()
            );
        }
    }

    let k_path = tokens_path(dir, index);
    let text =
        std::fs::read_to_string(&k_path).with_context(|| format!("reading {}", k_path.display()))?;
    let tokens: Vec<Token> = text
        .split_whitespace()
        .map(|s| {
            s.parse::<Token>()
                .with_context(|| format!("{}: bad token {s:?}", k_path.display()))
        })
        .collect::<Result<_>>()?;
    if tokens.len() != prefix_len + steps.len() {
        bail!(
            "{}: {} tokens do not match prefix {} + {} trace steps",
            k_path.display(),
            tokens.len(),
            prefix_len,
            steps.len()
        );
    }
    for (j, s) in steps.iter().enumerate() {
        if tokens[prefix_len + j] != s.token {
            bail!(
                "{}: token file disagrees with trace at step {}",
                k_path.display(),
                s.step
            );
        }
    }

    Ok((
        meta,
        GenerationTrace {
            tokens,
            prefix_len,
            start,
            trait_names,
            steps,
        },
    ))
}
