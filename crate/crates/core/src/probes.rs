//! Head-wise logistic probes on frozen attention-head activations.
//!
//! For every (layer, head) cell a bias-free logistic classifier
//! `sigmoid(⟨θ, z⟩)` is fit on the last-position head activation `z` of each
//! labeled sequence. A trained [`Probe`] carries:
//!
//! * `theta` — the direction, canonicalized to 32-bit precision at training
//!   time so that serialized banks reproduce in-memory results exactly,
//! * `sigma` — the population standard deviation of `⟨θ, z⟩` over all
//!   probing rows (train **and** test combined), floored at [`SIGMA_FLOOR`];
//!   steering uses it to scale the injected direction into the activation's
//!   natural range,
//! * `acc` — held-out accuracy of the decision rule `⟨θ, z⟩ > 0`.
//!
//! A [`ProbeBank`] is the full layer×head grid for one trait plus
//! provenance (hash of the model weights, seed of the probing dataset).
//! Banks serialize to the `SMPB` format described at [`save_bank`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::corpus::{DatasetSplit, LabeledSequence};
use crate::error::{Error, Result};
use crate::math::ops;
use crate::model::TransformerModel;
use crate::{Real, RealMatrix, RealVector};

/// Lower bound on a probe's projection spread; keeps the steering scale
/// finite when a head's activations barely vary along the direction.
pub const SIGMA_FLOOR: Real = 1e-6;

// ─── Types ───────────────────────────────────────────────────────────────────

/// One trained direction for one (layer, head) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    /// Bias-free logistic direction (length = head dimension), 32-bit
    /// canonical: every entry is exactly representable as `f32`.
    pub theta: RealVector,
    /// Population std of `⟨θ, z⟩` over combined train+test probing rows,
    /// at least [`SIGMA_FLOOR`].
    pub sigma: Real,
    /// Held-out accuracy of `⟨θ, z⟩ > 0` in `[0, 1]`.
    pub acc: Real,
}

/// What a bank was trained from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Provenance {
    /// SHA-256 of the model checkpoint byte stream
    /// (see [`crate::model::model_hash`]).
    pub model_hash: [u8; 32],
    /// Seed of the probing dataset, when known. Not stored in bank files;
    /// loaded banks carry `None`.
    pub dataset_seed: Option<u64>,
}

/// Full probe grid for one trait.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeBank {
    pub trait_name: String,
    pub num_layers: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    /// Row-major by `layer * num_heads + head`.
    pub probes: Vec<Probe>,
    pub provenance: Provenance,
}

impl ProbeBank {
    pub fn cells(&self) -> usize {
        self.num_layers * self.num_heads
    }

    pub fn cell_index(&self, layer: usize, head: usize) -> usize {
        debug_assert!(layer < self.num_layers && head < self.num_heads);
        layer * self.num_heads + head
    }

    pub fn probe(&self, layer: usize, head: usize) -> &Probe {
        &self.probes[self.cell_index(layer, head)]
    }

    /// Accuracies in cell order.
    pub fn accs(&self) -> Vec<Real> {
        self.probes.iter().map(|p| p.acc).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.num_heads == 0 || self.head_dim == 0 {
            return Err(Error::InvalidArgument(
                "probe bank dimensions must all be at least 1".into(),
            ));
        }
        if self.trait_name.is_empty() {
            return Err(Error::InvalidArgument("probe bank trait name is empty".into()));
        }
        if self.probes.len() != self.cells() {
            return Err(Error::DimMismatch(format!(
                "probe bank holds {} probes for {} cells",
                self.probes.len(),
                self.cells()
            )));
        }
        if self.provenance.model_hash == [0u8; 32] {
            return Err(Error::InvalidArgument(
                "probe bank provenance hash is empty".into(),
            ));
        }
        for (i, p) in self.probes.iter().enumerate() {
            if p.theta.dim() != self.head_dim {
                return Err(Error::DimMismatch(format!(
                    "probe {i}: direction dim {} != head dim {}",
                    p.theta.dim(),
                    self.head_dim
                )));
            }
            if !p.theta.is_finite() || !p.sigma.is_finite() || !p.acc.is_finite() {
                return Err(Error::NonFinite(format!("probe {i} holds non-finite values")));
            }
            if p.sigma < SIGMA_FLOOR {
                return Err(Error::InvalidArgument(format!(
                    "probe {i}: sigma {} below floor {SIGMA_FLOOR}",
                    p.sigma
                )));
            }
            if !(0.0..=1.0).contains(&p.acc) {
                return Err(Error::InvalidArgument(format!(
                    "probe {i}: accuracy {} outside [0, 1]",
                    p.acc
                )));
            }
        }
        Ok(())
    }
}

/// Probe-training hyper-parameters. Training is deterministic full-batch
/// gradient descent from a zero start, so no seed is involved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeHyper {
    pub lr: Real,
    pub epochs: usize,
}

impl Default for ProbeHyper {
    fn default() -> Self {
        ProbeHyper { lr: 0.1, epochs: 500 }
    }
}

/// Heads picked by accuracy, best first; ties broken by ascending
/// (layer, head).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadSet {
    pub heads: Vec<(usize, usize)>,
}

// ─── Activation extraction ───────────────────────────────────────────────────

/// Last-position head activations of a set of labeled sequences:
/// one feature row per sequence per cell, plus the sequences' labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTable {
    pub num_layers: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    /// `features[cell][row]`, cell = `layer * num_heads + head`.
    pub features: Vec<Vec<RealVector>>,
    /// `labels[row][trait]`.
    pub labels: Vec<Vec<bool>>,
    pub trait_names: Vec<String>,
}

impl ActivationTable {
    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    /// Feature rows of one cell.
    pub fn cell(&self, layer: usize, head: usize) -> &[RealVector] {
        &self.features[layer * self.num_heads + head]
    }

    pub fn trait_index(&self, name: &str) -> Result<usize> {
        self.trait_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown trait {name:?}")))
    }

    /// Label column of one trait.
    pub fn trait_column(&self, trait_index: usize) -> Result<Vec<bool>> {
        if trait_index >= self.trait_names.len() {
            return Err(Error::InvalidArgument(format!(
                "trait index {trait_index} out of range ({} traits)",
                self.trait_names.len()
            )));
        }
        Ok(self.labels.iter().map(|row| row[trait_index]).collect())
    }

    /// A table keeping only the given rows, in the given order
    /// (probing-data-size ablations).
    pub fn subset(&self, rows: &[usize]) -> Result<ActivationTable> {
        if rows.is_empty() {
            return Err(Error::Empty("activation-table row subset"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.rows()) {
            return Err(Error::InvalidArgument(format!(
                "subset row {bad} out of range ({} rows)",
                self.rows()
            )));
        }
        Ok(ActivationTable {
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            head_dim: self.head_dim,
            features: self
                .features
                .iter()
                .map(|cell| rows.iter().map(|&r| cell[r].clone()).collect())
                .collect(),
            labels: rows.iter().map(|&r| self.labels[r].clone()).collect(),
            trait_names: self.trait_names.clone(),
        })
    }
}

/// Runs every sequence through the model and collects the last-position
/// activation of each (layer, head) cell together with the sequence labels.
pub fn extract_activations(
    model: &TransformerModel,
    data: &[LabeledSequence],
    trait_names: &[String],
) -> Result<ActivationTable> {
    if data.is_empty() {
        return Err(Error::Empty("activation extraction input"));
    }
    let config = &model.config;
    let cells = config.cells();
    let tw = crate::model::seq::TransposedWeights::new(model);
    let mut features: Vec<Vec<RealVector>> = vec![Vec::with_capacity(data.len()); cells];
    let mut labels = Vec::with_capacity(data.len());
    for (i, seq) in data.iter().enumerate() {
        if seq.labels.len() != trait_names.len() {
            return Err(Error::DimMismatch(format!(
                "sequence {i} carries {} labels for {} traits",
                seq.labels.len(),
                trait_names.len()
            )));
        }
        let out = crate::model::seq::forward_sequence_with(model, &tw, &seq.tokens)?;
        for (cell, z) in out.last_z.into_iter().enumerate() {
            features[cell].push(z);
        }
        labels.push(seq.labels.clone());
    }
    Ok(ActivationTable {
        num_layers: config.num_layers,
        num_heads: config.num_heads,
        head_dim: config.head_dim,
        features,
        labels,
        trait_names: trait_names.to_vec(),
    })
}

// ─── Probe training ──────────────────────────────────────────────────────────

fn check_rows(x: &[RealVector], y: &[bool], dim: usize, what: &str) -> Result<()> {
    if x.is_empty() {
        return Err(Error::InvalidArgument(format!("no {what} rows")));
    }
    if x.len() != y.len() {
        return Err(Error::DimMismatch(format!(
            "{} {what} feature rows vs {} labels",
            x.len(),
            y.len()
        )));
    }
    for (i, row) in x.iter().enumerate() {
        if row.dim() != dim {
            return Err(Error::DimMismatch(format!(
                "{what} row {i} has dim {} != {dim}",
                row.dim()
            )));
        }
    }
    Ok(())
}

/// Rounds every coordinate through 32-bit so the in-memory direction equals
/// its serialized form bit-for-bit.
fn canonicalize(theta: &mut RealVector) {
    for v in theta.as_mut_slice() {
        *v = *v as f32 as Real;
    }
}

/// Accuracy of the decision rule `⟨θ, z⟩ > 0` against boolean labels.
fn rule_accuracy(theta: &RealVector, x: &[RealVector], y: &[bool]) -> Real {
    let correct = x
        .iter()
        .zip(y)
        .filter(|(row, &label)| (ops::dot(theta, row) > 0.0) == label)
        .count();
    correct as Real / x.len() as Real
}

/// Completes a raw direction into a [`Probe`]: canonicalize to 32-bit,
/// measure the projection spread over all rows, score on the test rows.
fn finish_probe(
    mut theta: RealVector,
    train_x: &[RealVector],
    test_x: &[RealVector],
    test_y: &[bool],
) -> Result<Probe> {
    canonicalize(&mut theta);
    if !theta.is_finite() {
        return Err(Error::NonFinite("probe direction".into()));
    }
    let sigma = compute_sigma(&theta, &[train_x, test_x])?;
    let acc = rule_accuracy(&theta, test_x, test_y);
    Ok(Probe { theta, sigma, acc })
}

/// Fits one bias-free logistic probe with full-batch gradient descent from a
/// zero start and scores it on the held-out rows.
///
/// The gradient of the mean log loss is `(1/n) Σ (sigmoid(⟨θ, x⟩) − y)·x`.
/// Errors with [`Error::SingleClass`] when the training labels are uniform.
pub fn train_probe(
    train_x: &[RealVector],
    train_y: &[bool],
    test_x: &[RealVector],
    test_y: &[bool],
    hyper: &ProbeHyper,
) -> Result<Probe> {
    if train_x.is_empty() {
        return Err(Error::Empty("probe training rows"));
    }
    let dim = train_x[0].dim();
    check_rows(train_x, train_y, dim, "training")?;
    check_rows(test_x, test_y, dim, "test")?;
    if !(hyper.lr > 0.0 && hyper.lr.is_finite()) || hyper.epochs == 0 {
        return Err(Error::InvalidArgument(format!(
            "probe hyper-parameters lr={} epochs={} out of domain",
            hyper.lr, hyper.epochs
        )));
    }
    if train_y.iter().all(|&y| y) || train_y.iter().all(|&y| !y) {
        return Err(Error::SingleClass);
    }

    let n = train_x.len() as Real;
    let mut theta = RealVector::zeros(dim);
    let mut grad = RealVector::zeros(dim);
    for _ in 0..hyper.epochs {
        grad.as_mut_slice().fill(0.0);
        for (x, &y) in train_x.iter().zip(train_y) {
            let err = ops::sigmoid(ops::dot(&theta, x)) - (y as u8 as Real);
            grad.add_scaled(x, err);
        }
        theta.add_scaled(&grad, -hyper.lr / n);
    }
    finish_probe(theta, train_x, test_x, test_y)
}

/// Population standard deviation of `⟨θ, z⟩` over every row of every part
/// (the combined probing data), floored at [`SIGMA_FLOOR`].
pub fn compute_sigma(theta: &RealVector, parts: &[&[RealVector]]) -> Result<Real> {
    let mut projections = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for part in parts {
        for row in *part {
            if row.dim() != theta.dim() {
                return Err(Error::DimMismatch(format!(
                    "projection row dim {} != direction dim {}",
                    row.dim(),
                    theta.dim()
                )));
            }
            projections.push(ops::dot(theta, row));
        }
    }
    if projections.is_empty() {
        return Err(Error::Empty("sigma projection rows"));
    }
    Ok(ops::stddev(&projections)?.max(SIGMA_FLOOR))
}

/// Mass-mean direction: positive-centroid minus negative-centroid.
/// Rejects uniform labels and coinciding centroids.
pub fn mass_mean_direction(features: &[RealVector], labels: &[bool]) -> Result<RealVector> {
    if features.is_empty() {
        return Err(Error::Empty("mass-mean rows"));
    }
    let dim = features[0].dim();
    check_rows(features, labels, dim, "mass-mean")?;
    let mut pos = RealVector::zeros(dim);
    let mut neg = RealVector::zeros(dim);
    let (mut n_pos, mut n_neg) = (0usize, 0usize);
    for (x, &y) in features.iter().zip(labels) {
        if y {
            pos.add_scaled(x, 1.0);
            n_pos += 1;
        } else {
            neg.add_scaled(x, 1.0);
            n_neg += 1;
        }
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut theta = pos;
    for v in theta.as_mut_slice() {
        *v /= n_pos as Real;
    }
    theta.add_scaled(&neg, -1.0 / n_neg as Real);
    if theta.as_slice().iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate(
            "mass-mean centroids coincide; direction is the zero vector".into(),
        ));
    }
    Ok(theta)
}

// ─── Bank assembly ───────────────────────────────────────────────────────────

fn check_tables(
    model: &TransformerModel,
    train: &ActivationTable,
    test: &ActivationTable,
    trait_name: &str,
) -> Result<usize> {
    let config = &model.config;
    for (table, what) in [(train, "train"), (test, "test")] {
        if table.num_layers != config.num_layers
            || table.num_heads != config.num_heads
            || table.head_dim != config.head_dim
        {
            return Err(Error::DimMismatch(format!(
                "{what} activation table shape {}x{}x{} does not match model {}x{}x{}",
                table.num_layers,
                table.num_heads,
                table.head_dim,
                config.num_layers,
                config.num_heads,
                config.head_dim
            )));
        }
    }
    if train.trait_names != test.trait_names {
        return Err(Error::InvalidArgument(
            "train and test activation tables disagree on trait names".into(),
        ));
    }
    train.trait_index(trait_name)
}

fn assemble_bank(
    model: &TransformerModel,
    train: &ActivationTable,
    test: &ActivationTable,
    trait_name: &str,
    dataset_seed: Option<u64>,
    mut fit: impl FnMut(&[RealVector], &[bool], &[RealVector], &[bool]) -> Result<Probe>,
) -> Result<ProbeBank> {
    let k = check_tables(model, train, test, trait_name)?;
    let train_y = train.trait_column(k)?;
    let test_y = test.trait_column(k)?;
    let config = &model.config;
    let mut probes = Vec::with_capacity(config.cells());
    for l in 0..config.num_layers {
        for h in 0..config.num_heads {
            probes.push(fit(train.cell(l, h), &train_y, test.cell(l, h), &test_y)?);
        }
    }
    let bank = ProbeBank {
        trait_name: trait_name.to_string(),
        num_layers: config.num_layers,
        num_heads: config.num_heads,
        head_dim: config.head_dim,
        probes,
        provenance: Provenance {
            model_hash: crate::model::model_hash(model),
            dataset_seed,
        },
    };
    bank.validate()?;
    Ok(bank)
}

/// Trains the full logistic probe grid for one trait from pre-extracted
/// activation tables.
pub fn train_bank_from_tables(
    model: &TransformerModel,
    train: &ActivationTable,
    test: &ActivationTable,
    trait_name: &str,
    hyper: &ProbeHyper,
    dataset_seed: Option<u64>,
) -> Result<ProbeBank> {
    assemble_bank(model, train, test, trait_name, dataset_seed, |tx, ty, sx, sy| {
        train_probe(tx, ty, sx, sy, hyper)
    })
}

/// Extracts activations from a dataset split and trains the logistic probe
/// grid for one trait. Callers probing several traits should extract once
/// with [`extract_activations`] and use [`train_bank_from_tables`].
pub fn train_bank(
    model: &TransformerModel,
    split: &DatasetSplit,
    trait_names: &[String],
    trait_name: &str,
    hyper: &ProbeHyper,
    dataset_seed: Option<u64>,
) -> Result<ProbeBank> {
    let train = extract_activations(model, &split.train, trait_names)?;
    let test = extract_activations(model, &split.test, trait_names)?;
    train_bank_from_tables(model, &train, &test, trait_name, hyper, dataset_seed)
}

/// Builds a probe grid whose directions are mass-mean differences fit on the
/// train rows, with the same sigma/accuracy bookkeeping as logistic banks.
pub fn mass_mean_bank_from_tables(
    model: &TransformerModel,
    train: &ActivationTable,
    test: &ActivationTable,
    trait_name: &str,
    dataset_seed: Option<u64>,
) -> Result<ProbeBank> {
    assemble_bank(model, train, test, trait_name, dataset_seed, |tx, ty, sx, sy| {
        finish_probe(mass_mean_direction(tx, ty)?, tx, sx, sy)
    })
}

// ─── Head selection and reporting ────────────────────────────────────────────

/// The `k` most accurate heads, best first; equal accuracies are ordered by
/// ascending (layer, head) so selection is a total order.
pub fn top_k_heads(bank: &ProbeBank, k: usize) -> Result<HeadSet> {
    if k == 0 || k > bank.cells() {
        return Err(Error::InvalidArgument(format!(
            "top-k size {k} outside [1, {}]",
            bank.cells()
        )));
    }
    let mut order: Vec<(usize, usize)> = (0..bank.num_layers)
        .flat_map(|l| (0..bank.num_heads).map(move |h| (l, h)))
        .collect();
    order.sort_by(|&a, &b| {
        let (acc_a, acc_b) = (bank.probe(a.0, a.1).acc, bank.probe(b.0, b.1).acc);
        acc_b.total_cmp(&acc_a).then_with(|| a.cmp(&b))
    });
    order.truncate(k);
    Ok(HeadSet { heads: order })
}

/// Per-head accuracy grid plus the derived monitoring numbers: best
/// accuracy and the threshold τ of the top-`monitor_k` heads, summarized in
/// a `"(94.3% / 0.903)"`-style line.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyMap {
    /// `grid[layer][head]` = accuracy.
    pub grid: RealMatrix,
    pub max_acc: Real,
    pub tau: Real,
    pub monitor_k: usize,
    pub summary: String,
}

impl AccuracyMap {
    /// Long-form CSV: `layer,head,acc` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,head,acc\n");
        for l in 0..self.grid.rows() {
            for h in 0..self.grid.cols() {
                out.push_str(&format!("{l},{h},{}\n", self.grid.row(l)[h]));
            }
        }
        out
    }
}

/// Lays a bank's accuracies out as a layer×head grid and computes the
/// monitoring threshold over its top-`monitor_k` heads.
pub fn accuracy_map(bank: &ProbeBank, monitor_k: usize) -> Result<AccuracyMap> {
    bank.validate()?;
    let mut grid = RealMatrix::zeros(bank.num_layers, bank.num_heads);
    for l in 0..bank.num_layers {
        for h in 0..bank.num_heads {
            grid.row_mut(l)[h] = bank.probe(l, h).acc;
        }
    }
    let max_acc = bank.accs().into_iter().fold(0.0, Real::max);
    let tau = crate::intervention::threshold_tau(bank, monitor_k)?;
    let summary = format!("({:.1}% / {:.3})", max_acc * 100.0, tau);
    Ok(AccuracyMap {
        grid,
        max_acc,
        tau,
        monitor_k,
        summary,
    })
}

// ─── SMPB bank files ─────────────────────────────────────────────────────────

const BANK_MAGIC: [u8; 4] = *b"SMPB";
const BANK_VERSION: u32 = 1;

/// Writes a bank in the SMPB format:
///
/// ```text
/// magic "SMPB" | u32 version=1 | u32 layers | u32 heads | u32 head_dim |
/// u16 name_len | UTF-8 trait name | 32-byte model hash |
/// per cell (row-major): head_dim × f32 theta | f32 sigma | f32 acc
/// ```
///
/// All integers and floats little-endian. Directions are 32-bit canonical in
/// memory, so save → load → save reproduces files byte-identically.
pub fn save_bank(bank: &ProbeBank, path: &Path) -> Result<()> {
    bank.validate()?;
    let name = bank.trait_name.as_bytes();
    if name.len() > u16::MAX as usize {
        return Err(Error::Format(format!(
            "trait name of {} bytes exceeds the format's u16 length field",
            name.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&BANK_MAGIC)?;
    for dim in [
        BANK_VERSION,
        bank.num_layers as u32,
        bank.num_heads as u32,
        bank.head_dim as u32,
    ] {
        w.write_all(&dim.to_le_bytes())?;
    }
    w.write_all(&(name.len() as u16).to_le_bytes())?;
    w.write_all(name)?;
    w.write_all(&bank.provenance.model_hash)?;
    for probe in &bank.probes {
        for &v in probe.theta.as_slice() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        w.write_all(&(probe.sigma as f32).to_le_bytes())?;
        w.write_all(&(probe.acc as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format(format!("probe bank truncated while reading {what}")))
}

fn read_u32_field(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact_or(r, &mut buf, what)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f32_field(r: &mut impl Read, what: &str) -> Result<Real> {
    let mut buf = [0u8; 4];
    read_exact_or(r, &mut buf, what)?;
    Ok(f32::from_le_bytes(buf) as Real)
}

/// Reads a bank written by [`save_bank`]. The dataset seed is not part of
/// the format, so loaded provenance carries `None` for it.
pub fn load_bank(path: &Path) -> Result<ProbeBank> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, "magic")?;
    if magic != BANK_MAGIC {
        return Err(Error::Format(format!(
            "bad probe bank magic {magic:?}, expected \"SMPB\""
        )));
    }
    let version = read_u32_field(&mut r, "version")?;
    if version != BANK_VERSION {
        return Err(Error::Format(format!(
            "unsupported probe bank version {version}, expected {BANK_VERSION}"
        )));
    }
    let num_layers = read_u32_field(&mut r, "layer count")? as usize;
    let num_heads = read_u32_field(&mut r, "head count")? as usize;
    let head_dim = read_u32_field(&mut r, "head dim")? as usize;
    let mut len_buf = [0u8; 2];
    read_exact_or(&mut r, &mut len_buf, "name length")?;
    let mut name_buf = vec![0u8; u16::from_le_bytes(len_buf) as usize];
    read_exact_or(&mut r, &mut name_buf, "trait name")?;
    let trait_name = String::from_utf8(name_buf)
        .map_err(|_| Error::Format("probe bank trait name is not UTF-8".into()))?;
    let mut model_hash = [0u8; 32];
    read_exact_or(&mut r, &mut model_hash, "model hash")?;

    let cells = num_layers
        .checked_mul(num_heads)
        .ok_or_else(|| Error::Format("probe bank cell count overflows".into()))?;
    let mut probes = Vec::with_capacity(cells);
    for cell in 0..cells {
        let mut theta = RealVector::zeros(head_dim);
        for v in theta.as_mut_slice() {
            *v = read_f32_field(&mut r, &format!("cell {cell} direction"))?;
        }
        // Sigma is floored in 64-bit before the 32-bit write, which can
        // round it just below the floor; restore the floor on load so a
        // round trip stays byte-identical and within the documented domain.
        let sigma = read_f32_field(&mut r, &format!("cell {cell} sigma"))?.max(SIGMA_FLOOR);
        let acc = read_f32_field(&mut r, &format!("cell {cell} accuracy"))?;
        probes.push(Probe { theta, sigma, acc });
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after probe bank cells".into()));
    }
    let bank = ProbeBank {
        trait_name,
        num_layers,
        num_heads,
        head_dim,
        probes,
        provenance: Provenance {
            model_hash,
            dataset_seed: None,
        },
    };
    bank.validate()?;
    Ok(bank)
}

// ─── Test support ────────────────────────────────────────────────────────────

/// Hand-built bank with prescribed accuracies (unit-test fixture).
#[cfg(test)]
pub(crate) fn bank_from_accs(
    num_layers: usize,
    num_heads: usize,
    head_dim: usize,
    accs: &[Real],
) -> ProbeBank {
    assert_eq!(accs.len(), num_layers * num_heads);
    let probes = accs
        .iter()
        .enumerate()
        .map(|(i, &acc)| Probe {
            theta: RealVector::basis(head_dim, i % head_dim),
            sigma: 0.5,
            acc,
        })
        .collect();
    ProbeBank {
        trait_name: "fixture".into(),
        num_layers,
        num_heads,
        head_dim,
        probes,
        provenance: Provenance {
            model_hash: [7u8; 32],
            dataset_seed: Some(1),
        },
    }
}
