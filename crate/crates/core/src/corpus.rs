//! Synthetic trait corpus.
//!
//! Sequences are an order-1 Markov background with periodic "motif" tokens
//! overlaid for each active trait. A trait is a small disjoint token set
//! inserted roughly every `period` positions; an exact sliding-window oracle
//! decides presence. This gives cheap, perfectly labeled positive/negative
//! data for probe training and a ground-truth recognizer for evaluation.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::rng::Rng;
use crate::{Real, Token};

/// One steerable trait: a motif token set inserted on a jittered grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TraitSpec {
    pub name: String,
    /// Token ids reserved for this trait; disjoint across traits.
    pub motif_tokens: Vec<Token>,
    /// Grid period: one motif token roughly every `period` positions.
    pub period: usize,
    /// Maximum displacement of each motif from its grid slot.
    pub jitter: usize,
    /// Oracle sliding-window length.
    pub window: usize,
    /// Fraction of the ideal per-window motif count a window must reach.
    pub presence_ratio: Real,
}

impl TraitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.motif_tokens.is_empty() {
            return Err(Error::Empty("trait motif token set"));
        }
        if self.period == 0 || self.period > self.window {
            return Err(Error::InvalidArgument(format!(
                "trait {}: period {} must be in [1, window {}]",
                self.name, self.period, self.window
            )));
        }
        if !(self.presence_ratio > 0.0 && self.presence_ratio <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "trait {}: presence ratio {} outside (0, 1]",
                self.name, self.presence_ratio
            )));
        }
        if self.jitter > self.period {
            return Err(Error::InvalidArgument(format!(
                "trait {}: jitter {} exceeds period {}",
                self.name, self.jitter, self.period
            )));
        }
        Ok(())
    }
}

/// A token sequence with one presence label per trait.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub tokens: Vec<Token>,
    /// `labels[k]` is the oracle presence of trait `k`.
    pub labels: Vec<bool>,
}

/// Successor probabilities of every background state (most likely first).
pub const BACKGROUND_PROBS: [Real; 5] = [0.40, 0.25, 0.15, 0.12, 0.08];

/// Order-1 Markov chain over a contiguous token range, with 5 fixed
/// successors per state drawn once from a seed.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundSpec {
    /// First background token id; states are `first_token..first_token+n`.
    pub first_token: Token,
    pub num_states: usize,
    successors: Vec<[Token; 5]>,
}

impl BackgroundSpec {
    /// Builds the transition structure from `seed`: each state gets 5
    /// distinct successor states with probabilities [`BACKGROUND_PROBS`].
    pub fn new(seed: u64, first_token: Token, num_states: usize) -> Self {
        assert!(num_states >= 5, "background needs at least 5 states");
        let mut rng = Rng::from_seed(seed);
        let mut successors = Vec::with_capacity(num_states);
        for _ in 0..num_states {
            let mut order: Vec<Token> =
                (0..num_states as Token).map(|s| first_token + s).collect();
            rng.shuffle(&mut order);
            successors.push([order[0], order[1], order[2], order[3], order[4]]);
        }
        BackgroundSpec {
            first_token,
            num_states,
            successors,
        }
    }

    fn initial(&self, rng: &mut Rng) -> Token {
        self.first_token + rng.next_range(self.num_states as u64) as Token
    }

    fn step(&self, state: Token, rng: &mut Rng) -> Token {
        let row = &self.successors[(state - self.first_token) as usize];
        let u = rng.next_f64();
        let mut acc = 0.0;
        for (i, &p) in BACKGROUND_PROBS.iter().enumerate() {
            acc += p;
            if u < acc {
                return row[i];
            }
        }
        row[4]
    }
}

/// Complete world description: traits, background, and the sequence length
/// used for probing data.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    pub traits: Vec<TraitSpec>,
    pub background: BackgroundSpec,
    pub seq_len: usize,
}

/// Seed of the reference world's background transitions.
pub const DEFAULT_WORLD_SEED: u64 = 7001;

/// The four reference traits: motif sets {4k..4k+3}, periods 4/6/8/12
/// (easy → hard), jitter 1, window 32, presence ratio 0.5.
pub fn default_traits() -> Vec<TraitSpec> {
    [("pulse4", 4usize), ("pulse6", 6), ("pulse8", 8), ("pulse12", 12)]
        .iter()
        .enumerate()
        .map(|(k, &(name, period))| TraitSpec {
            name: name.to_string(),
            motif_tokens: (0..4).map(|j| (4 * k + j) as Token).collect(),
            period,
            jitter: 1,
            window: 32,
            presence_ratio: 0.5,
        })
        .collect()
}

impl WorldSpec {
    /// Reference world: the four default traits over a 48-state background
    /// (token ids 16..63) seeded with [`DEFAULT_WORLD_SEED`].
    pub fn reference(seq_len: usize) -> Self {
        WorldSpec {
            traits: default_traits(),
            background: BackgroundSpec::new(DEFAULT_WORLD_SEED, 16, 48),
            seq_len,
        }
    }

    pub fn trait_names(&self) -> Vec<String> {
        self.traits.iter().map(|t| t.name.clone()).collect()
    }

    /// Index of a trait by name.
    pub fn trait_index(&self, name: &str) -> Result<usize> {
        self.traits
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown trait name {name:?}")))
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.traits {
            t.validate()?;
        }
        for i in 0..self.traits.len() {
            for j in i + 1..self.traits.len() {
                let a = &self.traits[i].motif_tokens;
                let b = &self.traits[j].motif_tokens;
                if a.iter().any(|t| b.contains(t)) {
                    return Err(Error::InvalidArgument(format!(
                        "motif sets of traits {} and {} overlap",
                        self.traits[i].name, self.traits[j].name
                    )));
                }
            }
        }
        if self.seq_len == 0 {
            return Err(Error::InvalidArgument("sequence length must be positive".into()));
        }
        Ok(())
    }
}

// ─── Generation ──────────────────────────────────────────────────────────────

fn motif_lookup(tr: &TraitSpec) -> Vec<bool> {
    let size = tr.motif_tokens.iter().max().copied().unwrap_or(0) as usize + 1;
    let mut lut = vec![false; size];
    for &t in &tr.motif_tokens {
        lut[t as usize] = true;
    }
    lut
}

fn is_motif(lut: &[bool], tok: Token) -> bool {
    (tok as usize) < lut.len() && lut[tok as usize]
}

/// Places one trait's motifs on the 1-based grid `period, 2·period, …`
/// restricted to `[from, to)`, with jitter and collision displacement to the
/// nearest free slot. Returns the number of motifs placed.
fn place_motifs(
    tr: &TraitSpec,
    from: usize,
    to: usize,
    occupied: &mut [bool],
    out: &mut [(usize, Token)],
    out_len: &mut usize,
    rng: &mut Rng,
) -> Result<usize> {
    let length = occupied.len();
    debug_assert!(to <= length);
    let mut placed = 0usize;
    let span = 2 * tr.jitter as u64 + 1;
    for i in 1..=length / tr.period {
        let base = (i * tr.period - 1) as i64; // 0-based grid index
        let offset = rng.next_range(span) as i64 - tr.jitter as i64;
        if (base as usize) < from || base as usize >= to {
            continue;
        }
        let want = (base + offset).clamp(from as i64, to as i64 - 1) as usize;
        let slot = find_free_slot(occupied, want, from, to).ok_or_else(|| {
            Error::Degenerate(format!("no free slot for trait {} near {want}", tr.name))
        })?;
        occupied[slot] = true;
        out[*out_len] = (slot, tr.motif_tokens[(i - 1) % tr.motif_tokens.len()]);
        *out_len += 1;
        placed += 1;
    }
    Ok(placed)
}

/// Nearest free index to `want` within `[from, to)`, preferring `want`,
/// then +1, −1, +2, −2, …
fn find_free_slot(occupied: &[bool], want: usize, from: usize, to: usize) -> Option<usize> {
    if !occupied[want] {
        return Some(want);
    }
    for d in 1..occupied.len() {
        let hi = want + d;
        if hi < to && !occupied[hi] {
            return Some(hi);
        }
        if want >= d + from {
            let lo = want - d;
            if !occupied[lo] {
                return Some(lo);
            }
        }
    }
    None
}

/// Sliding-window motif counts; `w` is the (possibly truncated) window.
/// Calls `fail(start, count)` for every window below `threshold`.
fn scan_windows(
    motif_flags: &[bool],
    w: usize,
    threshold: Real,
    mut fail: impl FnMut(usize, usize),
) {
    let mut count = motif_flags[..w].iter().filter(|&&m| m).count();
    if (count as Real) < threshold {
        fail(0, count);
    }
    for s in 1..=motif_flags.len() - w {
        count -= motif_flags[s - 1] as usize;
        count += motif_flags[s + w - 1] as usize;
        if (count as Real) < threshold {
            fail(s, count);
        }
    }
}

/// Generates one sequence. `ranges[k] = Some((a, b))` makes trait `k` active
/// on the half-open index range `[a, b)`; `None` leaves it silent. Traits
/// active over the full range additionally get a repair pass that tops up
/// any sliding window still short of the oracle threshold, so full-range
/// presence is unconditional.
fn gen_sequence_ranged(
    background: &BackgroundSpec,
    traits: &[TraitSpec],
    ranges: &[Option<(usize, usize)>],
    length: usize,
    rng: &mut Rng,
) -> Result<Vec<Token>> {
    if length == 0 {
        return Err(Error::Empty("requested sequence length 0"));
    }
    for (tr, range) in traits.iter().zip(ranges) {
        tr.validate()?;
        if range.is_some() && length < tr.period {
            return Err(Error::InvalidArgument(format!(
                "length {length} shorter than period {} of active trait {}",
                tr.period, tr.name
            )));
        }
    }

    // Background walk over the full length; motifs overwrite it below.
    let mut tokens = Vec::with_capacity(length);
    let mut state = background.initial(rng);
    tokens.push(state);
    for _ in 1..length {
        state = background.step(state, rng);
        tokens.push(state);
    }

    // Grid placement, traits in declaration order.
    let mut occupied = vec![false; length];
    let mut placements = vec![(0usize, 0 as Token); length];
    let mut n_placed = 0usize;
    for (k, range) in ranges.iter().enumerate() {
        if let Some((a, b)) = range {
            place_motifs(
                &traits[k],
                *a,
                (*b).min(length),
                &mut occupied,
                &mut placements,
                &mut n_placed,
                rng,
            )?;
        }
    }

    // Repair pass for fully active traits: every window of length W (or the
    // whole sequence if shorter) must reach presence_ratio·(W/period) motifs.
    for (k, range) in ranges.iter().enumerate() {
        if *range != Some((0, length)) {
            continue;
        }
        let tr = &traits[k];
        let lut = motif_lookup(tr);
        loop {
            let mut flags = vec![false; length];
            for &(pos, tok) in &placements[..n_placed] {
                if is_motif(&lut, tok) {
                    flags[pos] = true;
                }
            }
            let w = tr.window.min(length);
            let threshold = tr.presence_ratio * (w as Real / tr.period as Real);
            let mut shortfall: Option<usize> = None;
            scan_windows(&flags, w, threshold, |s, _| {
                if shortfall.is_none() {
                    shortfall = Some(s);
                }
            });
            let Some(s) = shortfall else { break };
            let slot = (s..s + w).find(|&i| !occupied[i]).ok_or_else(|| {
                Error::Degenerate(format!(
                    "window at {s} cannot be repaired for trait {}",
                    tr.name
                ))
            })?;
            occupied[slot] = true;
            let rotation = placements[..n_placed]
                .iter()
                .filter(|(_, tok)| is_motif(&lut, *tok))
                .count();
            placements[n_placed] = (slot, tr.motif_tokens[rotation % tr.motif_tokens.len()]);
            n_placed += 1;
        }
    }

    for &(pos, tok) in &placements[..n_placed] {
        tokens[pos] = tok;
    }
    Ok(tokens)
}

/// Generates one labeled sequence with the given active-trait mask.
///
/// Every active trait satisfies the oracle in every window (guaranteed by a
/// repair pass); inactive traits contribute zero motif tokens.
pub fn gen_sequence(
    background: &BackgroundSpec,
    traits: &[TraitSpec],
    active: &[bool],
    length: usize,
    rng: &mut Rng,
) -> Result<LabeledSequence> {
    if active.len() != traits.len() {
        return Err(Error::DimMismatch(format!(
            "active mask of {} entries for {} traits",
            active.len(),
            traits.len()
        )));
    }
    let ranges: Vec<Option<(usize, usize)>> = active
        .iter()
        .map(|&on| on.then_some((0usize, length)))
        .collect();
    let tokens = gen_sequence_ranged(background, traits, &ranges, length, rng)?;
    Ok(LabeledSequence {
        tokens,
        labels: active.to_vec(),
    })
}

// ─── Oracle ──────────────────────────────────────────────────────────────────

/// Fraction of sliding windows of length `trait.window` whose motif-token
/// count reaches `presence_ratio·(W/period)`. Sequences shorter than the
/// window are judged as one truncated window with a proportionally scaled
/// threshold. Exact and deterministic.
pub fn trait_oracle(tokens: &[Token], tr: &TraitSpec) -> Result<Real> {
    if tokens.is_empty() {
        return Err(Error::Empty("oracle input"));
    }
    tr.validate()?;
    let lut = motif_lookup(tr);
    let flags: Vec<bool> = tokens.iter().map(|&t| is_motif(&lut, t)).collect();
    let w = tr.window.min(tokens.len());
    let threshold = tr.presence_ratio * (w as Real / tr.period as Real);
    let total = tokens.len() - w + 1;
    let mut failing = 0usize;
    scan_windows(&flags, w, threshold, |_, _| failing += 1);
    Ok((total - failing) as Real / total as Real)
}

/// Boolean presence: oracle fraction strictly above one half.
pub fn trait_present(tokens: &[Token], tr: &TraitSpec) -> Result<bool> {
    Ok(trait_oracle(tokens, tr)? > 0.5)
}

// ─── Datasets ────────────────────────────────────────────────────────────────

/// Train/test pools of labeled sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<LabeledSequence>,
    pub test: Vec<LabeledSequence>,
}

/// Per-trait exactly balanced activity masks: over `2·n_pairs` rows each
/// trait is active in exactly `n_pairs`.
fn balanced_masks(n_pairs: usize, n_traits: usize, rng: &mut Rng) -> Vec<Vec<bool>> {
    let rows = 2 * n_pairs;
    let mut columns: Vec<Vec<bool>> = Vec::with_capacity(n_traits);
    for _ in 0..n_traits {
        let mut col: Vec<bool> = (0..rows).map(|i| i < n_pairs).collect();
        rng.shuffle(&mut col);
        columns.push(col);
    }
    (0..rows)
        .map(|r| columns.iter().map(|c| c[r]).collect())
        .collect()
}

/// Builds balanced train and test pools: per split, each trait is present in
/// exactly `n_pairs` of the `2·n_pairs` sequences and absent from the rest.
/// Sequences are generated from per-sequence substreams of `split_seed`
/// (train and test streams disjoint), and every label is re-checked against
/// the oracle.
pub fn build_dataset(world: &WorldSpec, n_pairs: usize, split_seed: u64) -> Result<DatasetSplit> {
    world.validate()?;
    if n_pairs < 1 {
        return Err(Error::InvalidArgument("n_pairs must be at least 1".into()));
    }
    let n_traits = world.traits.len();
    let rows = 2 * n_pairs;
    let build_split = |mask_stream: u64, seq_stream_base: u64| -> Result<Vec<LabeledSequence>> {
        let mut mask_rng = Rng::substream(split_seed, mask_stream);
        let masks = balanced_masks(n_pairs, n_traits, &mut mask_rng);
        let mut out = Vec::with_capacity(rows);
        for (i, mask) in masks.iter().enumerate() {
            let mut rng = Rng::substream(split_seed, seq_stream_base + i as u64);
            let seq = gen_sequence(
                &world.background,
                &world.traits,
                mask,
                world.seq_len,
                &mut rng,
            )?;
            for (k, tr) in world.traits.iter().enumerate() {
                if trait_present(&seq.tokens, tr)? != seq.labels[k] {
                    return Err(Error::Degenerate(format!(
                        "label/oracle mismatch for trait {} in sequence {i}",
                        tr.name
                    )));
                }
            }
            out.push(seq);
        }
        Ok(out)
    };
    let rows_u64 = rows as u64;
    Ok(DatasetSplit {
        train: build_split(0, 2)?,
        test: build_split(1, 2 + rows_u64)?,
    })
}

/// Shape of the transformer's training corpus: longer sequences in which
/// traits may switch on or off midway, so generation-time trait changes are
/// in-distribution.
#[derive(Debug, Clone, Copy)]
pub struct ModelCorpusSpec {
    pub n_sequences: usize,
    pub seq_len: usize,
    /// Probability that a trait enters partway through instead of being
    /// static.
    pub onset_prob: Real,
    /// Probability that a trait leaves partway through.
    pub offset_prob: Real,
}

impl Default for ModelCorpusSpec {
    fn default() -> Self {
        ModelCorpusSpec {
            n_sequences: 3000,
            seq_len: 128,
            onset_prob: 0.25,
            offset_prob: 0.10,
        }
    }
}

/// Builds the transformer training corpus. Labels come straight from the
/// oracle (a trait entering late may legitimately be labeled absent).
pub fn build_model_corpus(
    world: &WorldSpec,
    spec: &ModelCorpusSpec,
    seed: u64,
) -> Result<Vec<LabeledSequence>> {
    world.validate()?;
    if spec.n_sequences == 0 || spec.seq_len == 0 {
        return Err(Error::InvalidArgument("model corpus shape must be positive".into()));
    }
    let len = spec.seq_len;
    let mut out = Vec::with_capacity(spec.n_sequences);
    for i in 0..spec.n_sequences {
        let mut rng = Rng::substream(seed, i as u64);
        let mut ranges = Vec::with_capacity(world.traits.len());
        for _ in &world.traits {
            let initially_active = rng.next_f64() < 0.5;
            let pattern = rng.next_f64();
            let switch = len / 4 + rng.next_range((len / 2).max(1) as u64) as usize;
            let range = if pattern < spec.onset_prob {
                Some((switch, len))
            } else if pattern < spec.onset_prob + spec.offset_prob {
                Some((0, switch))
            } else if initially_active {
                Some((0, len))
            } else {
                None
            };
            ranges.push(range);
        }
        let tokens = gen_sequence_ranged(&world.background, &world.traits, &ranges, len, &mut rng)?;
        let labels = world
            .traits
            .iter()
            .map(|tr| trait_present(&tokens, tr))
            .collect::<Result<Vec<bool>>>()?;
        out.push(LabeledSequence { tokens, labels });
    }
    Ok(out)
}

// ─── Dataset files ───────────────────────────────────────────────────────────

/// Writes sequences as text: space-separated token ids, a tab, then the
/// comma-separated names of active traits.
pub fn save_dataset(
    path: &Path,
    seqs: &[LabeledSequence],
    trait_names: &[String],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for seq in seqs {
        let toks: Vec<String> = seq.tokens.iter().map(|t| t.to_string()).collect();
        let names: Vec<&str> = seq
            .labels
            .iter()
            .zip(trait_names)
            .filter(|(&on, _)| on)
            .map(|(_, n)| n.as_str())
            .collect();
        writeln!(w, "{}\t{}", toks.join(" "), names.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset written by [`save_dataset`]; labels are mapped through
/// `trait_names` (unknown names are format errors).
pub fn load_dataset(path: &Path, trait_names: &[String]) -> Result<Vec<LabeledSequence>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (ln, line) in r.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (tok_part, name_part) = line.split_once('\t').ok_or_else(|| {
            Error::Format(format!("dataset line {}: missing tab separator", ln + 1))
        })?;
        let tokens = tok_part
            .split(' ')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<Token>().map_err(|_| {
                    Error::Format(format!("dataset line {}: bad token id {s:?}", ln + 1))
                })
            })
            .collect::<Result<Vec<Token>>>()?;
        let mut labels = vec![false; trait_names.len()];
        if !name_part.is_empty() {
            for name in name_part.split(',') {
                let idx = trait_names
                    .iter()
                    .position(|n| n == name)
                    .ok_or_else(|| {
                        Error::Format(format!("dataset line {}: unknown trait {name:?}", ln + 1))
                    })?;
                labels[idx] = true;
            }
        }
        out.push(LabeledSequence { tokens, labels });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::rng::Rng;
    use proptest::prelude::*;
    use tempfile::tempdir;

    fn world() -> WorldSpec {
        WorldSpec::reference(64)
    }

    fn motif_count(tokens: &[Token], tr: &TraitSpec) -> usize {
        let lut = motif_lookup(tr);
        tokens.iter().filter(|&&t| is_motif(&lut, t)).count()
    }

    #[test]
    fn inactive_traits_leave_zero_motif_tokens() {
        let w = world();
        let mut rng = Rng::from_seed(1);
        let seq = gen_sequence(&w.background, &w.traits, &[false; 4], 64, &mut rng).unwrap();
        for tr in &w.traits {
            assert_eq!(motif_count(&seq.tokens, tr), 0);
        }
        // all tokens are background tokens
        assert!(seq.tokens.iter().all(|&t| (16..64).contains(&t)));
    }

    #[test]
    fn zero_jitter_single_trait_hits_the_exact_grid() {
        // One trait, period 8, jitter 0, length 64 → 8 motif tokens at
        // 1-based positions 8, 16, …, 64, rotating through the motif set.
        let mut traits = default_traits();
        let tr = &mut traits[2]; // pulse8
        tr.jitter = 0;
        let bg = BackgroundSpec::new(7, 16, 48);
        let mut rng = Rng::from_seed(2);
        let active = [false, false, true, false];
        let seq = gen_sequence(&bg, &traits, &active, 64, &mut rng).unwrap();
        let expected_positions: Vec<usize> = (1..=8).map(|i| i * 8 - 1).collect();
        let motif_at: Vec<usize> = seq
            .tokens
            .iter()
            .enumerate()
            .filter(|(_, &t)| (8..12).contains(&t))
            .map(|(i, _)| i)
            .collect();
        assert_eq!(motif_at, expected_positions);
        for (i, &pos) in expected_positions.iter().enumerate() {
            assert_eq!(seq.tokens[pos], traits[2].motif_tokens[i % 4]);
        }
    }

    #[test]
    fn jointly_active_traits_are_both_reported_present() {
        let w = world();
        let mut rng = Rng::from_seed(3);
        let seq =
            gen_sequence(&w.background, &w.traits, &[true, true, false, false], 64, &mut rng)
                .unwrap();
        assert!(trait_present(&seq.tokens, &w.traits[0]).unwrap());
        assert!(trait_present(&seq.tokens, &w.traits[1]).unwrap());
        assert!(!trait_present(&seq.tokens, &w.traits[2]).unwrap());
        assert!(!trait_present(&seq.tokens, &w.traits[3]).unwrap());
    }

    #[test]
    fn oracle_extremes() {
        let tr = &default_traits()[0];
        let all_motif: Vec<Token> = (0..64).map(|i| tr.motif_tokens[i % 4]).collect();
        assert_eq!(trait_oracle(&all_motif, tr).unwrap(), 1.0);
        let none: Vec<Token> = vec![30; 64];
        assert_eq!(trait_oracle(&none, tr).unwrap(), 0.0);
        assert!(trait_oracle(&[], tr).is_err());
    }

    #[test]
    fn oracle_counts_partial_presence_exactly() {
        // 131 tokens, trait period 4, window 32 → 100 windows. Motifs fill
        // positions 98..=130, so exactly windows 70..=99 reach 4 motifs:
        // fraction 0.30.
        let tr = &default_traits()[0];
        let mut tokens: Vec<Token> = vec![40; 131];
        for (j, slot) in (98..=130).enumerate() {
            tokens[slot] = tr.motif_tokens[j % 4];
        }
        let f = trait_oracle(&tokens, tr).unwrap();
        assert!((f - 0.30).abs() < 1e-12, "fraction {f}");
        assert!(!trait_present(&tokens, tr).unwrap());
    }

    #[test]
    fn short_sequences_use_one_scaled_truncated_window() {
        // length 10 < window 32, period 4 → threshold 0.5·(10/4) = 1.25,
        // so 1 motif fails and 2 motifs pass.
        let tr = &default_traits()[0];
        let mut tokens: Vec<Token> = vec![40; 10];
        tokens[3] = tr.motif_tokens[0];
        assert_eq!(trait_oracle(&tokens, tr).unwrap(), 0.0);
        tokens[7] = tr.motif_tokens[1];
        assert_eq!(trait_oracle(&tokens, tr).unwrap(), 1.0);
    }

    #[test]
    fn oracle_is_deterministic() {
        let w = world();
        let mut rng = Rng::from_seed(4);
        let seq = gen_sequence(&w.background, &w.traits, &[true; 4], 64, &mut rng).unwrap();
        for tr in &w.traits {
            let a = trait_oracle(&seq.tokens, tr).unwrap();
            let b = trait_oracle(&seq.tokens, tr).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn too_short_sequences_are_rejected() {
        let w = world();
        let mut rng = Rng::from_seed(5);
        // pulse12 active but length 10 < period 12
        let err = gen_sequence(&w.background, &w.traits, &[false, false, false, true], 10, &mut rng);
        assert!(err.is_err());
    }

    #[test]
    fn dataset_is_balanced_reproducible_and_oracle_consistent() {
        let w = world();
        let split = build_dataset(&w, 10, 77).unwrap();
        assert_eq!(split.train.len(), 20);
        assert_eq!(split.test.len(), 20);
        for pool in [&split.train, &split.test] {
            for k in 0..4 {
                let positives = pool.iter().filter(|s| s.labels[k]).count();
                assert_eq!(positives, 10, "trait {k}");
            }
            for seq in pool {
                for (k, tr) in w.traits.iter().enumerate() {
                    assert_eq!(trait_present(&seq.tokens, tr).unwrap(), seq.labels[k]);
                }
            }
        }
        let again = build_dataset(&w, 10, 77).unwrap();
        assert_eq!(split, again);
        let different = build_dataset(&w, 10, 78).unwrap();
        assert_ne!(split, different);
        assert_ne!(split.train, split.test);
    }

    #[test]
    fn positives_for_one_trait_exclude_other_negative_traits_motifs() {
        let w = world();
        let split = build_dataset(&w, 8, 99).unwrap();
        for seq in split.train.iter().chain(&split.test) {
            for (k, tr) in w.traits.iter().enumerate() {
                if !seq.labels[k] {
                    assert_eq!(motif_count(&seq.tokens, tr), 0);
                }
            }
        }
    }

    #[test]
    fn model_corpus_is_deterministic_and_labeled_by_the_oracle() {
        let w = world();
        let spec = ModelCorpusSpec {
            n_sequences: 30,
            seq_len: 96,
            ..ModelCorpusSpec::default()
        };
        let corpus = build_model_corpus(&w, &spec, 123).unwrap();
        assert_eq!(corpus.len(), 30);
        for seq in &corpus {
            assert_eq!(seq.tokens.len(), 96);
            for (k, tr) in w.traits.iter().enumerate() {
                assert_eq!(seq.labels[k], trait_present(&seq.tokens, tr).unwrap());
            }
        }
        let again = build_model_corpus(&w, &spec, 123).unwrap();
        assert_eq!(corpus, again);
        // Onsets/offsets produce at least one partially-present trait.
        let partial = corpus.iter().any(|s| {
            w.traits.iter().any(|tr| {
                let f = trait_oracle(&s.tokens, tr).unwrap();
                f > 0.0 && f < 1.0
            })
        });
        assert!(partial);
    }

    #[test]
    fn dataset_files_round_trip_exactly() {
        let w = world();
        let split = build_dataset(&w, 5, 31).unwrap();
        let names = w.trait_names();
        let dir = tempdir().unwrap();
        let path = dir.path().join("data.tsv");
        save_dataset(&path, &split.train, &names).unwrap();
        let loaded = load_dataset(&path, &names).unwrap();
        assert_eq!(loaded, split.train);
        // byte-identical on re-save
        let path2 = dir.path().join("data2.tsv");
        save_dataset(&path2, &loaded, &names).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn malformed_dataset_lines_are_rejected() {
        let dir = tempdir().unwrap();
        let names = vec!["pulse4".to_string()];
        let p = dir.path().join("bad1.tsv");
        std::fs::write(&p, "1 2 3\n").unwrap(); // no tab
        assert!(load_dataset(&p, &names).is_err());
        std::fs::write(&p, "1 x 3\t\n").unwrap(); // bad token
        assert!(load_dataset(&p, &names).is_err());
        std::fs::write(&p, "1 2 3\tnosuch\n").unwrap(); // unknown trait
        assert!(load_dataset(&p, &names).is_err());
        std::fs::write(&p, "1 2 3\t\n").unwrap(); // no labels: fine
        let ok = load_dataset(&p, &names).unwrap();
        assert_eq!(ok[0].labels, vec![false]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn active_traits_pass_the_oracle_in_every_window(
            mask in proptest::collection::vec(any::<bool>(), 4),
            length in 24usize..160,
            seed in 0u64..10_000,
        ) {
            let w = world();
            // skip masks whose active periods exceed the length
            for (k, &on) in mask.iter().enumerate() {
                prop_assume!(!on || length >= w.traits[k].period);
            }
            let mut rng = Rng::from_seed(seed);
            let seq = gen_sequence(&w.background, &w.traits, &mask, length, &mut rng).unwrap();
            for (k, tr) in w.traits.iter().enumerate() {
                let f = trait_oracle(&seq.tokens, tr).unwrap();
                if mask[k] {
                    prop_assert_eq!(f, 1.0, "trait {} fraction {}", k, f);
                } else {
                    prop_assert_eq!(f, 0.0);
                    prop_assert_eq!(motif_count(&seq.tokens, tr), 0);
                }
            }
        }

        #[test]
        fn generation_is_deterministic_per_seed(
            seed in 0u64..1_000,
        ) {
            let w = world();
            let mask = [true, false, true, false];
            let mut r1 = Rng::from_seed(seed);
            let mut r2 = Rng::from_seed(seed);
            let a = gen_sequence(&w.background, &w.traits, &mask, 64, &mut r1).unwrap();
            let b = gen_sequence(&w.background, &w.traits, &mask, 64, &mut r2).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
