//! Cached single-step forward pass with an activation tap and an injection
//! point between head output and output projection.
//!
//! Each decoder layer runs, per step `t`:
//!
//! ```text
//! a      = norm1(x)
//! z_h    = Att(Wq_h·a(t), Wk_h·a(1:t), Wv_h·a(1:t))       (scale 1/√D)
//! attn   = Σ_h Wo_h · (z_h + δ_h)                          (δ from the hook)
//! x_mid  = x + attn
//! y      = x_mid + ff2·gelu(ff1·norm2(x_mid))
//! ```
//!
//! The per-head `z_h` is captured in an [`ActivationRecord`] *before* the
//! hook's δ is added, so monitoring always reads the unmodified state. The
//! hook influences later steps only through the keys/values cached at
//! subsequent positions — cached entries are never edited retroactively.

use crate::error::{Error, Result};
use crate::math::ops::{dot, matvec, matvec_acc, softmax_in_place, vecmat};
use crate::math::rng::Rng;
use crate::model::config::ModelConfig;
use crate::model::net::TransformerModel;
use crate::{Real, RealVector, Token};

/// Epsilon inside the normalization square root.
pub const LN_EPS: Real = 1e-5;

/// Row-wise layer norm: `(x − μ)/√(σ² + ε) ⊙ gain + bias`.
/// Returns `(μ, 1/√(σ² + ε))` for gradient computation.
pub(crate) fn layer_norm_row(
    x: &[Real],
    gain: &[Real],
    bias: &[Real],
    out: &mut [Real],
) -> (Real, Real) {
    let n = x.len() as Real;
    let mut sum = 0.0;
    for &v in x {
        sum += v;
    }
    let mu = sum / n;
    let mut var = 0.0;
    for &v in x {
        let d = v - mu;
        var += d * d;
    }
    var /= n;
    let inv_s = 1.0 / (var + LN_EPS).sqrt();
    for i in 0..x.len() {
        out[i] = (x[i] - mu) * inv_s * gain[i] + bias[i];
    }
    (mu, inv_s)
}

/// Smooth GELU (tanh form).
#[inline]
pub(crate) fn gelu(x: Real) -> Real {
    const C: Real = 0.797_884_560_802_865_4; // sqrt(2/π)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

/// Derivative of [`gelu`].
#[inline]
pub(crate) fn gelu_deriv(x: Real) -> Real {
    const C: Real = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

// ─── Cache, record, hook ─────────────────────────────────────────────────────

/// Per-(layer, head) key/value history for one generation.
///
/// Append-only within a generation; `len` counts fully processed steps.
#[derive(Debug, Clone)]
pub struct KvCache {
    len: usize,
    keys: Vec<Vec<RealVector>>,
    vals: Vec<Vec<RealVector>>,
}

impl KvCache {
    pub fn new(config: &ModelConfig) -> Self {
        KvCache {
            len: 0,
            keys: vec![Vec::new(); config.cells()],
            vals: vec![Vec::new(); config.cells()],
        }
    }

    /// Number of steps fully processed.
    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Pre-intervention per-head activations `z_{l,h}` captured at one step.
#[derive(Debug, Clone)]
pub struct ActivationRecord {
    /// Position index of the step (0-based).
    pub step: usize,
    z: Vec<RealVector>,
}

impl ActivationRecord {
    fn new(step: usize, config: &ModelConfig) -> Self {
        ActivationRecord {
            step,
            z: vec![RealVector::zeros(0); config.cells()],
        }
    }

    /// Record with prescribed cell activations (unit-test fixture).
    #[cfg(test)]
    pub(crate) fn from_cells(step: usize, z: Vec<RealVector>) -> Self {
        ActivationRecord { step, z }
    }

    /// The captured activation of cell `(layer, head)`.
    #[inline]
    pub fn z(&self, config: &ModelConfig, layer: usize, head: usize) -> &RealVector {
        &self.z[config.cell_index(layer, head)]
    }

    /// The captured activation at flat cell index `layer*H + head`.
    #[inline]
    pub fn z_flat(&self, cell: usize) -> &RealVector {
        &self.z[cell]
    }
}

/// Additive per-head intervention δ for one step, indexed by flat cell.
///
/// Cells left unset contribute nothing. Composing two hooks sums their δ
/// vectors, so a hook composed with its negation restores the baseline
/// bit-for-bit.
#[derive(Debug, Clone)]
pub struct Hook {
    deltas: Vec<Option<RealVector>>,
}

impl Hook {
    pub fn empty(config: &ModelConfig) -> Self {
        Hook {
            deltas: vec![None; config.cells()],
        }
    }

    /// Sets δ for cell `(layer, head)`, summing with any existing entry.
    pub fn add(&mut self, config: &ModelConfig, layer: usize, head: usize, delta: RealVector) {
        let slot = &mut self.deltas[config.cell_index(layer, head)];
        match slot {
            Some(existing) => {
                for (e, d) in existing.iter_mut().zip(delta.iter()) {
                    *e += d;
                }
            }
            None => *slot = Some(delta),
        }
    }

    #[inline]
    pub fn get(&self, config: &ModelConfig, layer: usize, head: usize) -> Option<&RealVector> {
        self.deltas[config.cell_index(layer, head)].as_ref()
    }

    /// Elementwise sum of two hooks.
    pub fn compose(&self, other: &Hook) -> Hook {
        let mut out = self.clone();
        for (slot, o) in out.deltas.iter_mut().zip(&other.deltas) {
            if let Some(od) = o {
                match slot {
                    Some(s) => {
                        for (a, b) in s.iter_mut().zip(od.iter()) {
                            *a += b;
                        }
                    }
                    None => *slot = Some(od.clone()),
                }
            }
        }
        out
    }

    /// True when no cell carries a δ.
    pub fn is_empty(&self) -> bool {
        self.deltas.iter().all(|d| d.is_none())
    }
}

// ─── Forward ops ─────────────────────────────────────────────────────────────

/// One head's causal scaled dot-product attention over an explicit history.
///
/// `x_hist` holds the (normalized) layer inputs for positions `1..t`; the
/// query comes from the last entry. Reference implementation used for
/// verification; the generation path uses the cached equivalent.
pub fn attention_head(
    x_hist: &[RealVector],
    layer: usize,
    head: usize,
    model: &TransformerModel,
) -> Result<RealVector> {
    if x_hist.is_empty() {
        return Err(Error::Empty("attention history"));
    }
    let dh = model.config.model_dim();
    for x in x_hist {
        if x.dim() != dh {
            return Err(Error::DimMismatch(format!(
                "attention input dim {} vs model dim {dh}",
                x.dim()
            )));
        }
    }
    let lw = &model.layers[layer];
    let q = matvec(&lw.wq[head], x_hist.last().unwrap())?;
    let inv_sqrt_d = 1.0 / (model.config.head_dim as Real).sqrt();
    let mut scores = Vec::with_capacity(x_hist.len());
    let mut values = Vec::with_capacity(x_hist.len());
    for x in x_hist {
        let k = matvec(&lw.wk[head], x)?;
        scores.push(dot(&q, &k) * inv_sqrt_d);
        values.push(matvec(&lw.wv[head], x)?);
    }
    softmax_in_place(&mut scores);
    let mut z = RealVector::zeros(model.config.head_dim);
    for (w, v) in scores.iter().zip(&values) {
        z.add_scaled(v, *w);
    }
    Ok(z)
}

/// Output of one layer at one step.
#[derive(Debug, Clone)]
pub struct LayerStep {
    /// The layer's output vector (after residual and feed-forward).
    pub output: RealVector,
    /// The attention-block output `Σ_h Wo_h (z_h + δ_h)` before the residual
    /// add — the point where an intervention enters.
    pub attn_out: RealVector,
    /// Pre-intervention head activations `z_{l,h}(t)`, one per head.
    pub head_z: Vec<RealVector>,
}

/// Runs layer `l` for the next step, appending this step's keys/values to
/// the cache. The optional hook's δ is added to each head's captured `z`
/// before output projection. `cache.len` itself is advanced by
/// [`forward_step`], once all layers have run.
pub fn layer_forward(
    x: &RealVector,
    cache: &mut KvCache,
    layer: usize,
    model: &TransformerModel,
    hook: Option<&Hook>,
) -> Result<LayerStep> {
    let config = &model.config;
    let (d, dh) = (config.head_dim, config.model_dim());
    let lw = &model.layers[layer];
    let t = cache.len; // position of this step
    let inv_sqrt_d = 1.0 / (d as Real).sqrt();

    let mut a = RealVector::zeros(dh);
    layer_norm_row(
        x,
        lw.attn_norm_gain.row(0),
        lw.attn_norm_bias.row(0),
        a.as_mut_slice(),
    );

    let mut head_z = Vec::with_capacity(config.num_heads);
    let mut attn_sum = RealVector::zeros(dh);
    for h in 0..config.num_heads {
        let cell = config.cell_index(layer, h);
        let q = matvec(&lw.wq[h], &a)?;
        let k = matvec(&lw.wk[h], &a)?;
        let v = matvec(&lw.wv[h], &a)?;
        debug_assert_eq!(cache.keys[cell].len(), t);
        cache.keys[cell].push(k);
        cache.vals[cell].push(v);

        let mut scores: Vec<Real> = (0..=t)
            .map(|i| dot(&q, &cache.keys[cell][i]) * inv_sqrt_d)
            .collect();
        softmax_in_place(&mut scores);
        let mut z = RealVector::zeros(d);
        for (i, &w) in scores.iter().enumerate() {
            z.add_scaled(&cache.vals[cell][i], w);
        }

        let projected_input = match hook.and_then(|hk| hk.get(config, layer, h)) {
            Some(delta) => {
                if delta.dim() != d {
                    return Err(Error::DimMismatch(format!(
                        "hook delta dim {} vs head dim {d}",
                        delta.dim()
                    )));
                }
                if !delta.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "hook delta at layer {layer} head {h}"
                    )));
                }
                let mut zd = z.clone();
                for (a, b) in zd.iter_mut().zip(delta.iter()) {
                    *a += b;
                }
                zd
            }
            None => z.clone(),
        };
        matvec_acc(&mut attn_sum, &lw.wo[h], &projected_input, 1.0);
        head_z.push(z);
    }

    let mut x_mid = x.clone();
    for (m, s) in x_mid.iter_mut().zip(attn_sum.iter()) {
        *m += s;
    }

    let mut b = RealVector::zeros(dh);
    layer_norm_row(
        &x_mid,
        lw.mlp_norm_gain.row(0),
        lw.mlp_norm_bias.row(0),
        b.as_mut_slice(),
    );
    let mut f1 = matvec(&lw.ff1, &b)?;
    for (f, &bias) in f1.iter_mut().zip(lw.ff1_bias.row(0)) {
        *f = gelu(*f + bias);
    }
    let mut f2 = matvec(&lw.ff2, &f1)?;
    for (f, &bias) in f2.iter_mut().zip(lw.ff2_bias.row(0)) {
        *f += bias;
    }

    let mut output = x_mid;
    for (o, f) in output.iter_mut().zip(f2.iter()) {
        *o += f;
    }
    Ok(LayerStep {
        output,
        attn_out: attn_sum,
        head_z,
    })
}

/// Result of advancing the model by one token.
#[derive(Debug, Clone)]
pub struct StepOutput {
    /// Next-token logits (dim V).
    pub logits: RealVector,
    /// Pre-intervention head activations at this step.
    pub record: ActivationRecord,
    /// Final residual-stream vector before the output projection (dim DH).
    pub hidden: RealVector,
}

/// Feeds one token through the full stack, extending the cache by one step.
pub fn forward_step(
    model: &TransformerModel,
    cache: &mut KvCache,
    token: Token,
    hook: Option<&Hook>,
) -> Result<StepOutput> {
    let config = &model.config;
    let t = cache.len;
    if t >= config.max_context {
        return Err(Error::ContextOverflow {
            position: t,
            max_context: config.max_context,
        });
    }
    if (token as usize) >= config.vocab_size {
        return Err(Error::InvalidArgument(format!(
            "token id {token} outside vocabulary of size {}",
            config.vocab_size
        )));
    }

    let dh = config.model_dim();
    let mut x = RealVector::zeros(dh);
    for ((xv, &e), &p) in x
        .iter_mut()
        .zip(model.token_embedding.row(token as usize))
        .zip(model.pos_embedding.row(t))
    {
        *xv = e + p;
    }

    let mut record = ActivationRecord::new(t, config);
    for l in 0..config.num_layers {
        let step = layer_forward(&x, cache, l, model, hook)?;
        x = step.output;
        for (h, z) in step.head_z.into_iter().enumerate() {
            record.z[config.cell_index(l, h)] = z;
        }
    }
    cache.len += 1;

    let logits = vecmat(&x, &model.output_proj)?;
    if !logits.is_finite() {
        return Err(Error::NonFinite(format!("logits at position {t}")));
    }
    Ok(StepOutput {
        logits,
        record,
        hidden: x,
    })
}

/// Samples from `softmax(logits / temperature)`; temperature 0 is argmax
/// (ties resolve to the lowest token id).
pub fn sample_token(logits: &RealVector, temperature: Real, rng: &mut Rng) -> Result<Token> {
    if logits.is_empty() {
        return Err(Error::Empty("logits"));
    }
    if !logits.is_finite() {
        return Err(Error::NonFinite("logits passed to sampler".into()));
    }
    if temperature < 0.0 || !temperature.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "temperature must be a finite non-negative real, got {temperature}"
        )));
    }
    if temperature == 0.0 {
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        return Ok(best as Token);
    }
    let mut scaled = logits.clone();
    for v in scaled.iter_mut() {
        *v /= temperature;
    }
    softmax_in_place(scaled.as_mut_slice());
    let u = rng.next_f64();
    let mut acc = 0.0;
    for (i, &p) in scaled.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(i as Token);
        }
    }
    Ok((scaled.dim() - 1) as Token)
}
