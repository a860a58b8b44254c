//! Whole-sequence forward pass over matrix products.
//!
//! Functionally identical to repeated [`forward_step`](crate::model::forward_step)
//! calls (agreement within 1e-9 — see the cache-equivalence tests) but
//! computed with sequence-level matrix products, which is what training,
//! activation extraction, and sequence embedding want.

use crate::error::{Error, Result};
use crate::math::ops::{matmul_acc, softmax_in_place};
use crate::model::config::ModelConfig;
use crate::model::forward::{gelu, layer_norm_row};
use crate::model::net::TransformerModel;
use crate::{Real, RealMatrix, RealVector, Token};

/// Weight matrices re-laid-out so every product in the sequence pass is a
/// plain row-major product. Rebuilt whenever the weights change.
pub(crate) struct TransposedWeights {
    /// Per layer, per head: DH×D.
    pub wq_t: Vec<Vec<RealMatrix>>,
    pub wk_t: Vec<Vec<RealMatrix>>,
    pub wv_t: Vec<Vec<RealMatrix>>,
    /// Per layer, per head: D×DH.
    pub wo_t: Vec<Vec<RealMatrix>>,
    /// Per layer: DH×4DH.
    pub ff1_t: Vec<RealMatrix>,
    /// Per layer: 4DH×DH.
    pub ff2_t: Vec<RealMatrix>,
    /// V×DH.
    pub out_t: RealMatrix,
}

impl TransposedWeights {
    pub(crate) fn new(model: &TransformerModel) -> Self {
        let t_all = |ws: &[RealMatrix]| ws.iter().map(|w| w.transposed()).collect::<Vec<_>>();
        TransposedWeights {
            wq_t: model.layers.iter().map(|l| t_all(&l.wq)).collect(),
            wk_t: model.layers.iter().map(|l| t_all(&l.wk)).collect(),
            wv_t: model.layers.iter().map(|l| t_all(&l.wv)).collect(),
            wo_t: model.layers.iter().map(|l| t_all(&l.wo)).collect(),
            ff1_t: model.layers.iter().map(|l| l.ff1.transposed()).collect(),
            ff2_t: model.layers.iter().map(|l| l.ff2.transposed()).collect(),
            out_t: model.output_proj.transposed(),
        }
    }
}

/// Per-row layer-norm statistics `(μ, 1/√(σ²+ε))`.
pub(crate) type LnStats = Vec<(Real, Real)>;

/// Every intermediate needed by the backward pass, for one sequence.
pub(crate) struct SeqTrace {
    /// L+1 entries of T×DH: layer inputs, then the final hidden states.
    pub x: Vec<RealMatrix>,
    pub ln1_stats: Vec<LnStats>,
    /// Post-attention-norm activations, per layer (T×DH).
    pub a: Vec<RealMatrix>,
    /// Per layer, per head: T×D.
    pub q: Vec<Vec<RealMatrix>>,
    pub k: Vec<Vec<RealMatrix>>,
    pub v: Vec<Vec<RealMatrix>>,
    /// Attention weights after causal softmax (T×T, zero above diagonal).
    pub p: Vec<Vec<RealMatrix>>,
    /// Head outputs, per layer/head (T×D).
    pub z: Vec<Vec<RealMatrix>>,
    /// Residual stream after attention (T×DH), per layer.
    pub x_mid: Vec<RealMatrix>,
    pub ln2_stats: Vec<LnStats>,
    /// Post-mlp-norm activations, per layer (T×DH).
    pub b: Vec<RealMatrix>,
    /// Feed-forward pre-activations with bias (T×4DH), per layer.
    pub f1: Vec<RealMatrix>,
    /// Feed-forward post-GELU activations (T×4DH), per layer.
    pub g: Vec<RealMatrix>,
    /// T×V.
    pub logits: RealMatrix,
}

fn validate_tokens(config: &ModelConfig, tokens: &[Token]) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::Empty("token sequence"));
    }
    if tokens.len() > config.max_context {
        return Err(Error::ContextOverflow {
            position: tokens.len() - 1,
            max_context: config.max_context,
        });
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= config.vocab_size) {
        return Err(Error::InvalidArgument(format!(
            "token id {bad} outside vocabulary of size {}",
            config.vocab_size
        )));
    }
    Ok(())
}

fn norm_rows(
    x: &RealMatrix,
    gain: &[Real],
    bias: &[Real],
) -> (RealMatrix, LnStats) {
    let mut out = RealMatrix::zeros(x.rows(), x.cols());
    let mut stats = Vec::with_capacity(x.rows());
    for t in 0..x.rows() {
        stats.push(layer_norm_row(x.row(t), gain, bias, out.row_mut(t)));
    }
    (out, stats)
}

/// Full forward pass capturing every intermediate.
pub(crate) fn full_forward(
    model: &TransformerModel,
    tw: &TransposedWeights,
    tokens: &[Token],
) -> Result<SeqTrace> {
    let config = &model.config;
    validate_tokens(config, tokens)?;
    let t_len = tokens.len();
    let (d, dh) = (config.head_dim, config.model_dim());
    let inv_sqrt_d = 1.0 / (d as Real).sqrt();

    let mut x0 = RealMatrix::zeros(t_len, dh);
    for (t, &tok) in tokens.iter().enumerate() {
        let row = x0.row_mut(t);
        let emb = model.token_embedding.row(tok as usize);
        let pos = model.pos_embedding.row(t);
        for i in 0..dh {
            row[i] = emb[i] + pos[i];
        }
    }

    let mut trace = SeqTrace {
        x: vec![x0],
        ln1_stats: Vec::new(),
        a: Vec::new(),
        q: Vec::new(),
        k: Vec::new(),
        v: Vec::new(),
        p: Vec::new(),
        z: Vec::new(),
        x_mid: Vec::new(),
        ln2_stats: Vec::new(),
        b: Vec::new(),
        f1: Vec::new(),
        g: Vec::new(),
        logits: RealMatrix::zeros(0, 0),
    };

    for l in 0..config.num_layers {
        let lw = &model.layers[l];
        let x_in = trace.x.last().unwrap();

        let (a, ln1) = norm_rows(x_in, lw.attn_norm_gain.row(0), lw.attn_norm_bias.row(0));

        let mut qs = Vec::with_capacity(config.num_heads);
        let mut ks = Vec::with_capacity(config.num_heads);
        let mut vs = Vec::with_capacity(config.num_heads);
        let mut ps = Vec::with_capacity(config.num_heads);
        let mut zs = Vec::with_capacity(config.num_heads);
        let mut attn_out = RealMatrix::zeros(t_len, dh);
        for h in 0..config.num_heads {
            let mut q = RealMatrix::zeros(t_len, d);
            let mut k = RealMatrix::zeros(t_len, d);
            let mut v = RealMatrix::zeros(t_len, d);
            matmul_acc(&mut q, &a, &tw.wq_t[l][h]);
            matmul_acc(&mut k, &a, &tw.wk_t[l][h]);
            matmul_acc(&mut v, &a, &tw.wv_t[l][h]);

            let k_t = k.transposed();
            let mut s = RealMatrix::zeros(t_len, t_len);
            matmul_acc(&mut s, &q, &k_t);
            // Causal softmax row by row; entries past the diagonal stay 0.
            for t in 0..t_len {
                let row = s.row_mut(t);
                for v in row[..=t].iter_mut() {
                    *v *= inv_sqrt_d;
                }
                softmax_in_place(&mut row[..=t]);
                for v in row[t + 1..].iter_mut() {
                    *v = 0.0;
                }
            }

            let mut z = RealMatrix::zeros(t_len, d);
            matmul_acc(&mut z, &s, &v);
            matmul_acc(&mut attn_out, &z, &tw.wo_t[l][h]);

            qs.push(q);
            ks.push(k);
            vs.push(v);
            ps.push(s);
            zs.push(z);
        }

        let mut x_mid = x_in.clone();
        for (m, o) in x_mid.data_mut().iter_mut().zip(attn_out.data()) {
            *m += o;
        }

        let (b, ln2) = norm_rows(&x_mid, lw.mlp_norm_gain.row(0), lw.mlp_norm_bias.row(0));
        let mut f1 = RealMatrix::zeros(t_len, 4 * dh);
        matmul_acc(&mut f1, &b, &tw.ff1_t[l]);
        for t in 0..t_len {
            for (fv, &bias) in f1.row_mut(t).iter_mut().zip(lw.ff1_bias.row(0)) {
                *fv += bias;
            }
        }
        let mut g = RealMatrix::zeros(t_len, 4 * dh);
        for (gv, &fv) in g.data_mut().iter_mut().zip(f1.data()) {
            *gv = gelu(fv);
        }
        let mut f2 = RealMatrix::zeros(t_len, dh);
        matmul_acc(&mut f2, &g, &tw.ff2_t[l]);
        let mut x_next = x_mid.clone();
        for t in 0..t_len {
            let row = x_next.row_mut(t);
            let f_row = f2.row(t);
            for i in 0..dh {
                row[i] += f_row[i] + lw.ff2_bias.row(0)[i];
            }
        }

        trace.ln1_stats.push(ln1);
        trace.a.push(a);
        trace.q.push(qs);
        trace.k.push(ks);
        trace.v.push(vs);
        trace.p.push(ps);
        trace.z.push(zs);
        trace.x_mid.push(x_mid);
        trace.ln2_stats.push(ln2);
        trace.b.push(b);
        trace.f1.push(f1);
        trace.g.push(g);
        trace.x.push(x_next);
    }

    let final_hidden = trace.x.last().unwrap();
    let mut logits = RealMatrix::zeros(t_len, config.vocab_size);
    matmul_acc(&mut logits, final_hidden, &model.output_proj);
    if !logits.is_finite() {
        return Err(Error::NonFinite("sequence logits".into()));
    }
    trace.logits = logits;
    Ok(trace)
}

/// What the inference-only sequence pass returns.
#[derive(Debug, Clone)]
pub struct SeqOutputs {
    /// Next-token logits at every position (T×V).
    pub logits: RealMatrix,
    /// Final residual-stream states before the output projection (T×DH).
    pub hidden: RealMatrix,
    /// Per-(layer, head) activations `z_{l,h}` at the last position,
    /// flat-indexed by `layer*H + head`.
    pub last_z: Vec<RealVector>,
}

/// Runs the whole sequence at once and returns logits, final hidden states,
/// and the last-position head activations.
pub fn forward_sequence(model: &TransformerModel, tokens: &[Token]) -> Result<SeqOutputs> {
    let tw = TransposedWeights::new(model);
    forward_sequence_with(model, &tw, tokens)
}

/// [`forward_sequence`] against pre-transposed weights (for callers running
/// many sequences against one model).
pub(crate) fn forward_sequence_with(
    model: &TransformerModel,
    tw: &TransposedWeights,
    tokens: &[Token],
) -> Result<SeqOutputs> {
    let trace = full_forward(model, tw, tokens)?;
    let config = &model.config;
    let last = tokens.len() - 1;
    let mut last_z = Vec::with_capacity(config.cells());
    for l in 0..config.num_layers {
        for h in 0..config.num_heads {
            last_z.push(RealVector::from_vec(trace.z[l][h].row(last).to_vec()));
        }
    }
    let mut x_iter = trace.x.into_iter();
    let hidden = x_iter.nth(config.num_layers).unwrap();
    Ok(SeqOutputs {
        logits: trace.logits,
        hidden,
        last_z,
    })
}

/// Mean next-token cross-entropy of `model` on `tokens` (nats per token).
pub fn sequence_loss(model: &TransformerModel, tokens: &[Token]) -> Result<Real> {
    if tokens.len() < 2 {
        return Err(Error::InvalidArgument(
            "loss needs a sequence of at least 2 tokens".into(),
        ));
    }
    let out = forward_sequence(model, tokens)?;
    let mut total = 0.0;
    for t in 0..tokens.len() - 1 {
        total += cross_entropy_row(out.logits.row(t), tokens[t + 1]);
    }
    Ok(total / (tokens.len() - 1) as Real)
}

/// `−log softmax(logits)[target]`, computed stably.
pub(crate) fn cross_entropy_row(logits: &[Real], target: Token) -> Real {
    let mut max = logits[0];
    for &v in logits {
        if v > max {
            max = v;
        }
    }
    let mut sum = 0.0;
    for &v in logits {
        sum += (v - max).exp();
    }
    max + sum.ln() - logits[target as usize]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::forward::{forward_step, KvCache};

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            num_layers: 2,
            num_heads: 2,
            head_dim: 4,
            vocab_size: 8,
            max_context: 16,
        }
    }

    #[test]
    fn sequence_and_cached_paths_agree_within_1e9() {
        let config = tiny_config();
        let model = TransformerModel::init(config, 21).unwrap();
        let tokens = [1u32, 7, 3, 0, 5, 5, 2, 6];

        let seq = forward_sequence(&model, &tokens).unwrap();
        let mut cache = KvCache::new(&config);
        for (t, &tok) in tokens.iter().enumerate() {
            let step = forward_step(&model, &mut cache, tok, None).unwrap();
            for vi in 0..config.vocab_size {
                let diff = (step.logits[vi] - seq.logits[(t, vi)]).abs();
                assert!(diff < 1e-9, "t={t} v={vi} diff={diff}");
            }
            for i in 0..config.model_dim() {
                assert!((step.hidden[i] - seq.hidden[(t, i)]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sequence_and_cached_paths_agree_at_full_context() {
        let config = ModelConfig {
            max_context: 48,
            ..tiny_config()
        };
        let model = TransformerModel::init(config, 22).unwrap();
        let tokens: Vec<Token> = (0..48).map(|i| (i * 5 % 8) as Token).collect();
        let seq = forward_sequence(&model, &tokens).unwrap();
        let mut cache = KvCache::new(&config);
        for (t, &tok) in tokens.iter().enumerate() {
            let step = forward_step(&model, &mut cache, tok, None).unwrap();
            for vi in 0..config.vocab_size {
                assert!((step.logits[vi] - seq.logits[(t, vi)]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn last_position_activations_match_cached_records() {
        let config = tiny_config();
        let model = TransformerModel::init(config, 23).unwrap();
        let tokens = [4u32, 2, 7, 1, 3];
        let seq = forward_sequence(&model, &tokens).unwrap();
        let mut cache = KvCache::new(&config);
        let mut last = None;
        for &tok in &tokens {
            last = Some(forward_step(&model, &mut cache, tok, None).unwrap());
        }
        let record = last.unwrap().record;
        for cell in 0..config.cells() {
            for i in 0..config.head_dim {
                let diff = (seq.last_z[cell][i] - record.z_flat(cell)[i]).abs();
                assert!(diff < 1e-9, "cell {cell} dim {i}");
            }
        }
    }

    #[test]
    fn sequence_pass_validates_input() {
        let config = tiny_config();
        let model = TransformerModel::init(config, 24).unwrap();
        assert!(forward_sequence(&model, &[]).is_err());
        assert!(forward_sequence(&model, &[9]).is_err());
        let long: Vec<Token> = vec![0; 17];
        assert!(matches!(
            forward_sequence(&model, &long),
            Err(Error::ContextOverflow { .. })
        ));
    }

    #[test]
    fn cross_entropy_row_matches_direct_formula() {
        let logits = [2.0f64.ln(), 0.0];
        // softmax = [2/3, 1/3]; -ln(2/3), -ln(1/3)
        assert!((cross_entropy_row(&logits, 0) - (3.0f64 / 2.0).ln()).abs() < 1e-12);
        assert!((cross_entropy_row(&logits, 1) - 3.0f64.ln()).abs() < 1e-12);
    }
}
