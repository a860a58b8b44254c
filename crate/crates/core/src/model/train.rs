//! Next-token training: backward pass, gradient clipping, Adam.

use crate::error::{Error, Result};
use crate::math::ops::{matmul_acc, matmul_tn_acc, softmax_in_place};
use crate::math::rng::Rng;
use crate::model::config::ModelConfig;
use crate::model::forward::gelu_deriv;
use crate::model::net::TransformerModel;
use crate::model::seq::{full_forward, SeqTrace, TransposedWeights};
use crate::{Real, RealMatrix, Token};

/// Optimization hyper-parameters.
#[derive(Debug, Clone, Copy)]
pub struct TrainHyper {
    /// Adam step size.
    pub lr: Real,
    /// Number of optimizer steps.
    pub steps: usize,
    /// Sequences per step.
    pub batch: usize,
    /// Seed for initialization and batch sampling.
    pub seed: u64,
    /// Global gradient-norm ceiling.
    pub clip: Real,
    /// Interval (in steps) between loss-history entries.
    pub log_every: usize,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            lr: 1e-3,
            steps: 1200,
            batch: 8,
            seed: 42,
            clip: 1.0,
            log_every: 50,
        }
    }
}

/// Loss curve of one training run.
#[derive(Debug, Clone)]
pub struct TrainLog {
    /// Batch loss before the first update (nats per token).
    pub initial_loss: Real,
    /// Batch loss at the last logged step.
    pub final_loss: Real,
    /// `(step, loss)` samples every `log_every` steps plus the last step.
    pub history: Vec<(usize, Real)>,
}

fn add_col_sums(m: &RealMatrix, out: &mut [Real]) {
    for t in 0..m.rows() {
        for (o, &v) in out.iter_mut().zip(m.row(t)) {
            *o += v;
        }
    }
}

/// Adds the layer-norm input gradient for one row into `dx_add`, and the
/// gain/bias gradients into `d_gain`/`d_bias`.
fn layer_norm_backward_row(
    x: &[Real],
    mu: Real,
    inv_s: Real,
    gain: &[Real],
    d_out: &[Real],
    d_gain: &mut [Real],
    d_bias: &mut [Real],
    dx_add: &mut [Real],
) {
    let n = x.len() as Real;
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for i in 0..x.len() {
        let xhat = (x[i] - mu) * inv_s;
        let dxhat = d_out[i] * gain[i];
        d_gain[i] += d_out[i] * xhat;
        d_bias[i] += d_out[i];
        m1 += dxhat;
        m2 += dxhat * xhat;
    }
    m1 /= n;
    m2 /= n;
    for i in 0..x.len() {
        let xhat = (x[i] - mu) * inv_s;
        let dxhat = d_out[i] * gain[i];
        dx_add[i] += inv_s * (dxhat - m1 - xhat * m2);
    }
}

/// Backpropagates one sequence, accumulating parameter gradients (unscaled
/// sums) into `grads`. Returns the summed cross-entropy and the number of
/// predicted positions.
fn backward_sequence(
    model: &TransformerModel,
    tw: &TransposedWeights,
    trace: &SeqTrace,
    tokens: &[Token],
    grads: &mut TransformerModel,
) -> (Real, usize) {
    let config = &model.config;
    let t_len = tokens.len();
    let (d, dh) = (config.head_dim, config.model_dim());
    let n_layers = config.num_layers;
    let inv_sqrt_d = 1.0 / (d as Real).sqrt();

    // Cross-entropy and dLogits over positions 0..T-2.
    let mut loss_sum = 0.0;
    let mut d_logits = RealMatrix::zeros(t_len, config.vocab_size);
    for t in 0..t_len.saturating_sub(1) {
        let target = tokens[t + 1] as usize;
        let row = trace.logits.row(t);
        let mut probs = row.to_vec();
        softmax_in_place(&mut probs);
        loss_sum += -probs[target].max(Real::MIN_POSITIVE).ln();
        let d_row = d_logits.row_mut(t);
        d_row.copy_from_slice(&probs);
        d_row[target] -= 1.0;
    }
    let positions = t_len - 1;

    // Output projection.
    let x_final = &trace.x[n_layers];
    matmul_tn_acc(&mut grads.output_proj, x_final, &d_logits);
    let mut dx = RealMatrix::zeros(t_len, dh);
    matmul_acc(&mut dx, &d_logits, &tw.out_t);

    for l in (0..n_layers).rev() {
        let lw = &model.layers[l];
        let gl = &mut grads.layers[l];

        // Feed-forward branch: x_next = x_mid + G·ff2ᵀ + b2.
        let d_f2 = &dx; // gradient wrt the ff2 output rows
        add_col_sums(d_f2, gl.ff2_bias.row_mut(0));
        matmul_tn_acc(&mut gl.ff2, d_f2, &trace.g[l]);
        let mut d_g = RealMatrix::zeros(t_len, 4 * dh);
        matmul_acc(&mut d_g, d_f2, &lw.ff2);
        // Through the GELU.
        let mut d_f1 = d_g;
        for (dv, &fv) in d_f1.data_mut().iter_mut().zip(trace.f1[l].data()) {
            *dv *= gelu_deriv(fv);
        }
        add_col_sums(&d_f1, gl.ff1_bias.row_mut(0));
        matmul_tn_acc(&mut gl.ff1, &d_f1, &trace.b[l]);
        let mut d_b = RealMatrix::zeros(t_len, dh);
        matmul_acc(&mut d_b, &d_f1, &lw.ff1);

        // Pre-MLP norm; x_mid also receives the residual gradient dx.
        let mut d_x_mid = dx.clone();
        for t in 0..t_len {
            let (mu, inv_s) = trace.ln2_stats[l][t];
            layer_norm_backward_row(
                trace.x_mid[l].row(t),
                mu,
                inv_s,
                lw.mlp_norm_gain.row(0),
                d_b.row(t),
                gl.mlp_norm_gain.row_mut(0),
                gl.mlp_norm_bias.row_mut(0),
                d_x_mid.row_mut(t),
            );
        }

        // Attention branch: x_mid = x_in + Σ_h Z_h·wo_hᵀ.
        let mut d_a = RealMatrix::zeros(t_len, dh);
        for h in 0..config.num_heads {
            let mut d_z = RealMatrix::zeros(t_len, d);
            matmul_acc(&mut d_z, &d_x_mid, &lw.wo[h]);
            matmul_tn_acc(&mut gl.wo[h], &d_x_mid, &trace.z[l][h]);

            let v_t = trace.v[l][h].transposed();
            let mut d_p = RealMatrix::zeros(t_len, t_len);
            matmul_acc(&mut d_p, &d_z, &v_t);
            let mut d_v = RealMatrix::zeros(t_len, d);
            matmul_tn_acc(&mut d_v, &trace.p[l][h], &d_z);
            matmul_tn_acc(&mut gl.wv[h], &d_v, &trace.a[l]);
            matmul_acc(&mut d_a, &d_v, &lw.wv[h]);

            // Softmax backward per causal row, scaled by 1/√D up front.
            let mut d_s = RealMatrix::zeros(t_len, t_len);
            for t in 0..t_len {
                let p_row = trace.p[l][h].row(t);
                let dp_row = d_p.row(t);
                let mut inner = 0.0;
                for j in 0..=t {
                    inner += p_row[j] * dp_row[j];
                }
                let ds_row = d_s.row_mut(t);
                for j in 0..=t {
                    ds_row[j] = p_row[j] * (dp_row[j] - inner) * inv_sqrt_d;
                }
            }

            let mut d_q = RealMatrix::zeros(t_len, d);
            matmul_acc(&mut d_q, &d_s, &trace.k[l][h]);
            let mut d_k = RealMatrix::zeros(t_len, d);
            matmul_tn_acc(&mut d_k, &d_s, &trace.q[l][h]);

            matmul_tn_acc(&mut gl.wq[h], &d_q, &trace.a[l]);
            matmul_tn_acc(&mut gl.wk[h], &d_k, &trace.a[l]);
            matmul_acc(&mut d_a, &d_q, &lw.wq[h]);
            matmul_acc(&mut d_a, &d_k, &lw.wk[h]);
        }

        // Pre-attention norm; x_in receives residual gradient d_x_mid.
        let mut d_x_in = d_x_mid.clone();
        for t in 0..t_len {
            let (mu, inv_s) = trace.ln1_stats[l][t];
            layer_norm_backward_row(
                trace.x[l].row(t),
                mu,
                inv_s,
                lw.attn_norm_gain.row(0),
                d_a.row(t),
                gl.attn_norm_gain.row_mut(0),
                gl.attn_norm_bias.row_mut(0),
                d_x_in.row_mut(t),
            );
        }
        dx = d_x_in;
    }

    // Embedding gradients.
    for (t, &tok) in tokens.iter().enumerate() {
        let d_row = dx.row(t);
        let e_row = grads.token_embedding.row_mut(tok as usize);
        for i in 0..dh {
            e_row[i] += d_row[i];
        }
        let p_row = grads.pos_embedding.row_mut(t);
        for i in 0..dh {
            p_row[i] += d_row[i];
        }
    }

    (loss_sum, positions)
}

/// Mean next-token cross-entropy over `seqs` and its parameter gradients.
///
/// Exposed so gradients can be verified against finite differences.
pub fn loss_and_grads(
    model: &TransformerModel,
    seqs: &[&[Token]],
) -> Result<(Real, TransformerModel)> {
    if seqs.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    for s in seqs {
        if s.len() < 2 {
            return Err(Error::InvalidArgument(
                "training sequences need at least 2 tokens".into(),
            ));
        }
    }
    let tw = TransposedWeights::new(model);
    let mut grads = TransformerModel::zeros(model.config)?;
    let mut loss_sum = 0.0;
    let mut positions = 0usize;
    for tokens in seqs {
        let trace = full_forward(model, &tw, tokens)?;
        let (l, p) = backward_sequence(model, &tw, &trace, tokens, &mut grads);
        loss_sum += l;
        positions += p;
    }
    let scale = 1.0 / positions as Real;
    for tensor in grads.tensors_mut() {
        for v in tensor.data_mut() {
            *v *= scale;
        }
    }
    Ok((loss_sum * scale, grads))
}

fn global_norm(grads: &TransformerModel) -> Real {
    let mut sq = 0.0;
    for t in grads.tensors() {
        for &v in t.data() {
            sq += v * v;
        }
    }
    sq.sqrt()
}

/// Trains a freshly initialized model on `corpus` with next-token
/// cross-entropy under Adam, gradient clipping at `hyper.clip`.
///
/// Batches are drawn i.i.d. from the corpus with a stream derived from
/// `hyper.seed`. A non-finite loss aborts with the failing step index.
pub fn train_model(
    corpus: &[Vec<Token>],
    config: &ModelConfig,
    hyper: &TrainHyper,
) -> Result<(TransformerModel, TrainLog)> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    for seq in corpus {
        if seq.len() < 2 || seq.len() > config.max_context {
            return Err(Error::InvalidArgument(format!(
                "corpus sequence length {} outside [2, {}]",
                seq.len(),
                config.max_context
            )));
        }
    }
    if hyper.batch == 0 || hyper.steps == 0 {
        return Err(Error::InvalidArgument(
            "batch and steps must be positive".into(),
        ));
    }

    let mut model = TransformerModel::init(*config, hyper.seed)?;
    let mut m1 = TransformerModel::zeros(*config)?;
    let mut m2 = TransformerModel::zeros(*config)?;
    let mut rng = Rng::substream(hyper.seed, 1);

    const BETA1: Real = 0.9;
    const BETA2: Real = 0.999;
    const EPS: Real = 1e-8;

    let mut log = TrainLog {
        initial_loss: 0.0,
        final_loss: 0.0,
        history: Vec::new(),
    };

    for step in 0..hyper.steps {
        let batch: Vec<&[Token]> = (0..hyper.batch)
            .map(|_| corpus[rng.next_range(corpus.len() as u64) as usize].as_slice())
            .collect();
        let (loss, mut grads) = loss_and_grads(&model, &batch)?;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { step });
        }
        if step == 0 {
            log.initial_loss = loss;
        }
        if step % hyper.log_every == 0 || step + 1 == hyper.steps {
            log.history.push((step, loss));
            log.final_loss = loss;
        }

        let norm = global_norm(&grads);
        if norm > hyper.clip {
            let scale = hyper.clip / norm;
            for t in grads.tensors_mut() {
                for v in t.data_mut() {
                    *v *= scale;
                }
            }
        }

        let t_adam = (step + 1) as Real;
        let bc1 = 1.0 - BETA1.powf(t_adam);
        let bc2 = 1.0 - BETA2.powf(t_adam);
        let mut params = model.tensors_mut();
        let mut ms = m1.tensors_mut();
        let mut vs = m2.tensors_mut();
        let gs = grads.tensors();
        for i in 0..params.len() {
            let p = params[i].data_mut();
            let m = ms[i].data_mut();
            let v = vs[i].data_mut();
            let g = gs[i].data();
            for j in 0..p.len() {
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * g[j];
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= hyper.lr * m_hat / (v_hat.sqrt() + EPS);
            }
        }
    }

    if !model.is_finite() {
        return Err(Error::TrainingDiverged { step: hyper.steps });
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::seq::sequence_loss;

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
    fn gradients_match_central_finite_differences() {
        let config = tiny_config();
        let model = TransformerModel::init(config, 17).unwrap();
        let seq: Vec<Token> = vec![3, 1, 4, 1, 5, 7];
        let seqs = [seq.as_slice()];
        let (_, grads) = loss_and_grads(&model, &seqs).unwrap();

        let tensor_sizes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
        let n_tensors = tensor_sizes.len();
        let mut rng = Rng::from_seed(8080);
        let mut checked = 0;
        let mut worst: Real = 0.0;
        while checked < 120 {
            let ti = rng.next_range(n_tensors as u64) as usize;
            let ei = rng.next_range(tensor_sizes[ti] as u64) as usize;
            let g = grads.tensors()[ti].data()[ei];

            let mut perturbed = model.clone();
            let w = perturbed.tensors()[ti].data()[ei];
            let h = 1e-5 * (1.0 + w.abs());
            perturbed.tensors_mut()[ti].data_mut()[ei] = w + h;
            let (lp, _) = loss_and_grads(&perturbed, &seqs).unwrap();
            perturbed.tensors_mut()[ti].data_mut()[ei] = w - h;
            let (lm, _) = loss_and_grads(&perturbed, &seqs).unwrap();
            let fd = (lp - lm) / (2.0 * h);

            let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-6);
            worst = worst.max(rel);
            assert!(rel < 1e-4, "tensor {ti} elem {ei}: analytic {g} vs fd {fd} (rel {rel})");
            checked += 1;
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn single_token_vocabulary_has_zero_loss() {
        let config = ModelConfig {
            num_layers: 1,
            num_heads: 1,
            head_dim: 4,
            vocab_size: 1,
            max_context: 8,
        };
        let corpus = vec![vec![0u32; 6]];
        let hyper = TrainHyper {
            steps: 3,
            batch: 1,
            ..TrainHyper::default()
        };
        let (model, log) = train_model(&corpus, &config, &hyper).unwrap();
        assert_eq!(log.final_loss, 0.0);
        assert_eq!(sequence_loss(&model, &corpus[0]).unwrap(), 0.0);
    }

    #[test]
    fn trainer_memorizes_a_single_repeated_sequence() {
        let config = tiny_config();
        let seq: Vec<Token> = vec![1, 5, 2, 7, 3, 0, 6, 4, 1, 5, 2, 7];
        let corpus = vec![seq.clone()];
        let hyper = TrainHyper {
            lr: 3e-3,
            steps: 400,
            batch: 1,
            seed: 11,
            ..TrainHyper::default()
        };
        let (model, log) = train_model(&corpus, &config, &hyper).unwrap();
        assert!(log.final_loss < log.initial_loss);
        let per_token = sequence_loss(&model, &seq).unwrap();
        assert!(per_token < 0.05, "memorization loss {per_token}");
    }

    #[test]
    fn training_rejects_bad_inputs() {
        let config = tiny_config();
        let hyper = TrainHyper::default();
        assert!(train_model(&[], &config, &hyper).is_err());
        assert!(train_model(&[vec![1]], &config, &hyper).is_err());
        let too_long = vec![vec![0u32; 20]];
        assert!(train_model(&too_long, &config, &hyper).is_err());
    }
}
