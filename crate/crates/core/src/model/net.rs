//! Weight storage and initialization.

use crate::error::Result;
use crate::math::rng::Rng;
use crate::model::config::ModelConfig;
use crate::{Real, RealMatrix};

/// Parameters of one pre-norm decoder layer.
///
/// Attention projections are stored per head: `wq[h]`, `wk[h]`, `wv[h]` map
/// the model dim down to the head dim (shape D×DH, applied by row dot);
/// `wo[h]` maps back up (DH×D). Norm gains/biases and feed-forward biases are
/// stored as 1-row matrices so every parameter shares one tensor type.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub attn_norm_gain: RealMatrix,
    pub attn_norm_bias: RealMatrix,
    pub wq: Vec<RealMatrix>,
    pub wk: Vec<RealMatrix>,
    pub wv: Vec<RealMatrix>,
    pub wo: Vec<RealMatrix>,
    pub mlp_norm_gain: RealMatrix,
    pub mlp_norm_bias: RealMatrix,
    /// First feed-forward map, 4DH×DH.
    pub ff1: RealMatrix,
    pub ff1_bias: RealMatrix,
    /// Second feed-forward map, DH×4DH.
    pub ff2: RealMatrix,
    pub ff2_bias: RealMatrix,
}

/// Decoder-only transformer: token + learned positional embeddings, a stack
/// of pre-norm layers, and a linear output projection (no final norm).
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerModel {
    pub config: ModelConfig,
    /// V×DH, one embedding row per token id.
    pub token_embedding: RealMatrix,
    /// T_max×DH, one row per absolute position.
    pub pos_embedding: RealMatrix,
    pub layers: Vec<LayerWeights>,
    /// DH×V; logits are the hidden row-vector times this matrix.
    pub output_proj: RealMatrix,
}

impl LayerWeights {
    fn zeros(config: &ModelConfig) -> Self {
        let (d, dh) = (config.head_dim, config.model_dim());
        let head_mats = |r, c| vec![RealMatrix::zeros(r, c); config.num_heads];
        LayerWeights {
            attn_norm_gain: RealMatrix::zeros(1, dh),
            attn_norm_bias: RealMatrix::zeros(1, dh),
            wq: head_mats(d, dh),
            wk: head_mats(d, dh),
            wv: head_mats(d, dh),
            wo: head_mats(dh, d),
            mlp_norm_gain: RealMatrix::zeros(1, dh),
            mlp_norm_bias: RealMatrix::zeros(1, dh),
            ff1: RealMatrix::zeros(4 * dh, dh),
            ff1_bias: RealMatrix::zeros(1, 4 * dh),
            ff2: RealMatrix::zeros(dh, 4 * dh),
            ff2_bias: RealMatrix::zeros(1, dh),
        }
    }
}

impl TransformerModel {
    /// All-zero model of the given shape (gradient/optimizer buffers).
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(TransformerModel {
            config,
            token_embedding: RealMatrix::zeros(config.vocab_size, config.model_dim()),
            pos_embedding: RealMatrix::zeros(config.max_context, config.model_dim()),
            layers: (0..config.num_layers)
                .map(|_| LayerWeights::zeros(&config))
                .collect(),
            output_proj: RealMatrix::zeros(config.model_dim(), config.vocab_size),
        })
    }

    /// Randomly initialized model: embeddings N(0, 0.02), linear maps
    /// N(0, 1/√fan_in), norm gains 1, all biases 0. Draws fill the tensors
    /// in canonical order from a single deterministic stream.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let mut rng = Rng::from_seed(seed);
        let (d, dh) = (config.head_dim, config.model_dim());
        let inv = |fan_in: usize| 1.0 / (fan_in as Real).sqrt();

        rng.fill_normal(model.token_embedding.data_mut(), 0.02);
        rng.fill_normal(model.pos_embedding.data_mut(), 0.02);
        for layer in &mut model.layers {
            layer.attn_norm_gain.data_mut().fill(1.0);
            for w in layer.wq.iter_mut().chain(&mut layer.wk).chain(&mut layer.wv) {
                rng.fill_normal(w.data_mut(), inv(dh));
            }
            for w in &mut layer.wo {
                rng.fill_normal(w.data_mut(), inv(d));
            }
            layer.mlp_norm_gain.data_mut().fill(1.0);
            rng.fill_normal(layer.ff1.data_mut(), inv(dh));
            rng.fill_normal(layer.ff2.data_mut(), inv(4 * dh));
        }
        rng.fill_normal(model.output_proj.data_mut(), inv(dh));
        Ok(model)
    }

    /// All parameter tensors in canonical order — the order used by
    /// checkpoints, initialization, and optimizer state:
    /// `token_embedding`, `pos_embedding`, then per layer
    /// (`attn_norm_gain`, `attn_norm_bias`, `wq[0..H]`, `wk[0..H]`,
    /// `wv[0..H]`, `wo[0..H]`, `mlp_norm_gain`, `mlp_norm_bias`, `ff1`,
    /// `ff1_bias`, `ff2`, `ff2_bias`), then `output_proj`.
    pub fn tensors(&self) -> Vec<&RealMatrix> {
        let mut out: Vec<&RealMatrix> = vec![&self.token_embedding, &self.pos_embedding];
        for layer in &self.layers {
            out.push(&layer.attn_norm_gain);
            out.push(&layer.attn_norm_bias);
            out.extend(layer.wq.iter());
            out.extend(layer.wk.iter());
            out.extend(layer.wv.iter());
            out.extend(layer.wo.iter());
            out.push(&layer.mlp_norm_gain);
            out.push(&layer.mlp_norm_bias);
            out.push(&layer.ff1);
            out.push(&layer.ff1_bias);
            out.push(&layer.ff2);
            out.push(&layer.ff2_bias);
        }
        out.push(&self.output_proj);
        out
    }

    /// Mutable view of the tensors in the same canonical order as
    /// [`tensors`](Self::tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut RealMatrix> {
        let mut out: Vec<&mut RealMatrix> =
            vec![&mut self.token_embedding, &mut self.pos_embedding];
        for layer in &mut self.layers {
            out.push(&mut layer.attn_norm_gain);
            out.push(&mut layer.attn_norm_bias);
            out.extend(layer.wq.iter_mut());
            out.extend(layer.wk.iter_mut());
            out.extend(layer.wv.iter_mut());
            out.extend(layer.wo.iter_mut());
            out.push(&mut layer.mlp_norm_gain);
            out.push(&mut layer.mlp_norm_bias);
            out.push(&mut layer.ff1);
            out.push(&mut layer.ff1_bias);
            out.push(&mut layer.ff2);
            out.push(&mut layer.ff2_bias);
        }
        out.push(&mut self.output_proj);
        out
    }

    /// Total scalar parameter count.
    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// True when every parameter is finite.
    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Sets every parameter to zero (gradient reset).
    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill_zero();
        }
    }
}
