//! Architecture hyper-parameters of the toy transformer.

use crate::error::{Error, Result};

/// Shape of a [`super::TransformerModel`](crate::model::TransformerModel).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Number of decoder layers.
    pub num_layers: usize,
    /// Attention heads per layer.
    pub num_heads: usize,
    /// Dimension of each head's query/key/value space.
    pub head_dim: usize,
    /// Token vocabulary size.
    pub vocab_size: usize,
    /// Maximum sequence length (learned positional table size).
    pub max_context: usize,
}

impl ModelConfig {
    /// Residual-stream width: `head_dim * num_heads`.
    #[inline]
    pub fn model_dim(&self) -> usize {
        self.head_dim * self.num_heads
    }

    /// Total number of (layer, head) cells.
    #[inline]
    pub fn cells(&self) -> usize {
        self.num_layers * self.num_heads
    }

    /// Flat index of cell `(layer, head)`.
    #[inline]
    pub fn cell_index(&self, layer: usize, head: usize) -> usize {
        layer * self.num_heads + head
    }

    /// Checks the structural invariants (all counts at least 1).
    pub fn validate(&self) -> Result<()> {
        if self.num_layers < 1
            || self.num_heads < 1
            || self.head_dim < 1
            || self.vocab_size < 1
            || self.max_context < 1
        {
            return Err(Error::InvalidArgument(format!(
                "model config counts must all be >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Desk-scale default: 4 layers, 4 heads, head dim 16 (model dim 64),
/// vocabulary 64, context 256. Large enough for head-selective structure to
/// emerge, small enough to train on one CPU core.
impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_layers: 4,
            num_heads: 4,
            head_dim: 16,
            vocab_size: 64,
            max_context: 256,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape_is_consistent() {
        let c = ModelConfig::default();
        assert_eq!(c.model_dim(), 64);
        assert_eq!(c.cells(), 16);
        assert_eq!(c.cell_index(2, 3), 11);
        c.validate().unwrap();
    }

    #[test]
    fn zero_counts_are_rejected() {
        let mut c = ModelConfig::default();
        c.num_heads = 0;
        assert!(c.validate().is_err());
    }
}
