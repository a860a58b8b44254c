//! Toy autoregressive token transformer.
//!
//! A decoder-only stack of pre-norm residual blocks with per-head
//! activation taps: every step records each head's output `z_{l,h}` before
//! the output projection, and an optional hook can add a per-head δ at
//! exactly that point. Two forward implementations exist — a cached
//! single-step path for generation ([`forward_step`]) and a whole-sequence
//! path for training and extraction ([`forward_sequence`]) — verified to
//! agree within 1e-9.

mod checkpoint;
mod config;
mod forward;
mod net;
pub(crate) mod seq;
mod train;

pub use checkpoint::{load_checkpoint, model_hash, save_checkpoint};
pub use config::ModelConfig;
pub use forward::{
    attention_head, forward_step, layer_forward, sample_token, ActivationRecord, Hook, KvCache,
    LayerStep, StepOutput, LN_EPS,
};
pub use net::{LayerWeights, TransformerModel};
pub use seq::{forward_sequence, sequence_loss, SeqOutputs};
pub use train::{loss_and_grads, train_model, TrainHyper, TrainLog};
