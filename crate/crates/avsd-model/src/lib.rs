//! A deliberately small autoregressive model used as both student and
//! privileged teacher: the same parameters score a prefix either bare or
//! with extra context tokens prepended.
//!
//! Architecture: token embeddings feed a one-hidden-layer MLP over a fixed
//! window of the most recent tokens, plus a mean-of-prefix summary path so
//! that context far outside the window (in particular, privileged tokens)
//! still reaches every position. Backprop is written out by hand and is
//! exact; an accompanying Adam optimizer and a flat binary checkpoint format
//! round out what training needs.

mod adam;
mod checkpoint;
mod model;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{
    load_adam_state, load_params, read_meta, save_adam_state, save_params, write_meta,
    CheckpointError, CheckpointMeta,
};
pub use model::{
    backward, backward_into, forward, init_params, sample_rollout, teacher_eval, ModelError,
    Rollout, RolloutStep, ToyLMConfig, ToyLMGrads, ToyLMParams, BOS,
};

/// Token index into the model vocabulary.
pub type Token = usize;
