//! Multi-view self-distillation signals.
//!
//! This crate turns a student next-token distribution plus a family of
//! view-conditioned teacher distributions into a gated, reconstructed
//! distillation target, and provides the reverse-KL losses (with exact
//! logit gradients) used to train against that target.
//!
//! Everything is pure: no I/O, no shared state, no randomness. All math is
//! generic over the scalar type via [`Scalar`]; `f64` is what the training
//! stack uses, `f32` is available through the same API.

pub mod dist;
pub mod loss;
pub mod signal;

mod error;
mod float;

pub use error::SignalError;
pub use float::Scalar;

pub use dist::{LogDist, ViewFamily};
pub use loss::{LogitsRow, LossGrad};
pub use signal::{GateVectors, PooledSignal};

/// Every log-probability is clamped at this floor before pooling, so that
/// zero-mass tokens never produce `-inf` inside the geometric mean.
pub const LOG_FLOOR: f64 = -45.0;

/// Default gate stabilizer: small enough not to distort gates on toy
/// vocabularies, large enough to avoid 0/0.
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Normalization tolerance on `log-sum-exp(logp)` for a valid [`LogDist`].
pub const NORM_TOL: f64 = 1e-9;

/// Concrete single-precision aliases.
pub type LogDist32 = LogDist<f32>;
pub type ViewFamily32 = ViewFamily<f32>;
pub type PooledSignal32 = PooledSignal<f32>;
pub type LogitsRow32 = LogitsRow<f32>;
pub type LossGrad32 = LossGrad<f32>;

/// Concrete double-precision aliases (what the trainer uses).
pub type LogDist64 = LogDist<f64>;
pub type ViewFamily64 = ViewFamily<f64>;
pub type PooledSignal64 = PooledSignal<f64>;
pub type LogitsRow64 = LogitsRow<f64>;
pub type LossGrad64 = LossGrad<f64>;
