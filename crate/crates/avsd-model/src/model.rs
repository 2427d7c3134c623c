//! Forward pass, exact manual backward pass, teacher evaluation, and
//! on-policy rollout sampling.

use avsd_core::{LogDist, LogitsRow, SignalError};
use ndarray::{Array1, Array2, Zip};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::Token;

/// Beginning-of-sequence token; also what short windows are padded with.
pub const BOS: Token = 0;

/// Below this, sampling switches to argmax.
const ARGMAX_TEMPERATURE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("token {token} out of vocabulary of size {vocab}")]
    TokenOutOfRange { token: Token, vocab: usize },

    #[error("prefix must be non-empty (it always starts at BOS)")]
    EmptyPrefix,

    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),

    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Shape and vocabulary configuration of the model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyLMConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Window length `W`: how many trailing tokens feed the window path.
    pub window: usize,
    /// Token that ends a generation.
    pub terminator: Token,
}

impl ToyLMConfig {
    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        let (v, d, h, w) = (self.vocab_size, self.embed_dim, self.hidden_dim, self.window);
        v * d + (w * d) * h + h + d * h + h * v + v
    }
}

/// All trainable parameters. Blocks are always serialized and iterated in
/// declaration order: embed, w_window, b_window, w_summary, w_out, b_out.
#[derive(Debug, Clone)]
pub struct ToyLMParams {
    pub cfg: ToyLMConfig,
    /// `|V| x d` token embeddings.
    pub embed: Array2<f64>,
    /// `(W*d) x H` window features to hidden.
    pub w_window: Array2<f64>,
    /// Hidden bias.
    pub b_window: Array1<f64>,
    /// `d x H` mean-of-prefix summary path, added pre-activation.
    pub w_summary: Array2<f64>,
    /// `H x |V|` hidden to logits.
    pub w_out: Array2<f64>,
    /// Logit bias.
    pub b_out: Array1<f64>,
}

/// Parameter-shaped gradient accumulator.
#[derive(Debug, Clone)]
pub struct ToyLMGrads {
    pub embed: Array2<f64>,
    pub w_window: Array2<f64>,
    pub b_window: Array1<f64>,
    pub w_summary: Array2<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
}

impl ToyLMParams {
    pub fn zeros(cfg: ToyLMConfig) -> Self {
        let (v, d, h, w) = (cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim, cfg.window);
        Self {
            embed: Array2::zeros((v, d)),
            w_window: Array2::zeros((w * d, h)),
            b_window: Array1::zeros(h),
            w_summary: Array2::zeros((d, h)),
            w_out: Array2::zeros((h, v)),
            b_out: Array1::zeros(v),
            cfg,
        }
    }

    /// Parameter blocks as flat mutable slices, in declaration order.
    pub fn block_slices_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.embed.as_slice_mut().expect("standard layout"),
            self.w_window.as_slice_mut().expect("standard layout"),
            self.b_window.as_slice_mut().expect("standard layout"),
            self.w_summary.as_slice_mut().expect("standard layout"),
            self.w_out.as_slice_mut().expect("standard layout"),
            self.b_out.as_slice_mut().expect("standard layout"),
        ]
    }

    /// Parameter blocks as flat slices, in declaration order.
    pub fn block_slices(&self) -> [&[f64]; 6] {
        [
            self.embed.as_slice().expect("standard layout"),
            self.w_window.as_slice().expect("standard layout"),
            self.b_window.as_slice().expect("standard layout"),
            self.w_summary.as_slice().expect("standard layout"),
            self.w_out.as_slice().expect("standard layout"),
            self.b_out.as_slice().expect("standard layout"),
        ]
    }
}

impl ToyLMGrads {
    pub fn zeros(cfg: &ToyLMConfig) -> Self {
        let (v, d, h, w) = (cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim, cfg.window);
        Self {
            embed: Array2::zeros((v, d)),
            w_window: Array2::zeros((w * d, h)),
            b_window: Array1::zeros(h),
            w_summary: Array2::zeros((d, h)),
            w_out: Array2::zeros((h, v)),
            b_out: Array1::zeros(v),
        }
    }

    pub fn block_slices(&self) -> [&[f64]; 6] {
        [
            self.embed.as_slice().expect("standard layout"),
            self.w_window.as_slice().expect("standard layout"),
            self.b_window.as_slice().expect("standard layout"),
            self.w_summary.as_slice().expect("standard layout"),
            self.w_out.as_slice().expect("standard layout"),
            self.b_out.as_slice().expect("standard layout"),
        ]
    }

    /// Accumulate `scale * other` into self.
    pub fn scaled_add(&mut self, scale: f64, other: &ToyLMGrads) {
        self.embed.scaled_add(scale, &other.embed);
        self.w_window.scaled_add(scale, &other.w_window);
        self.b_window.scaled_add(scale, &other.b_window);
        self.w_summary.scaled_add(scale, &other.w_summary);
        self.w_out.scaled_add(scale, &other.w_out);
        self.b_out.scaled_add(scale, &other.b_out);
    }

    pub fn max_abs(&self) -> f64 {
        self.block_slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0f64, |acc, &x| acc.max(x.abs()))
    }
}

/// Seeded uniform(-0.08, 0.08) initialization of every block.
pub fn init_params(cfg: ToyLMConfig, seed: u64) -> ToyLMParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ToyLMParams::zeros(cfg);
    for block in params.block_slices_mut() {
        for x in block.iter_mut() {
            *x = rng.gen_range(-0.08..0.08);
        }
    }
    params
}

fn check_tokens(tokens: &[Token], vocab: usize) -> Result<(), ModelError> {
    for &t in tokens {
        if t >= vocab {
            return Err(ModelError::TokenOutOfRange { token: t, vocab });
        }
    }
    Ok(())
}

/// Forward intermediates shared by the backward pass.
struct ForwardTrace {
    window_feat: Array1<f64>,
    mean_feat: Array1<f64>,
    hidden: Array1<f64>,
    logits: Array1<f64>,
}

fn forward_trace(params: &ToyLMParams, prefix: &[Token]) -> Result<ForwardTrace, ModelError> {
    let cfg = &params.cfg;
    if prefix.is_empty() {
        return Err(ModelError::EmptyPrefix);
    }
    check_tokens(prefix, cfg.vocab_size)?;

    let (d, w) = (cfg.embed_dim, cfg.window);
    let mut window_feat = Array1::zeros(w * d);
    for slot in 0..w {
        // Oldest token first; short prefixes are padded at the old end with BOS.
        let tok = if prefix.len() >= w - slot {
            prefix[prefix.len() - (w - slot)]
        } else {
            BOS
        };
        window_feat
            .slice_mut(ndarray::s![slot * d..(slot + 1) * d])
            .assign(&params.embed.row(tok));
    }

    let mut mean_feat = Array1::zeros(d);
    for &tok in prefix {
        mean_feat += &params.embed.row(tok);
    }
    mean_feat /= prefix.len() as f64;

    let pre = window_feat.dot(&params.w_window) + mean_feat.dot(&params.w_summary)
        + &params.b_window;
    let hidden = pre.mapv(f64::tanh);
    let logits = hidden.dot(&params.w_out) + &params.b_out;

    Ok(ForwardTrace {
        window_feat,
        mean_feat,
        hidden,
        logits,
    })
}

/// Next-token logits at the end of `prefix`.
pub fn forward(params: &ToyLMParams, prefix: &[Token]) -> Result<LogitsRow<f64>, ModelError> {
    let trace = forward_trace(params, prefix)?;
    Ok(LogitsRow::new(trace.logits.to_vec())?)
}

/// Accumulate the exact gradient of `logits(params, prefix) . dz` into `grads`.
pub fn backward_into(
    params: &ToyLMParams,
    prefix: &[Token],
    dz: &[f64],
    grads: &mut ToyLMGrads,
) -> Result<(), ModelError> {
    let cfg = &params.cfg;
    if dz.len() != cfg.vocab_size {
        return Err(ModelError::Signal(SignalError::DimensionMismatch {
            what: "logit gradient",
            expected: cfg.vocab_size,
            got: dz.len(),
        }));
    }
    let trace = forward_trace(params, prefix)?;
    let dz = ndarray::ArrayView1::from(dz);

    grads.b_out.scaled_add(1.0, &dz);
    Zip::from(grads.w_out.rows_mut())
        .and(&trace.hidden)
        .for_each(|mut row, &hj| row.scaled_add(hj, &dz));

    let dh = params.w_out.dot(&dz);
    // tanh' = 1 - h^2
    let dpre = Zip::from(&dh)
        .and(&trace.hidden)
        .map_collect(|&g, &h| g * (1.0 - h * h));

    grads.b_window.scaled_add(1.0, &dpre);
    Zip::from(grads.w_window.rows_mut())
        .and(&trace.window_feat)
        .for_each(|mut row, &xi| row.scaled_add(xi, &dpre));
    Zip::from(grads.w_summary.rows_mut())
        .and(&trace.mean_feat)
        .for_each(|mut row, &xi| row.scaled_add(xi, &dpre));

    let dwin = params.w_window.dot(&dpre);
    let dmean = params.w_summary.dot(&dpre);

    let (d, w) = (cfg.embed_dim, cfg.window);
    for slot in 0..w {
        let tok = if prefix.len() >= w - slot {
            prefix[prefix.len() - (w - slot)]
        } else {
            BOS
        };
        grads
            .embed
            .row_mut(tok)
            .scaled_add(1.0, &dwin.slice(ndarray::s![slot * d..(slot + 1) * d]));
    }
    let inv_len = 1.0 / prefix.len() as f64;
    for &tok in prefix {
        grads.embed.row_mut(tok).scaled_add(inv_len, &dmean);
    }
    Ok(())
}

/// Fresh gradients of `logits . dz` (convenience over [`backward_into`]).
pub fn backward(
    params: &ToyLMParams,
    prefix: &[Token],
    dz: &[f64],
) -> Result<ToyLMGrads, ModelError> {
    let mut grads = ToyLMGrads::zeros(&params.cfg);
    backward_into(params, prefix, dz, &mut grads)?;
    Ok(grads)
}

/// The same model scored with privileged context tokens prepended to the
/// student prefix. The result is a plain distribution: it never enters a
/// gradient path.
pub fn teacher_eval(
    params: &ToyLMParams,
    view_context: &[Token],
    prefix: &[Token],
) -> Result<LogDist<f64>, ModelError> {
    let mut seq = Vec::with_capacity(view_context.len() + prefix.len());
    seq.extend_from_slice(view_context);
    seq.extend_from_slice(prefix);
    let z = forward(params, &seq)?;
    Ok(LogDist::from_logits(&z.z)?)
}

/// One sampled position of a rollout.
#[derive(Debug, Clone)]
pub struct RolloutStep {
    pub logits: LogitsRow<f64>,
    pub token: Token,
    /// Filled in by signal analysis; `None` straight out of sampling.
    pub signal: Option<avsd_core::PooledSignal<f64>>,
}

/// An on-policy generation: student-visible prompt plus sampled tokens, with
/// the logits that produced each token.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub prompt: Vec<Token>,
    pub generated: Vec<Token>,
    pub per_step: Vec<RolloutStep>,
}

impl Rollout {
    /// Student prefix for step `t` (tokens before the t-th generated one).
    pub fn prefix(&self, t: usize) -> Vec<Token> {
        let mut p = self.prompt.clone();
        p.extend_from_slice(&self.generated[..t]);
        p
    }

    pub fn len(&self) -> usize {
        self.generated.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generated.is_empty()
    }

    /// Whether generation stopped at the terminator (vs. the length cap).
    pub fn terminated(&self, terminator: Token) -> bool {
        self.generated.last() == Some(&terminator)
    }
}

/// Sample autoregressively from `softmax(z / temperature)` until the
/// terminator token or `max_len`. Temperatures below `1e-6` mean argmax.
pub fn sample_rollout<R: Rng>(
    params: &ToyLMParams,
    prompt: &[Token],
    temperature: f64,
    max_len: usize,
    rng: &mut R,
) -> Result<Rollout, ModelError> {
    if temperature <= 0.0 {
        return Err(ModelError::BadTemperature(temperature));
    }
    let mut prefix = prompt.to_vec();
    let mut generated = Vec::new();
    let mut per_step = Vec::new();
    while generated.len() < max_len {
        let logits = forward(params, &prefix)?;
        let token = if temperature < ARGMAX_TEMPERATURE {
            argmax(&logits.z)
        } else {
            sample_scaled(&logits.z, temperature, rng)
        };
        prefix.push(token);
        generated.push(token);
        per_step.push(RolloutStep {
            logits,
            token,
            signal: None,
        });
        if token == params.cfg.terminator {
            break;
        }
    }
    Ok(Rollout {
        prompt: prompt.to_vec(),
        generated,
        per_step,
    })
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in z.iter().enumerate() {
        if x > z[best] {
            best = i;
        }
    }
    best
}

fn sample_scaled<R: Rng>(z: &[f64], temperature: f64, rng: &mut R) -> usize {
    let hi = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = z.iter().map(|&x| ((x - hi) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}
