//! Reverse-KL distillation losses and their exact logit gradients.
//!
//! The training objective at one prefix position is
//! `D_KL(softmax(z) || q)` with the target `q` held constant. Its gradient
//! with respect to the logits has the closed form
//! `dz(v) = p(v)·(log p(v) - log q(v) - K)` where `K` is the loss itself;
//! equivalently, gradient descent is a policy-gradient update with advantage
//! `A(v) = log q(v) - log p(v)` (the loss value acts as the baseline).

use crate::dist::{LogDist, ViewFamily};
use crate::error::SignalError;
use crate::float::Scalar;

/// Unnormalized student logits for one prefix position.
#[derive(Debug, Clone)]
pub struct LogitsRow<F> {
    pub z: Vec<F>,
}

impl<F: Scalar> LogitsRow<F> {
    pub fn new(z: Vec<F>) -> Result<Self, SignalError> {
        if z.is_empty() || z.iter().any(|x| !x.is_finite()) {
            return Err(SignalError::InvalidInput(
                "logits must be a non-empty finite vector".to_string(),
            ));
        }
        Ok(Self { z })
    }

    /// The distribution these logits induce.
    pub fn dist(&self) -> LogDist<F> {
        LogDist::from_logits(&self.z).expect("finite by construction")
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

/// A loss value together with its gradient in logit space.
///
/// `dz` sums to zero: softmax gradients live in the sum-zero subspace.
#[derive(Debug, Clone)]
pub struct LossGrad<F> {
    pub loss: F,
    pub dz: Vec<F>,
}

/// `D_KL(p || q) = Σ_v p(v)(log p(v) - log q(v))`, clamped at zero against
/// rounding when `p ≈ q`.
pub fn reverse_kl<F: Scalar>(p: &LogDist<F>, q: &LogDist<F>) -> Result<F, SignalError> {
    check_same_vocab(p.len(), q.len())?;
    let kl: F = p
        .logp()
        .iter()
        .zip(q.logp())
        .map(|(&lp, &lq)| lp.exp() * (lp - lq))
        .sum();
    Ok(kl.max(F::zero()))
}

/// Reverse KL of `softmax(z)` against a constant target, with its exact
/// gradient in logit space.
pub fn rkl_grad_logits<F: Scalar>(
    z: &LogitsRow<F>,
    q: &LogDist<F>,
) -> Result<LossGrad<F>, SignalError> {
    check_same_vocab(z.len(), q.len())?;
    let p = z.dist();
    let loss = reverse_kl(&p, q)?;
    let dz = p
        .logp()
        .iter()
        .zip(q.logp())
        .map(|(&lp, &lq)| lp.exp() * (lp - lq - loss))
        .collect();
    Ok(LossGrad { loss, dz })
}

/// Sampled-token advantage `log target(token) - log p(token)`.
pub fn sampled_advantage<F: Scalar>(
    p: &LogDist<F>,
    target: &LogDist<F>,
    token: usize,
) -> Result<F, SignalError> {
    check_same_vocab(p.len(), target.len())?;
    if token >= p.len() {
        return Err(SignalError::InvalidInput(format!(
            "token {token} out of vocabulary of size {}",
            p.len()
        )));
    }
    Ok(target.log_prob(token) - p.log_prob(token))
}

/// Cross-check that the exact policy-gradient expectation
/// `E_{v~p}[A(v) ∂log p(v)/∂z]` equals the negated closed-form gradient.
///
/// The expectation is summed over the full vocabulary, so the identity holds
/// to rounding; returns the max absolute discrepancy.
pub fn policy_gradient_identity_check<F: Scalar>(
    z: &LogitsRow<F>,
    q: &LogDist<F>,
) -> Result<F, SignalError> {
    check_same_vocab(z.len(), q.len())?;
    let p = z.dist();
    let probs = p.probs();
    let vocab = probs.len();
    // ∂log p(v)/∂z_u = δ_uv - p(u); accumulate the expectation exactly.
    let mut expectation = vec![F::zero(); vocab];
    for v in 0..vocab {
        let adv = q.log_prob(v) - p.log_prob(v);
        let pa = probs[v] * adv;
        for (u, slot) in expectation.iter_mut().enumerate() {
            let dlogp = if u == v { F::one() - probs[u] } else { -probs[u] };
            *slot += pa * dlogp;
        }
    }
    let grad = rkl_grad_logits(z, q)?;
    let mut max_abs = F::zero();
    for (e, g) in expectation.iter().zip(&grad.dz) {
        max_abs = max_abs.max((*e + *g).abs());
    }
    Ok(max_abs)
}

/// Sum of per-position reverse-KL losses over a rollout, with per-position
/// gradients. Targets are constants: nothing flows back through them.
///
/// With `normalize_by_length` the total and every gradient are scaled by
/// `1/T`, matching the single-view objective; the multi-view objective sums.
pub fn sequence_loss<F: Scalar>(
    records: &[(LogitsRow<F>, LogDist<F>)],
    normalize_by_length: bool,
) -> Result<(F, Vec<LossGrad<F>>), SignalError> {
    if records.is_empty() {
        return Err(SignalError::InvalidInput(
            "sequence loss needs at least one position".to_string(),
        ));
    }
    let scale = if normalize_by_length {
        F::one() / F::from(records.len()).unwrap()
    } else {
        F::one()
    };
    let mut total = F::zero();
    let mut grads = Vec::with_capacity(records.len());
    for (z, q) in records {
        let mut g = rkl_grad_logits(z, q)?;
        g.loss = g.loss * scale;
        for d in &mut g.dz {
            *d = *d * scale;
        }
        total += g.loss;
        grads.push(g);
    }
    Ok((total, grads))
}

/// `Σ_m w_m D_KL(q || q^(m))` — the objective the geometric consensus minimizes.
pub fn avg_reverse_kl<F: Scalar>(q: &LogDist<F>, fam: &ViewFamily<F>) -> Result<F, SignalError> {
    let mut acc = F::zero();
    for (view, &w) in fam.views().iter().zip(fam.weights()) {
        acc += w * reverse_kl(q, view)?;
    }
    Ok(acc)
}

/// `Σ_m w_m D_KL(q^(m) || q)` — the objective the arithmetic marginal minimizes.
pub fn avg_forward_kl<F: Scalar>(fam: &ViewFamily<F>, q: &LogDist<F>) -> Result<F, SignalError> {
    let mut acc = F::zero();
    for (view, &w) in fam.views().iter().zip(fam.weights()) {
        acc += w * reverse_kl(view, q)?;
    }
    Ok(acc)
}

fn check_same_vocab(expected: usize, got: usize) -> Result<(), SignalError> {
    if expected != got {
        return Err(SignalError::DimensionMismatch {
            what: "vocabulary",
            expected,
            got,
        });
    }
    Ok(())
}
