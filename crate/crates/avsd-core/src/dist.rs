//! Normalized next-token distributions in log space, and families of them.

use crate::error::SignalError;
use crate::float::{c, log_sum_exp, Scalar};
use crate::{LOG_FLOOR, NORM_TOL};

/// A normalized distribution over a vocabulary, stored as natural-log
/// probabilities. The universal currency of the pipeline.
///
/// Invariants held by construction:
/// * `log_sum_exp(logp) == 0` within [`NORM_TOL`],
/// * every entry is finite and at (or within rounding of) [`LOG_FLOOR`] or above.
#[derive(Debug, Clone, PartialEq)]
pub struct LogDist<F> {
    logp: Vec<F>,
}

impl<F: Scalar> LogDist<F> {
    /// Normalize raw logits into a log-distribution (log-softmax + floor).
    pub fn from_logits(z: &[F]) -> Result<Self, SignalError> {
        check_nonempty_finite(z, "logits")?;
        let lse = log_sum_exp(z);
        let logp = z.iter().map(|&x| (x - lse).max(c(LOG_FLOOR))).collect();
        Ok(Self { logp })
    }

    /// Build from probability space. Probabilities must be non-negative and
    /// sum to 1 within `1e-6`; exact zeros land on the floor.
    pub fn from_probs(p: &[F]) -> Result<Self, SignalError> {
        check_nonempty_finite(p, "probabilities")?;
        if p.iter().any(|&x| x < F::zero()) {
            return Err(SignalError::InvalidInput(
                "negative probability".to_string(),
            ));
        }
        let total: F = p.iter().cloned().sum();
        if (total - F::one()).abs() > c(1e-6) {
            return Err(SignalError::InvalidInput(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        let logp = p
            .iter()
            .map(|&x| {
                if x == F::zero() {
                    c(LOG_FLOOR)
                } else {
                    (x / total).ln().max(c(LOG_FLOOR))
                }
            })
            .collect();
        Ok(Self { logp })
    }

    /// Ingest externally produced log-probabilities. Input already
    /// normalized within [`NORM_TOL`] is taken bit-for-bit; anything else is
    /// renormalized. The floor applies either way.
    pub fn from_logp(logp: Vec<F>) -> Result<Self, SignalError> {
        check_nonempty_finite(&logp, "log-probabilities")?;
        let lse = log_sum_exp(&logp);
        let shift = if lse.abs() > c(NORM_TOL) { lse } else { F::zero() };
        let logp = logp
            .into_iter()
            .map(|x| (x - shift).max(c(LOG_FLOOR)))
            .collect();
        Ok(Self { logp })
    }

    /// Wrap log-probabilities that are already normalized by construction.
    /// Callers inside this crate guarantee the invariant; debug builds check it.
    pub(crate) fn from_normalized_unchecked(logp: Vec<F>) -> Self {
        debug_assert!(
            log_sum_exp(&logp).abs() <= c(1e-6),
            "internal distribution not normalized: lse = {}",
            log_sum_exp(&logp)
        );
        Self { logp }
    }

    /// Signed normalization defect `log-sum-exp(logp)` of raw input,
    /// before any renormalization. Zero for a perfectly normalized vector.
    pub fn norm_defect(logp: &[F]) -> F {
        log_sum_exp(logp)
    }

    pub fn logp(&self) -> &[F] {
        &self.logp
    }

    pub fn log_prob(&self, token: usize) -> F {
        self.logp[token]
    }

    pub fn prob(&self, token: usize) -> F {
        self.logp[token].exp()
    }

    /// Materialize the probability vector.
    pub fn probs(&self) -> Vec<F> {
        self.logp.iter().map(|&x| x.exp()).collect()
    }

    pub fn len(&self) -> usize {
        self.logp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logp.is_empty()
    }

    /// Check the normalization invariant explicitly (used by tests and ingest).
    pub fn is_normalized(&self, tol: F) -> bool {
        log_sum_exp(&self.logp).abs() <= tol
    }
}

fn check_nonempty_finite<F: Scalar>(xs: &[F], what: &str) -> Result<(), SignalError> {
    if xs.is_empty() {
        return Err(SignalError::InvalidInput(format!("empty {what} vector")));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(SignalError::InvalidInput(format!(
            "non-finite entry in {what}"
        )));
    }
    Ok(())
}

/// An ordered family of `M >= 1` view-conditioned teacher distributions over
/// one shared vocabulary, with pooling weights (uniform unless given).
#[derive(Debug, Clone)]
pub struct ViewFamily<F> {
    views: Vec<LogDist<F>>,
    weights: Vec<F>,
}

impl<F: Scalar> ViewFamily<F> {
    /// Family with uniform weights `1/M`.
    pub fn uniform(views: Vec<LogDist<F>>) -> Result<Self, SignalError> {
        let m = views.len();
        if m == 0 {
            return Err(SignalError::InvalidInput("empty view family".to_string()));
        }
        let w = F::one() / c::<F>(m as f64);
        Self::with_weights(views, vec![w; m])
    }

    /// Family with explicit non-negative weights summing to 1 within [`NORM_TOL`].
    pub fn with_weights(views: Vec<LogDist<F>>, weights: Vec<F>) -> Result<Self, SignalError> {
        if views.is_empty() {
            return Err(SignalError::InvalidInput("empty view family".to_string()));
        }
        if weights.len() != views.len() {
            return Err(SignalError::DimensionMismatch {
                what: "view weights",
                expected: views.len(),
                got: weights.len(),
            });
        }
        let vocab = views[0].len();
        for (i, v) in views.iter().enumerate() {
            if v.len() != vocab {
                return Err(SignalError::DimensionMismatch {
                    what: "view vocabulary",
                    expected: vocab,
                    got: views[i].len(),
                });
            }
        }
        if weights.iter().any(|&w| !w.is_finite() || w < F::zero()) {
            return Err(SignalError::InvalidInput(
                "view weights must be finite and non-negative".to_string(),
            ));
        }
        let total: F = weights.iter().cloned().sum();
        if (total - F::one()).abs() > c(NORM_TOL) {
            return Err(SignalError::InvalidInput(format!(
                "view weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { views, weights })
    }

    pub fn views(&self) -> &[LogDist<F>] {
        &self.views
    }

    pub fn weights(&self) -> &[F] {
        &self.weights
    }

    /// Number of views `M`.
    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.views[0].len()
    }
}
