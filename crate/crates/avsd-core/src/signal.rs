//! Pooled targets, cross-view residual, gate, and target reconstruction.
//!
//! The pipeline for one prefix position:
//!
//! 1. per-view advantages `Δ^(m)(v) = log q^(m)(v) - log p(v)`
//! 2. geometric consensus `log q̃^G = Σ_m w_m log q^(m)` (intersection support)
//!    and arithmetic marginal `q^A = Σ_m w_m q^(m)` (union support)
//! 3. cross-view residual `J = log q^A - log q̃^G >= 0`
//! 4. gate `λ = C·R` admitting the residual only when views agree on
//!    direction (C) and the residual stays proportionate (R)
//! 5. reconstructed advantage `Â = A^G + λJ` and target
//!    `q* ∝ q̃^G · exp(λJ)`
//!
//! All functions are pure; [`pool`] composes them into one record.

use crate::dist::{LogDist, ViewFamily};
use crate::error::SignalError;
use crate::float::{c, log_sum_exp, Scalar};

/// Residual entries below this are corrupted inputs, not rounding noise.
const RESIDUAL_ERROR_TOL: f64 = 1e-6;

/// The three gate vectors: alignment `C`, proportionality `R`, and their
/// product `λ`, each elementwise in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct GateVectors<F> {
    pub c: Vec<F>,
    pub r: Vec<F>,
    pub lambda: Vec<F>,
}

/// Every per-token quantity the pipeline derives at one prefix position.
#[derive(Debug, Clone)]
pub struct PooledSignal<F> {
    /// Per-view advantages, `M x |V|`.
    pub delta: Vec<Vec<F>>,
    /// Consensus advantage `A^G` (weighted mean of the rows of `delta`).
    pub a_geo: Vec<F>,
    /// Arithmetic advantage `A^A = log q^A - log p`.
    pub a_arith: Vec<F>,
    /// Unnormalized geometric score `log q̃^G`.
    pub log_qg_unnorm: Vec<F>,
    /// Arithmetic marginal target.
    pub qa: LogDist<F>,
    /// Cross-view residual `J >= 0`.
    pub residual: Vec<F>,
    /// Gate alignment component `C`.
    pub c_gate: Vec<F>,
    /// Gate proportionality component `R`.
    pub r_gate: Vec<F>,
    /// Gate `λ = C·R`.
    pub lambda: Vec<F>,
    /// Reconstructed advantage `Â = A^G + λJ`.
    pub a_hat: Vec<F>,
    /// Reconstructed target `q* ∝ q̃^G exp(λJ)`.
    pub qstar: LogDist<F>,
}

/// `Δ^(m)(v) = log q^(m)(v) - log p(v)` for every view and token.
pub fn per_view_advantages<F: Scalar>(
    p: &LogDist<F>,
    fam: &ViewFamily<F>,
) -> Result<Vec<Vec<F>>, SignalError> {
    if p.len() != fam.vocab_size() {
        return Err(SignalError::DimensionMismatch {
            what: "student vs view vocabulary",
            expected: fam.vocab_size(),
            got: p.len(),
        });
    }
    Ok(fam
        .views()
        .iter()
        .map(|q| {
            q.logp()
                .iter()
                .zip(p.logp())
                .map(|(&lq, &lp)| lq - lp)
                .collect()
        })
        .collect())
}

/// Weighted log-space mean of the views: the unnormalized geometric score
/// `log q̃^G` and its normalized distribution `q^G`.
pub fn geometric_consensus<F: Scalar>(fam: &ViewFamily<F>) -> (Vec<F>, LogDist<F>) {
    let vocab = fam.vocab_size();
    let mut log_unnorm = vec![F::zero(); vocab];
    for (q, &w) in fam.views().iter().zip(fam.weights()) {
        for (acc, &lq) in log_unnorm.iter_mut().zip(q.logp()) {
            *acc += w * lq;
        }
    }
    let lse = log_sum_exp(&log_unnorm);
    let normalized = log_unnorm.iter().map(|&x| x - lse).collect();
    (log_unnorm, LogDist::from_normalized_unchecked(normalized))
}

/// Weighted probability-space mean of the views `q^A`, returned in log space.
pub fn arithmetic_marginal<F: Scalar>(fam: &ViewFamily<F>) -> LogDist<F> {
    let vocab = fam.vocab_size();
    // Per token: log( Σ_m w_m exp(logq_m) ), max-shifted across views.
    let mut logp = Vec::with_capacity(vocab);
    for v in 0..vocab {
        let hi = fam
            .views()
            .iter()
            .map(|q| q.log_prob(v))
            .fold(F::neg_infinity(), F::max);
        let sum: F = fam
            .views()
            .iter()
            .zip(fam.weights())
            .map(|(q, &w)| w * (q.log_prob(v) - hi).exp())
            .sum();
        logp.push(hi + sum.ln());
    }
    // Weights sum to 1 and each view is normalized, so the defect here is
    // pure rounding; remove it to keep the invariant tight.
    let lse = log_sum_exp(&logp);
    LogDist::from_normalized_unchecked(logp.into_iter().map(|x| x - lse).collect())
}

/// Residual `J(v) = log q^A(v) - log q̃^G(v)`.
///
/// Non-negative up to rounding; small negative noise is clamped to zero,
/// anything below `-1e-6` means the inputs did not come from one family.
pub fn cross_view_residual<F: Scalar>(
    qa: &LogDist<F>,
    log_qg_unnorm: &[F],
) -> Result<Vec<F>, SignalError> {
    if qa.len() != log_qg_unnorm.len() {
        return Err(SignalError::DimensionMismatch {
            what: "arithmetic vs geometric vocabulary",
            expected: log_qg_unnorm.len(),
            got: qa.len(),
        });
    }
    let mut out = Vec::with_capacity(qa.len());
    for (v, (&la, &lg)) in qa.logp().iter().zip(log_qg_unnorm).enumerate() {
        let j = la - lg;
        if j < -c::<F>(RESIDUAL_ERROR_TOL) {
            return Err(SignalError::InternalConsistency(format!(
                "residual at token {v} is {j}, below the mean inequality bound"
            )));
        }
        out.push(j.max(F::zero()));
    }
    Ok(out)
}

/// Consensus advantage `A^G(v) = Σ_m w_m Δ^(m)(v)`.
pub fn consensus_advantage<F: Scalar>(delta: &[Vec<F>], weights: &[F]) -> Vec<F> {
    let vocab = delta.first().map_or(0, Vec::len);
    let mut out = vec![F::zero(); vocab];
    for (row, &w) in delta.iter().zip(weights) {
        for (acc, &d) in out.iter_mut().zip(row) {
            *acc += w * d;
        }
    }
    out
}

/// Two-component residual gate.
///
/// * `C(v) = |A^G(v)| / (Σ_m w_m |Δ^(m)(v)| + ε)` — cross-view sign alignment.
/// * `R(v) = |A^G(v)| / (|A^G(v)| + J(v) + ε)` — residual proportionality.
/// * `λ = C·R`, elementwise in `[0, 1]`.
pub fn gate<F: Scalar>(
    delta: &[Vec<F>],
    weights: &[F],
    a_geo: &[F],
    residual: &[F],
    epsilon: F,
) -> GateVectors<F> {
    let vocab = a_geo.len();
    let mut mean_abs = vec![F::zero(); vocab];
    for (row, &w) in delta.iter().zip(weights) {
        for (acc, &d) in mean_abs.iter_mut().zip(row) {
            *acc += w * d.abs();
        }
    }
    let mut cvec = Vec::with_capacity(vocab);
    let mut rvec = Vec::with_capacity(vocab);
    let mut lambda = Vec::with_capacity(vocab);
    for v in 0..vocab {
        let mag = a_geo[v].abs();
        let cv = mag / (mean_abs[v] + epsilon);
        let rv = mag / (mag + residual[v] + epsilon);
        cvec.push(cv);
        rvec.push(rv);
        lambda.push(cv * rv);
    }
    GateVectors {
        c: cvec,
        r: rvec,
        lambda,
    }
}

/// Reconstructed advantage `Â = A^G + λJ` and target `q* ∝ q̃^G exp(λJ)`.
pub fn reconstruct<F: Scalar>(
    a_geo: &[F],
    log_qg_unnorm: &[F],
    residual: &[F],
    lambda: &[F],
) -> (Vec<F>, LogDist<F>) {
    let a_hat: Vec<F> = a_geo
        .iter()
        .zip(lambda.iter().zip(residual))
        .map(|(&a, (&l, &j))| a + l * j)
        .collect();
    let scores: Vec<F> = log_qg_unnorm
        .iter()
        .zip(lambda.iter().zip(residual))
        .map(|(&lg, (&l, &j))| lg + l * j)
        .collect();
    let lse = log_sum_exp(&scores);
    let qstar = LogDist::from_normalized_unchecked(scores.into_iter().map(|x| x - lse).collect());
    (a_hat, qstar)
}

/// Run the whole pipeline for one prefix position.
pub fn pool<F: Scalar>(
    p: &LogDist<F>,
    fam: &ViewFamily<F>,
    epsilon: F,
) -> Result<PooledSignal<F>, SignalError> {
    if epsilon <= F::zero() {
        return Err(SignalError::InvalidInput(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let delta = per_view_advantages(p, fam)?;
    let (log_qg_unnorm, _qg) = geometric_consensus(fam);
    let qa = arithmetic_marginal(fam);
    let residual = cross_view_residual(&qa, &log_qg_unnorm)?;
    let a_geo = consensus_advantage(&delta, fam.weights());
    let a_arith: Vec<F> = qa
        .logp()
        .iter()
        .zip(p.logp())
        .map(|(&la, &lp)| la - lp)
        .collect();
    let gates = gate(&delta, fam.weights(), &a_geo, &residual, epsilon);
    let (a_hat, qstar) = reconstruct(&a_geo, &log_qg_unnorm, &residual, &gates.lambda);
    Ok(PooledSignal {
        delta,
        a_geo,
        a_arith,
        log_qg_unnorm,
        qa,
        residual,
        c_gate: gates.c,
        r_gate: gates.r,
        lambda: gates.lambda,
        a_hat,
        qstar,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(p: &[f64]) -> LogDist<f64> {
        LogDist::from_probs(p).unwrap()
    }

    /// The worked three-token family used across the crate. Expected values
    /// are frozen from an independent 60-digit script.
    fn worked_family() -> (LogDist<f64>, ViewFamily<f64>) {
        let p = dist(&[0.2, 0.5, 0.3]);
        let fam = ViewFamily::uniform(vec![dist(&[0.8, 0.1, 0.1]), dist(&[0.2, 0.7, 0.1])]).unwrap();
        (p, fam)
    }

    fn assert_close(got: &[f64], want: &[f64], tol: f64) {
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() <= tol, "got {g}, want {w}");
        }
    }

    #[test]
    fn advantages_identity_case() {
        let p = dist(&[0.2, 0.5, 0.3]);
        let fam = ViewFamily::uniform(vec![p.clone()]).unwrap();
        let d = per_view_advantages(&p, &fam).unwrap();
        assert_close(&d[0], &[0.0, 0.0, 0.0], 0.0);
    }

    #[test]
    fn advantages_worked_example() {
        let (p, fam) = worked_family();
        let d = per_view_advantages(&p, &fam).unwrap();
        assert_close(
            &d[0],
            &[1.3862943611198906, -1.6094379124341004, -1.0986122886681097],
            1e-12,
        );
        assert_close(
            &d[1],
            &[0.0, 0.33647223662121293, -1.0986122886681097],
            1e-12,
        );
    }

    #[test]
    fn advantages_reject_mismatch() {
        let p = dist(&[0.5, 0.5]);
        let fam = ViewFamily::uniform(vec![dist(&[0.2, 0.5, 0.3])]).unwrap();
        assert!(matches!(
            per_view_advantages(&p, &fam),
            Err(SignalError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn geometric_single_view_degenerates() {
        let q = dist(&[0.7, 0.2, 0.1]);
        let fam = ViewFamily::uniform(vec![q.clone()]).unwrap();
        let (_, qg) = geometric_consensus(&fam);
        assert_close(qg.logp(), q.logp(), 1e-12);
    }

    #[test]
    fn geometric_worked_example() {
        let (_, fam) = worked_family();
        let (log_un, qg) = geometric_consensus(&fam);
        let un: Vec<f64> = log_un.iter().map(|x| x.exp()).collect();
        assert_close(&un, &[0.4, 0.26457513110645906, 0.1], 1e-12);
        assert_close(
            &qg.probs(),
            &[0.52316637531897987, 0.34604203085127516, 0.13079159382974497],
            1e-12,
        );
    }

    #[test]
    fn geometric_identical_views() {
        let q = dist(&[0.3, 0.3, 0.4]);
        let fam = ViewFamily::uniform(vec![q.clone(), q.clone(), q.clone()]).unwrap();
        let (_, qg) = geometric_consensus(&fam);
        assert_close(&qg.probs(), &q.probs(), 1e-12);
    }

    #[test]
    fn arithmetic_worked_example() {
        let (_, fam) = worked_family();
        let qa = arithmetic_marginal(&fam);
        assert_close(&qa.probs(), &[0.5, 0.4, 0.1], 1e-12);
    }

    #[test]
    fn arithmetic_single_and_identical() {
        let q = dist(&[0.6, 0.25, 0.15]);
        let one = ViewFamily::uniform(vec![q.clone()]).unwrap();
        assert_close(&arithmetic_marginal(&one).probs(), &q.probs(), 1e-12);
        let two = ViewFamily::uniform(vec![q.clone(), q.clone()]).unwrap();
        assert_close(&arithmetic_marginal(&two).probs(), &q.probs(), 1e-12);
    }

    #[test]
    fn residual_zero_for_exact_consensus() {
        let q = dist(&[0.3, 0.3, 0.4]);
        let fam = ViewFamily::uniform(vec![q.clone(), q.clone()]).unwrap();
        let (log_un, _) = geometric_consensus(&fam);
        let j = cross_view_residual(&arithmetic_marginal(&fam), &log_un).unwrap();
        assert_close(&j, &[0.0, 0.0, 0.0], 1e-12);
    }

    #[test]
    fn residual_worked_example() {
        let (_, fam) = worked_family();
        let (log_un, _) = geometric_consensus(&fam);
        let j = cross_view_residual(&arithmetic_marginal(&fam), &log_un).unwrap();
        assert_close(
            &j,
            &[0.22314355131420976, 0.41333928659223397, 0.0],
            1e-12,
        );
    }

    #[test]
    fn residual_rejects_corrupted_inputs() {
        let qa = dist(&[0.5, 0.5]);
        // A "geometric" score above the marginal cannot come from one family.
        let bogus = vec![0.5f64, 0.5];
        assert!(matches!(
            cross_view_residual(&qa, &bogus),
            Err(SignalError::InternalConsistency(_))
        ));
    }

    #[test]
    fn consensus_advantage_worked_example() {
        let (p, fam) = worked_family();
        let d = per_view_advantages(&p, &fam).unwrap();
        let a = consensus_advantage(&d, fam.weights());
        assert_close(
            &a,
            &[0.69314718055994531, -0.63648283790644372, -1.0986122886681097],
            1e-12,
        );
    }

    #[test]
    fn consensus_advantage_zero_delta() {
        let a = consensus_advantage(&[vec![0.0f64; 3], vec![0.0; 3]], &[0.5, 0.5]);
        assert_close(&a, &[0.0, 0.0, 0.0], 0.0);
    }

    #[test]
    fn gate_neutral_teachers() {
        // Views equal to the student: every advantage is zero, so C = 0.
        let p = dist(&[0.25, 0.25, 0.5]);
        let fam = ViewFamily::uniform(vec![p.clone(), p.clone()]).unwrap();
        let sig = pool(&p, &fam, 1e-8).unwrap();
        assert_close(&sig.a_geo, &[0.0, 0.0, 0.0], 1e-12);
        assert_close(&sig.c_gate, &[0.0, 0.0, 0.0], 1e-12);
        assert_close(&sig.lambda, &[0.0, 0.0, 0.0], 1e-12);
    }

    #[test]
    fn gate_worked_example() {
        let (p, fam) = worked_family();
        let sig = pool(&p, &fam, 1e-8).unwrap();
        assert_close(
            &sig.c_gate,
            &[0.9999999855730498, 0.65417494397024391, 0.99999999089760782],
            1e-12,
        );
        assert_close(
            &sig.r_gate,
            &[0.75647078911023563, 0.60627683203725155, 0.99999999089760782],
            1e-12,
        );
        assert_close(
            &sig.lambda,
            &[0.75647077819666923, 0.39661111262842602, 0.99999998179521572],
            1e-12,
        );
    }

    #[test]
    fn reconstruct_worked_example() {
        let (p, fam) = worked_family();
        let sig = pool(&p, &fam, 1e-8).unwrap();
        assert_close(
            &sig.a_hat,
            &[0.86194875647217396, -0.47254788355805796, -1.0986122886681097],
            1e-12,
        );
        assert_close(
            &sig.qstar.probs(),
            &[0.53493219489286893, 0.35210664279144276, 0.1129611623156883],
            1e-12,
        );
    }

    #[test]
    fn reconstruct_lambda_zero_recovers_consensus() {
        let (_, fam) = worked_family();
        let (log_un, qg) = geometric_consensus(&fam);
        let j = cross_view_residual(&arithmetic_marginal(&fam), &log_un).unwrap();
        let zeros = vec![0.0f64; 3];
        let (_, qstar) = reconstruct(&zeros, &log_un, &j, &zeros);
        assert_close(&qstar.probs(), &qg.probs(), 1e-15);
    }

    #[test]
    fn reconstruct_lambda_one_recovers_marginal() {
        let (_, fam) = worked_family();
        let (log_un, _) = geometric_consensus(&fam);
        let qa = arithmetic_marginal(&fam);
        let j = cross_view_residual(&qa, &log_un).unwrap();
        let ones = vec![1.0f64; 3];
        let (_, qstar) = reconstruct(&vec![0.0; 3], &log_un, &j, &ones);
        assert_close(&qstar.probs(), &qa.probs(), 1e-13);
    }

    #[test]
    fn pool_single_view_degenerates() {
        let p = dist(&[0.2, 0.5, 0.3]);
        let q = dist(&[0.8, 0.1, 0.1]);
        let fam = ViewFamily::uniform(vec![q.clone()]).unwrap();
        let sig = pool(&p, &fam, 1e-8).unwrap();
        assert_close(&sig.qstar.probs(), &q.probs(), 1e-12);
        assert_close(&sig.a_hat, &sig.delta[0], 1e-12);
    }

    #[test]
    fn pool_rejects_nonpositive_epsilon() {
        let (p, fam) = worked_family();
        assert!(pool(&p, &fam, 0.0).is_err());
    }

    #[test]
    fn pool_in_f32_stays_consistent() {
        let p = LogDist::<f32>::from_probs(&[0.2, 0.5, 0.3]).unwrap();
        let fam = ViewFamily::uniform(vec![
            LogDist::<f32>::from_probs(&[0.8, 0.1, 0.1]).unwrap(),
            LogDist::<f32>::from_probs(&[0.2, 0.7, 0.1]).unwrap(),
        ])
        .unwrap();
        let sig = pool(&p, &fam, 1e-6f32).unwrap();
        assert!((sig.a_hat[1] - (-0.472548f32)).abs() < 1e-4);
        assert!(sig.qstar.is_normalized(1e-5));
    }
}
