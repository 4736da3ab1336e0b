//! Identification of the capture probability from the observed-data
//! distribution, its efficient influence function, the closed-form
//! efficiency bound, and the second-order remainder of the one-step
//! expansion.
//!
//! Notation: `q1`, `q2`, `q12` are the probabilities, among observed units
//! with covariates `x`, of appearing on list 1, list 2, and both. Under
//! conditional independence of lists 1 and 2, `gamma(x) = q12 / (q1 q2)` is
//! the probability that a unit with covariates `x` is captured at all, and
//! the marginal capture probability `psi` is the harmonic mean of `gamma`
//! over observed units.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{QProbs, UnitRecord, GAMMA_FLAG_TOL};
use crate::numeric::{sum, CompensatedSum};

/// Conditional capture probability and whether it had to be clamped to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gamma {
    pub value: f64,
    pub clamped: bool,
}

pub fn conditional_capture_prob(q1: f64, q2: f64, q12: f64) -> Result<Gamma> {
    if !(q12 > 0.0) {
        return Err(Error::PositivityViolation(q12));
    }
    if !(q1 > 0.0) {
        return Err(Error::ProbabilityOutOfRange { name: "q1", value: q1 });
    }
    if !(q2 > 0.0) {
        return Err(Error::ProbabilityOutOfRange { name: "q2", value: q2 });
    }
    let raw = q12 / (q1 * q2);
    Ok(Gamma {
        value: raw.min(1.0),
        clamped: raw > 1.0 + GAMMA_FLAG_TOL,
    })
}

/// Harmonic mean of conditional capture probabilities.
pub fn psi_from_gammas(gammas: &[f64]) -> Result<f64> {
    if gammas.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut acc = CompensatedSum::new();
    for &g in gammas {
        if !(g > 0.0 && g <= 1.0) {
            return Err(Error::ProbabilityOutOfRange { name: "gamma", value: g });
        }
        acc.add(1.0 / g);
    }
    Ok(gammas.len() as f64 / acc.value())
}

/// `(1/gamma) (y1/q1 + y2/q2 - y1 y2/q12)`: the uncentred part of the
/// influence function, whose conditional mean given `x` is `1/gamma(x)`.
pub fn dr_summand(y1: f64, y2: f64, q: &QProbs) -> f64 {
    (y1 / q.q1() + y2 / q.q2() - y1 * y2 / q.q12()) / q.gamma()
}

/// Efficient influence function of the inverse capture probability at one
/// unit. Only lists 1 and 2 enter.
pub fn eif(unit: &UnitRecord, q: &QProbs, psi_inv: f64) -> f64 {
    dr_summand(unit.y1(), unit.y2(), q) - psi_inv
}

/// A (possibly weighted) distribution over nuisance triples.
#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyBoundInput {
    samples: Vec<QProbs>,
    weights: Option<Vec<f64>>,
}

impl EfficiencyBoundInput {
    pub fn uniform(samples: Vec<QProbs>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(Self {
            samples,
            weights: None,
        })
    }

    /// Weights must be non-negative and sum to 1 within 1e-12.
    pub fn weighted(samples: Vec<QProbs>, weights: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput);
        }
        if samples.len() != weights.len() {
            return Err(Error::LengthMismatch {
                left: samples.len(),
                right: weights.len(),
            });
        }
        let total = sum(weights.iter().copied());
        if (total - 1.0).abs() > 1e-12 || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::WeightsNotNormalized(total));
        }
        Ok(Self {
            samples,
            weights: Some(weights),
        })
    }

    pub fn samples(&self) -> &[QProbs] {
        &self.samples
    }

    pub fn weight(&self, i: usize) -> f64 {
        match &self.weights {
            Some(w) => w[i],
            None => 1.0 / self.samples.len() as f64,
        }
    }

    /// Weighted expectation of `f` over the samples.
    pub fn expect<F: Fn(&QProbs) -> f64>(&self, f: F) -> f64 {
        sum(self
            .samples
            .iter()
            .enumerate()
            .map(|(i, q)| self.weight(i) * f(q)))
    }
}

/// Closed-form variance of the efficient influence function:
///
/// `E[(1/g) {((1-g)/g) ((1-q12)/q12) + q0/q12}] + var(1/g)`
///
/// with `q0 = max(0, 1 - q1 - q2 + q12)` and expectations under the input
/// distribution.
pub fn efficiency_bound(input: &EfficiencyBoundInput) -> Result<f64> {
    if let Some(q) = input.samples().iter().find(|q| !(q.q12() > 0.0)) {
        return Err(Error::PositivityViolation(q.q12()));
    }
    let within = input.expect(|q| {
        let g = q.gamma();
        let q12 = q.q12();
        (((1.0 - g) / g) * ((1.0 - q12) / q12) + q.q0() / q12) / g
    });
    let mean_inv = input.expect(|q| 1.0 / q.gamma());
    let var_inv = input.expect(|q| {
        let d = 1.0 / q.gamma() - mean_inv;
        d * d
    });
    Ok(within + var_inv)
}

fn check_lengths(true_q: &[QProbs], est_q: &[QProbs]) -> Result<()> {
    if true_q.len() != est_q.len() {
        return Err(Error::LengthMismatch {
            left: true_q.len(),
            right: est_q.len(),
        });
    }
    if true_q.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// The two integrands of the remainder, averaged separately:
/// `(q1 - q1^)(q2^ - q2)/q12^` and `(q12 - q12^)(1/g - 1/g^)/q12^`.
pub fn remainder_terms(true_q: &[QProbs], est_q: &[QProbs]) -> Result<(f64, f64)> {
    check_lengths(true_q, est_q)?;
    let n = true_q.len() as f64;
    let mut first = CompensatedSum::new();
    let mut second = CompensatedSum::new();
    for (q, e) in true_q.iter().zip(est_q) {
        first.add((q.q1() - e.q1()) * (e.q2() - q.q2()) / e.q12());
        second.add((q.q12() - e.q12()) * (1.0 / q.gamma() - 1.0 / e.gamma()) / e.q12());
    }
    Ok((first.value() / n, second.value() / n))
}

/// Second-order remainder averaged over a sample from the observed-data
/// distribution. Needs the true nuisances, so it is a simulation diagnostic.
pub fn remainder_r2(true_q: &[QProbs], est_q: &[QProbs]) -> Result<f64> {
    let (a, b) = remainder_terms(true_q, est_q)?;
    Ok(a + b)
}

/// Cauchy-Schwarz bound on the remainder,
/// `(1/eps) |q1^-q1| |q2^-q2| + (1/eps^3) |q12^-q12| |g^-g|` with empirical
/// L2 norms and `eps` the smallest joint probability among true and estimate.
pub fn remainder_bound(true_q: &[QProbs], est_q: &[QProbs]) -> Result<f64> {
    check_lengths(true_q, est_q)?;
    let n = true_q.len() as f64;
    let norm = |f: &dyn Fn(&QProbs, &QProbs) -> f64| {
        libm::sqrt(sum(true_q.iter().zip(est_q).map(|(q, e)| {
            let d = f(q, e);
            d * d
        })) / n)
    };
    let eps = true_q
        .iter()
        .zip(est_q)
        .map(|(q, e)| q.q12().min(e.q12()))
        .fold(f64::INFINITY, f64::min);
    let d1 = norm(&|q, e| e.q1() - q.q1());
    let d2 = norm(&|q, e| e.q2() - q.q2());
    let d12 = norm(&|q, e| e.q12() - q.q12());
    let dg = norm(&|q, e| e.gamma() - q.gamma());
    Ok(d1 * d2 / eps + d12 * dg / (eps * eps * eps))
}
