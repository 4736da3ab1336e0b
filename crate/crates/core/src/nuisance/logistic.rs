//! Logistic regression by Newton-Raphson (IRLS) with an optional fixed offset.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numeric::{expit, logit, sum, CompensatedSum};

pub const MAX_ITER: usize = 100;
pub const SCORE_TOL: f64 = 1e-8;
pub const REL_LL_TOL: f64 = 1e-10;
pub const RIDGE_JITTER: f64 = 1e-10;
/// Coefficients beyond this magnitude are taken as evidence of separation.
pub const SEPARATION_BOUND: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitStatus {
    Converged,
    MaxIterations,
    /// The likelihood is maximised at infinity; coefficients were clamped.
    Separation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    /// Intercept first when `intercept` is set.
    pub coefficients: Vec<f64>,
    pub intercept: bool,
    pub converged: bool,
    pub iterations: usize,
    pub status: FitStatus,
}

impl LogisticModel {
    pub fn linear_predictor(&self, row: &[f64], offset: f64) -> f64 {
        let (b0, slopes) = if self.intercept {
            (self.coefficients[0], &self.coefficients[1..])
        } else {
            (0.0, &self.coefficients[..])
        };
        b0 + offset + slopes.iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
    }

    pub fn predict(&self, row: &[f64], offset: f64) -> f64 {
        expit(self.linear_predictor(row, offset))
    }
}

/// `log(1 + e^eta)` without overflow.
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + libm::log1p(libm::exp(-eta))
    } else {
        libm::log1p(libm::exp(eta))
    }
}

struct Design<'a> {
    features: &'a [f64],
    p: usize,
    intercept: bool,
}

impl Design<'_> {
    fn params(&self) -> usize {
        self.p + usize::from(self.intercept)
    }

    /// Writes the design row `i` (with leading 1 for the intercept) into `out`.
    fn row_into(&self, i: usize, out: &mut [f64]) {
        let start = usize::from(self.intercept);
        if self.intercept {
            out[0] = 1.0;
        }
        out[start..].copy_from_slice(&self.features[i * self.p..(i + 1) * self.p]);
    }
}

struct Evaluation {
    log_lik: f64,
    score: Vec<f64>,
    info: DMatrix<f64>,
}

fn evaluate(design: &Design<'_>, labels: &[f64], offset: Option<&[f64]>, beta: &[f64]) -> Evaluation {
    let m = design.params();
    let mut row = vec![0.0; m];
    let mut ll = CompensatedSum::new();
    let mut score = vec![CompensatedSum::new(); m];
    let mut info = DMatrix::<f64>::zeros(m, m);
    for (i, &y) in labels.iter().enumerate() {
        design.row_into(i, &mut row);
        let eta = offset.map_or(0.0, |o| o[i]) + row.iter().zip(beta).map(|(x, b)| x * b).sum::<f64>();
        let mu = expit(eta);
        let w = mu * (1.0 - mu);
        ll.add(y * eta - softplus(eta));
        for a in 0..m {
            score[a].add(row[a] * (y - mu));
            for b in 0..=a {
                info[(a, b)] += w * row[a] * row[b];
            }
        }
    }
    for a in 0..m {
        for b in 0..a {
            info[(b, a)] = info[(a, b)];
        }
    }
    Evaluation {
        log_lik: ll.value(),
        score: score.iter().map(CompensatedSum::value).collect(),
        info,
    }
}

/// Fit `P(label = 1) = expit(offset + [1, x] . beta)`.
///
/// `features` is row-major with `p` columns. Convergence is declared when the
/// largest absolute score component is at most 1e-8 or the relative change in
/// log-likelihood is at most 1e-10, within 100 Newton iterations. A
/// coefficient magnitude above 30 (or, without an offset, labels that are all
/// equal) yields a clamped model with [`FitStatus::Separation`].
pub fn fit_logistic(
    features: &[f64],
    p: usize,
    labels: &[f64],
    offset: Option<&[f64]>,
    intercept: bool,
) -> Result<LogisticModel> {
    let n = labels.len();
    let design = Design {
        features,
        p,
        intercept,
    };
    let m = design.params();
    if m == 0 {
        return Err(Error::InvalidConfig("logistic model has no parameters".into()));
    }
    if features.len() != n * p {
        return Err(Error::LengthMismatch {
            left: features.len(),
            right: n * p,
        });
    }
    if let Some(o) = offset {
        if o.len() != n {
            return Err(Error::LengthMismatch {
                left: o.len(),
                right: n,
            });
        }
    }
    if n < m + 1 {
        return Err(Error::TooFewRows {
            needed: m + 1,
            params: m,
            found: n,
        });
    }

    if offset.is_none() && intercept {
        let ones = labels.iter().filter(|&&y| y > 0.5).count();
        if ones == 0 || ones == n {
            let mut coefficients = vec![0.0; m];
            coefficients[0] = if ones == n {
                SEPARATION_BOUND
            } else {
                -SEPARATION_BOUND
            };
            return Ok(LogisticModel {
                coefficients,
                intercept,
                converged: false,
                iterations: 0,
                status: FitStatus::Separation,
            });
        }
    }

    if p == 0 && offset.is_none() && intercept {
        let rate = sum(labels.iter().copied()) / n as f64;
        return Ok(LogisticModel {
            coefficients: vec![logit(rate)],
            intercept,
            converged: true,
            iterations: 0,
            status: FitStatus::Converged,
        });
    }

    let mut beta = vec![0.0; m];
    let mut current = evaluate(&design, labels, offset, &beta);
    for iter in 1..=MAX_ITER {
        if current.score.iter().all(|s| s.abs() <= SCORE_TOL) {
            return Ok(LogisticModel {
                coefficients: beta,
                intercept,
                converged: true,
                iterations: iter - 1,
                status: FitStatus::Converged,
            });
        }

        let mut info = current.info.clone();
        for a in 0..m {
            info[(a, a)] += RIDGE_JITTER;
        }
        let step = info
            .cholesky()
            .ok_or(Error::DegenerateDesign)?
            .solve(&DVector::from_column_slice(&current.score));
        if step.iter().any(|s| !s.is_finite()) {
            return Err(Error::DegenerateDesign);
        }

        // Step halving keeps the log-likelihood monotone.
        let mut scale = 1.0;
        let (next_beta, next) = loop {
            let candidate: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            let eval = evaluate(&design, labels, offset, &candidate);
            if eval.log_lik >= current.log_lik - 1e-12 * current.log_lik.abs() || scale < 1e-6 {
                break (candidate, eval);
            }
            scale *= 0.5;
        };

        if next_beta.iter().any(|b| b.abs() > SEPARATION_BOUND) {
            return Ok(LogisticModel {
                coefficients: next_beta
                    .iter()
                    .map(|b| b.clamp(-SEPARATION_BOUND, SEPARATION_BOUND))
                    .collect(),
                intercept,
                converged: false,
                iterations: iter,
                status: FitStatus::Separation,
            });
        }

        let rel_change = (next.log_lik - current.log_lik).abs() / current.log_lik.abs().max(f64::MIN_POSITIVE);
        beta = next_beta;
        current = next;
        if rel_change <= REL_LL_TOL || current.score.iter().all(|s| s.abs() <= SCORE_TOL) {
            return Ok(LogisticModel {
                coefficients: beta,
                intercept,
                converged: true,
                iterations: iter,
                status: FitStatus::Converged,
            });
        }
    }

    Ok(LogisticModel {
        coefficients: beta,
        intercept,
        converged: false,
        iterations: MAX_ITER,
        status: FitStatus::MaxIterations,
    })
}
