//! Plug-in, doubly robust (one-step) and TMLE estimators of the capture
//! probability, and cross-fitting orchestration.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::identification::{dr_summand, eif};
use crate::model::{CaptureDataset, Diagnostics, Method, PsiEstimate, QProbs, UnitRecord};
use crate::numeric::{expit, logit, mean, sum, unbiased_variance};
use crate::nuisance::{estimate_q_probs, fit_logistic, make_folds, FitStatus, NuisanceConfig};

fn check_aligned(units: &[UnitRecord], q: &[QProbs]) -> Result<()> {
    if q.is_empty() {
        return Err(Error::EmptyInput);
    }
    if units.len() != q.len() {
        return Err(Error::LengthMismatch {
            left: units.len(),
            right: q.len(),
        });
    }
    Ok(())
}

fn gamma_clamp_count(q: &[QProbs]) -> usize {
    q.iter().filter(|q| q.gamma_was_clamped()).count()
}

/// Harmonic mean of the estimated conditional capture probabilities.
/// Carries no influence values or variance.
pub fn plug_in(eval_q: &[QProbs]) -> Result<PsiEstimate> {
    if eval_q.is_empty() {
        return Err(Error::EmptyInput);
    }
    let inv: Vec<f64> = eval_q.iter().map(|q| 1.0 / q.gamma()).collect();
    let psi_inv_hat = mean(&inv);
    Ok(PsiEstimate {
        method: Method::PlugIn,
        n_observed: eval_q.len(),
        psi_hat: 1.0 / psi_inv_hat,
        psi_inv_hat,
        eif_values: Vec::new(),
        sigma_hat_sq: None,
        diagnostics: Diagnostics {
            gamma_clamped: gamma_clamp_count(eval_q),
            ..Diagnostics::default()
        },
    })
}

/// `psi_inv_dr - psi_inv_pi - mean(eif at psi_inv_pi)`, each term computed
/// along its own path. Zero up to rounding: the doubly robust estimator is
/// the plug-in plus the empirical mean of the estimated influence function.
pub fn one_step_residual(units: &[UnitRecord], q: &[QProbs]) -> Result<f64> {
    check_aligned(units, q)?;
    let psi_inv_pi = plug_in(q)?.psi_inv_hat;
    let summands: Vec<f64> = units
        .iter()
        .zip(q)
        .map(|(u, q)| dr_summand(u.y1(), u.y2(), q))
        .collect();
    let psi_inv_dr = mean(&summands);
    let phi: Vec<f64> = units.iter().zip(q).map(|(u, q)| eif(u, q, psi_inv_pi)).collect();
    Ok(psi_inv_dr - psi_inv_pi - mean(&phi))
}

fn from_summands(
    method: Method,
    summands: Vec<f64>,
    mut diagnostics: Diagnostics,
) -> PsiEstimate {
    let raw = mean(&summands);
    let psi_inv_hat = if raw < 1.0 {
        diagnostics.psi_clamped = 1;
        1.0
    } else {
        raw
    };
    let sigma_hat_sq = unbiased_variance(&summands);
    let eif_values = summands.iter().map(|s| s - psi_inv_hat).collect();
    PsiEstimate {
        method,
        n_observed: summands.len(),
        psi_hat: 1.0 / psi_inv_hat,
        psi_inv_hat,
        eif_values,
        sigma_hat_sq,
        diagnostics,
    }
}

/// One-step bias-corrected estimator: the inverse of the sample mean of
/// `(1/g^)(Y1/q1^ + Y2/q2^ - Y1 Y2/q12^)`, truncated so that `psi <= 1`.
pub fn doubly_robust(units: &[UnitRecord], eval_q: &[QProbs]) -> Result<PsiEstimate> {
    check_aligned(units, eval_q)?;
    let summands: Vec<f64> = units
        .iter()
        .zip(eval_q)
        .map(|(u, q)| dr_summand(u.y1(), u.y2(), q))
        .collect();
    let residual = one_step_residual(units, eval_q)?;
    debug_assert!(residual.abs() <= 1e-12 * (1.0 + mean(&summands).abs()), "{residual}");
    let diagnostics = Diagnostics {
        gamma_clamped: gamma_clamp_count(eval_q),
        one_step_residual: Some(residual),
        ..Diagnostics::default()
    };
    Ok(from_summands(Method::DoublyRobust, summands, diagnostics))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TmleConfig {
    /// Stop once every fluctuation coefficient is at most this in magnitude.
    pub beta_tolerance: f64,
    pub max_rounds: usize,
    /// Floor applied to `q1 - q12` and `q2 - q12` before taking logits; also
    /// the margin by which fluctuated `q12` is kept inside (0, 1).
    pub logit_clamp: f64,
    /// Two-list mode: replace the list-2 fluctuation by `q2 = 1 + q12 - q1`
    /// and fold the list-2 covariate into the other two (`H12 + H2` and
    /// `H1 - H2`), so the fluctuations still solve the influence function
    /// equation under the identity. The list-1 cap becomes `1` (keeping
    /// `q2 >= q12`) instead of `1 - q12`. Every unit must be on list 1 or 2.
    pub k2_variant: bool,
}

impl Default for TmleConfig {
    fn default() -> Self {
        Self {
            beta_tolerance: 1e-4,
            max_rounds: 100,
            logit_clamp: 1e-6,
            k2_variant: false,
        }
    }
}

impl TmleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_tolerance > 0.0) || self.max_rounds == 0 {
            return Err(Error::InvalidConfig(format!(
                "TMLE needs beta_tolerance > 0 and max_rounds >= 1 (got {}, {})",
                self.beta_tolerance, self.max_rounds
            )));
        }
        if !(self.logit_clamp > 0.0 && self.logit_clamp < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "logit_clamp {} must lie in (0, 0.5)",
                self.logit_clamp
            )));
        }
        Ok(())
    }
}

/// Bookkeeping for one fluctuation round.
#[derive(Debug, Clone, PartialEq)]
pub struct TmleRound {
    /// Coefficients for the joint, list-1-only and list-2-only fluctuations.
    pub beta: [f64; 3],
    /// Largest `|q1 + q2 - q12 - 1|` over units after the round.
    pub max_k2_deviation: f64,
    /// Every updated triple satisfied the coherence invariants.
    pub coherent: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TmleOutput {
    pub estimate: PsiEstimate,
    /// Fluctuated nuisances `q*`.
    pub q_star: Vec<QProbs>,
    pub rounds: Vec<TmleRound>,
    /// Empirical mean of the influence function at `q*`, centred at the TMLE.
    pub score_mean: f64,
}

fn fluctuate(labels: &[f64], covariate: &[f64], offset: &[f64]) -> Result<(f64, bool)> {
    let model = fit_logistic(covariate, 1, labels, Some(offset), false)?;
    Ok((model.coefficients[0], model.status == FitStatus::Separation))
}

/// Targeted maximum likelihood: iteratively fluctuate `q12`, then `q1`, then
/// `q2` along their clever covariates with offset logistic regressions until
/// every coefficient is below `beta_tolerance`. The estimate is the plug-in
/// built from the fluctuated nuisances.
///
/// When `max_rounds` is reached the round with the smallest coefficients is
/// returned and `diagnostics.tmle_converged` is `false`.
pub fn tmle(units: &[UnitRecord], initial_q: &[QProbs], config: &TmleConfig) -> Result<TmleOutput> {
    check_aligned(units, initial_q)?;
    config.validate()?;
    let lo = config.logit_clamp;
    for q in initial_q {
        for (name, v) in [("q1", q.q1()), ("q2", q.q2()), ("q12", q.q12())] {
            if !(v > lo && v < 1.0 - lo) {
                return Err(Error::InitialOutOfBounds {
                    name,
                    value: v,
                    eps: lo,
                });
            }
        }
    }

    if config.k2_variant {
        if let Some(row) = units.iter().position(|u| u.y1() + u.y2() == 0.0) {
            return Err(Error::InvalidConfig(format!(
                "two-list TMLE needs every unit on list 1 or 2; row {row} is on neither"
            )));
        }
    }

    let n = units.len();
    let y12: Vec<f64> = units.iter().map(|u| u.y1() * u.y2()).collect();
    let y1_only: Vec<f64> = units.iter().map(|u| u.y1() * (1.0 - u.y2())).collect();
    let y2_only: Vec<f64> = units.iter().map(|u| u.y2() * (1.0 - u.y1())).collect();

    let mut q1: Vec<f64> = initial_q.iter().map(QProbs::q1).collect();
    let mut q2: Vec<f64> = initial_q.iter().map(QProbs::q2).collect();
    let mut q12: Vec<f64> = initial_q.iter().map(QProbs::q12).collect();

    let mut rounds = Vec::new();
    let mut offset_clamped = 0usize;
    let mut separation = 0usize;
    let mut best: Option<(f64, Vec<f64>, Vec<f64>, Vec<f64>)> = None;
    let mut converged = false;

    let mut h = alloc::vec![0.0; n];
    let mut offset = alloc::vec![0.0; n];
    for _ in 0..config.max_rounds {
        // Joint capture.
        let h1: Vec<f64> = (0..n)
            .map(|i| q2[i] / q12[i] - if config.k2_variant { q1[i] / q12[i] } else { 0.0 })
            .collect();
        for i in 0..n {
            h[i] = q1[i] * q2[i] / (q12[i] * q12[i]) - q1[i] / q12[i] - q2[i] / q12[i];
            if config.k2_variant {
                h[i] += q1[i] / q12[i];
            }
            offset[i] = logit(q12[i]);
        }
        let (b12, sep) = fluctuate(&y12, &h, &offset)?;
        separation += usize::from(sep);
        let h2: Vec<f64> = (0..n).map(|i| q1[i] / q12[i]).collect();
        let next12: Vec<f64> = (0..n)
            .map(|i| expit(offset[i] + b12 * h[i]).clamp(lo, 1.0 - lo))
            .collect();

        // List 1 only.
        for i in 0..n {
            let gap = q1[i] - next12[i];
            if gap < lo {
                offset_clamped += 1;
            }
            offset[i] = logit(gap.max(lo));
        }
        let (b1, sep) = fluctuate(&y1_only, &h1, &offset)?;
        separation += usize::from(sep);
        let next1: Vec<f64> = (0..n)
            .map(|i| {
                let up = next12[i] + expit(offset[i] + b1 * h1[i]);
                let cap = if config.k2_variant { 1.0 - lo } else { 1.0 - next12[i] };
                up.min(cap).max(next12[i])
            })
            .collect();

        // List 2 only.
        let (b2, next2) = if config.k2_variant {
            (0.0, (0..n).map(|i| 1.0 + next12[i] - next1[i]).collect::<Vec<f64>>())
        } else {
            for i in 0..n {
                let gap = q2[i] - next12[i];
                if gap < lo {
                    offset_clamped += 1;
                }
                offset[i] = logit(gap.max(lo));
            }
            let (b2, sep) = fluctuate(&y2_only, &h2, &offset)?;
            separation += usize::from(sep);
            let next2 = (0..n)
                .map(|i| {
                    let up = next12[i] + expit(offset[i] + b2 * h2[i]);
                    up.min(1.0 + next12[i] - next1[i])
                })
                .collect();
            (b2, next2)
        };

        q1 = next1;
        q2 = next2;
        q12 = next12;

        let max_k2_deviation = (0..n)
            .map(|i| (q1[i] + q2[i] - q12[i] - 1.0).abs())
            .fold(0.0, f64::max);
        let coherent = (0..n).all(|i| {
            QProbs::new(q1[i], q2[i], q12[i]).is_ok()
        });
        let beta = [b12, b1, b2];
        let max_beta = beta.iter().fold(0.0f64, |m, b| m.max(b.abs()));
        rounds.push(TmleRound {
            beta,
            max_k2_deviation,
            coherent,
        });

        if best.as_ref().is_none_or(|b| max_beta < b.0) {
            best = Some((max_beta, q1.clone(), q2.clone(), q12.clone()));
        }
        if max_beta <= config.beta_tolerance {
            converged = true;
            break;
        }
    }

    if !converged {
        if let Some((_, b1, b2, b12)) = best {
            q1 = b1;
            q2 = b2;
            q12 = b12;
        }
    }

    let q_star = (0..n)
        .map(|i| QProbs::from_estimates(q1[i], q2[i], q12[i]))
        .collect::<Result<Vec<_>>>()?;
    let inv_gamma: Vec<f64> = q_star.iter().map(|q| 1.0 / q.gamma()).collect();
    let psi_inv_hat = mean(&inv_gamma);
    let summands: Vec<f64> = units
        .iter()
        .zip(&q_star)
        .map(|(u, q)| dr_summand(u.y1(), u.y2(), q))
        .collect();
    let eif_values: Vec<f64> = summands.iter().map(|s| s - psi_inv_hat).collect();
    let score_mean = sum(eif_values.iter().copied()) / n as f64;

    let estimate = PsiEstimate {
        method: Method::Tmle,
        n_observed: n,
        psi_hat: 1.0 / psi_inv_hat,
        psi_inv_hat,
        sigma_hat_sq: unbiased_variance(&eif_values),
        eif_values,
        diagnostics: Diagnostics {
            gamma_clamped: gamma_clamp_count(&q_star),
            offset_clamped,
            separation,
            tmle_rounds: Some(rounds.len()),
            tmle_converged: Some(converged),
            ..Diagnostics::default()
        },
    };
    Ok(TmleOutput {
        estimate,
        q_star,
        rounds,
        score_mean,
    })
}

/// How per-unit influence values from different folds are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pooling {
    /// One mean and one unbiased variance over all `N` pooled values.
    #[default]
    Pooled,
    /// Average of per-fold means and per-fold variances.
    PerFold,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossFitConfig {
    /// Number of folds; 1 fits and evaluates on the full sample.
    pub folds: usize,
    pub nuisance: NuisanceConfig,
    pub tmle: TmleConfig,
    pub pooling: Pooling,
}

impl Default for CrossFitConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            nuisance: NuisanceConfig::default(),
            tmle: TmleConfig::default(),
            pooling: Pooling::Pooled,
        }
    }
}

/// Cross-fitted nuisance predictions for every unit, in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossFitNuisances {
    pub q: Vec<QProbs>,
    /// Fold label per unit (all zero for a single fold).
    pub labels: Vec<usize>,
    pub folds: usize,
    pub separation: usize,
}

impl CrossFitNuisances {
    pub fn fold_members(&self, j: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == j).collect()
    }
}

/// Fit nuisances on the complement of each fold and predict on the fold.
pub fn cross_fit_nuisances(dataset: &CaptureDataset, config: &CrossFitConfig) -> Result<CrossFitNuisances> {
    let n = dataset.n_observed();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if config.folds <= 1 {
        let all: Vec<usize> = (0..n).collect();
        let fit = estimate_q_probs(dataset, &all, &all, &config.nuisance)?;
        return Ok(CrossFitNuisances {
            q: fit.q,
            labels: alloc::vec![0; n],
            folds: 1,
            separation: fit.separation,
        });
    }
    let folds = make_folds(n, config.folds, config.nuisance.seed)?;
    let mut q: Vec<Option<QProbs>> = alloc::vec![None; n];
    let mut separation = 0;
    for j in 0..folds.k() {
        let eval = folds.fold(j);
        let train = folds.complement(j);
        let fit = estimate_q_probs(dataset, &train, &eval, &config.nuisance)?;
        separation += fit.separation;
        for (&i, qi) in eval.iter().zip(fit.q) {
            q[i] = Some(qi);
        }
    }
    Ok(CrossFitNuisances {
        q: q.into_iter().map(|q| q.expect("every unit belongs to a fold")).collect(),
        labels: folds.labels().to_vec(),
        folds: folds.k(),
        separation,
    })
}

/// Estimate from already cross-fitted nuisances.
pub fn estimate_with(
    dataset: &CaptureDataset,
    nuisances: &CrossFitNuisances,
    method: Method,
    config: &CrossFitConfig,
) -> Result<PsiEstimate> {
    let units = dataset.units();
    let run = |idx: Option<&[usize]>| -> Result<PsiEstimate> {
        let (u, q): (Vec<UnitRecord>, Vec<QProbs>) = match idx {
            Some(idx) => idx.iter().map(|&i| (units[i].clone(), nuisances.q[i])).unzip(),
            None => (units.to_vec(), nuisances.q.clone()),
        };
        match method {
            Method::PlugIn => plug_in(&q),
            Method::DoublyRobust => doubly_robust(&u, &q),
            Method::Tmle => Ok(tmle(&u, &q, &config.tmle)?.estimate),
        }
    };

    let mut estimate = match config.pooling {
        Pooling::Pooled => run(None)?,
        Pooling::PerFold => {
            let parts = (0..nuisances.folds)
                .map(|j| run(Some(&nuisances.fold_members(j))))
                .collect::<Result<Vec<_>>>()?;
            let k = parts.len() as f64;
            let psi_inv_hat = sum(parts.iter().map(|p| p.psi_inv_hat)) / k;
            let sigma_hat_sq = match method {
                Method::PlugIn => None,
                _ => parts
                    .iter()
                    .map(|p| p.sigma_hat_sq)
                    .collect::<Option<Vec<f64>>>()
                    .map(|v| sum(v) / k),
            };
            let mut diagnostics = Diagnostics::default();
            for p in &parts {
                diagnostics.gamma_clamped += p.diagnostics.gamma_clamped;
                diagnostics.psi_clamped += p.diagnostics.psi_clamped;
                diagnostics.offset_clamped += p.diagnostics.offset_clamped;
                diagnostics.separation += p.diagnostics.separation;
            }
            PsiEstimate {
                method,
                n_observed: dataset.n_observed(),
                psi_hat: 1.0 / psi_inv_hat,
                psi_inv_hat,
                eif_values: parts.into_iter().flat_map(|p| p.eif_values).collect(),
                sigma_hat_sq,
                diagnostics,
            }
        }
    };
    estimate.diagnostics.separation += nuisances.separation;
    Ok(estimate)
}

/// Cross-fitted estimate of the capture probability. With `folds >= 2`
/// every unit's nuisances come from models that never saw that unit.
pub fn cross_fit(dataset: &CaptureDataset, method: Method, config: &CrossFitConfig) -> Result<PsiEstimate> {
    let nuisances = cross_fit_nuisances(dataset, config)?;
    estimate_with(dataset, &nuisances, method, config)
}
