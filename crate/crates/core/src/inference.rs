//! Variance estimation and Wald-type intervals for the inverse capture
//! probability, the capture probability, and the population size.

use alloc::format;

use crate::error::{Error, Result};
use crate::model::{PopulationEstimate, PsiEstimate};
use crate::numeric::{unbiased_variance, z_two_sided};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    PsiInv,
    Psi,
    N,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    /// Nominal coverage `1 - alpha`.
    pub level: f64,
    pub target: Target,
}

impl ConfidenceInterval {
    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

fn check_args(sigma_hat: f64, n: usize, alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidConfig(format!("alpha {alpha} must lie in (0, 1]")));
    }
    if !(sigma_hat >= 0.0) || n == 0 {
        return Err(Error::InvalidConfig(format!(
            "interval needs sigma >= 0 and N >= 1 (sigma = {sigma_hat}, N = {n})"
        )));
    }
    Ok(())
}

/// Unbiased empirical variance of influence values.
pub fn eif_variance(eif_values: &[f64]) -> Result<f64> {
    unbiased_variance(eif_values).ok_or(Error::TooFewValues(eif_values.len()))
}

/// `psi_inv_hat +/- z sigma / sqrt(N)`.
pub fn ci_psi_inv(psi_inv_hat: f64, sigma_hat: f64, n: usize, alpha: f64) -> Result<ConfidenceInterval> {
    check_args(sigma_hat, n, alpha)?;
    let half = z_two_sided(alpha) * sigma_hat / libm::sqrt(n as f64);
    Ok(ConfidenceInterval {
        lower: psi_inv_hat - half,
        upper: psi_inv_hat + half,
        level: 1.0 - alpha,
        target: Target::PsiInv,
    })
}

/// Delta-method interval `psi_hat +/- z sigma psi_hat^2 / sqrt(N)`, clipped
/// to [0, 1].
pub fn ci_psi(psi_hat: f64, sigma_hat: f64, n: usize, alpha: f64) -> Result<ConfidenceInterval> {
    check_args(sigma_hat, n, alpha)?;
    let half = z_two_sided(alpha) * sigma_hat * psi_hat * psi_hat / libm::sqrt(n as f64);
    Ok(ConfidenceInterval {
        lower: (psi_hat - half).max(0.0),
        upper: (psi_hat + half).min(1.0),
        level: 1.0 - alpha,
        target: Target::Psi,
    })
}

/// Interval for the population size from a capture probability estimate and
/// the variance `varsigma_sq` of its influence function:
///
/// `n_hat = N / psi`, `tau^2 = psi varsigma^2 + (1 - psi) / psi`,
/// `n_hat +/- z tau sqrt(n_hat)`.
pub fn population_interval(n_observed: usize, psi_hat: f64, varsigma_sq: f64, alpha: f64) -> Result<PopulationEstimate> {
    check_args(varsigma_sq.max(0.0), n_observed, alpha)?;
    if !(psi_hat > 0.0 && psi_hat <= 1.0) {
        return Err(Error::ProbabilityOutOfRange {
            name: "psi",
            value: psi_hat,
        });
    }
    if !(varsigma_sq >= 0.0) {
        return Err(Error::InvalidConfig(format!("influence variance {varsigma_sq} is negative")));
    }
    let n_hat = n_observed as f64 / psi_hat;
    let tau_hat_sq = psi_hat * varsigma_sq + (1.0 - psi_hat) / psi_hat;
    let half = z_two_sided(alpha) * libm::sqrt(tau_hat_sq * n_hat);
    Ok(PopulationEstimate {
        n_observed,
        psi_hat,
        n_hat,
        tau_hat_sq,
        ci_lower: n_hat - half,
        ci_upper: n_hat + half,
        alpha,
    })
}

/// Population-size estimate from a capture probability estimate.
///
/// The influence variance is `borrowed_variance` when given, otherwise the
/// estimate's own `sigma_hat_sq`. The plug-in estimator has none, so it needs
/// a borrowed value (typically from the doubly robust fit on the same data).
pub fn population_estimate(
    estimate: &PsiEstimate,
    alpha: f64,
    borrowed_variance: Option<f64>,
) -> Result<PopulationEstimate> {
    let varsigma_sq = borrowed_variance
        .or(estimate.sigma_hat_sq)
        .ok_or(Error::MissingVariance)?;
    population_interval(estimate.n_observed, estimate.psi_hat, varsigma_sq, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Diagnostics, Method};
    use alloc::vec::Vec;

    #[test]
    fn eif_variance_examples() {
        assert_eq!(eif_variance(&[0.3; 4]).unwrap(), 0.0);
        assert_eq!(eif_variance(&[-1.0, 1.0]).unwrap(), 2.0);
        assert_eq!(eif_variance(&[1.0]), Err(Error::TooFewValues(1)));
    }

    #[test]
    fn psi_inv_interval_examples() {
        let ci = ci_psi_inv(2.0, libm::sqrt(2.0), 200, 0.05).unwrap();
        assert!((ci.lower - 1.804).abs() < 5e-4 && (ci.upper - 2.196).abs() < 5e-4);
        let point = ci_psi_inv(2.0, 0.0, 200, 0.05).unwrap();
        assert_eq!((point.lower, point.upper), (2.0, 2.0));
        let zero = ci_psi_inv(2.0, 3.0, 200, 1.0).unwrap();
        assert_eq!(zero.width(), 0.0);
        assert!(ci_psi_inv(2.0, 1.0, 200, 0.0).is_err());
    }

    #[test]
    fn psi_interval_examples() {
        let ci = ci_psi(0.5, libm::sqrt(2.0), 200, 0.05).unwrap();
        assert!((ci.upper - 0.5 - 0.049).abs() < 5e-4);
        assert!((0.5 - ci.lower - 0.049).abs() < 5e-4);
        let full = ci_psi(1.0, 0.0, 10, 0.05).unwrap();
        assert_eq!((full.lower, full.upper), (1.0, 1.0));
        let wide = ci_psi(0.98, 5.0, 10, 0.05).unwrap();
        assert_eq!(wide.upper, 1.0);
        assert!(wide.contains(0.98));
    }

    fn estimate(psi: f64, sigma_sq: Option<f64>, n: usize) -> PsiEstimate {
        PsiEstimate {
            method: if sigma_sq.is_some() { Method::DoublyRobust } else { Method::PlugIn },
            n_observed: n,
            psi_hat: psi,
            psi_inv_hat: 1.0 / psi,
            eif_values: Vec::new(),
            sigma_hat_sq: sigma_sq,
            diagnostics: Diagnostics::default(),
        }
    }

    #[test]
    fn full_capture_gives_point_interval() {
        let pop = population_estimate(&estimate(1.0, Some(0.0), 250), 0.05, None).unwrap();
        assert_eq!(pop.n_hat, 250.0);
        assert_eq!(pop.ci_lower, pop.ci_upper);
    }

    #[test]
    fn petersen_style_half_width() {
        // N = 160, psi = 0.4, q12 = 0.125: sigma^2 = ((1-psi)/psi^2)((1-q12)/q12).
        let psi: f64 = 0.4;
        let q12 = 0.125;
        let sigma_sq = ((1.0 - psi) / (psi * psi)) * ((1.0 - q12) / q12);
        let pop = population_estimate(&estimate(psi, Some(sigma_sq), 160), 0.05, None).unwrap();
        let wald = z_two_sided(0.05) * libm::sqrt(pop.n_hat * (1.0 - psi) / (psi * q12));
        assert!((pop.half_width() - wald).abs() < 1e-9);
        assert!((pop.half_width() - 135.8).abs() < 0.05);
        assert_eq!(pop.n_hat_display(), 400);
    }

    #[test]
    fn plug_in_needs_borrowed_variance() {
        let pi = estimate(0.5, None, 100);
        assert_eq!(population_estimate(&pi, 0.05, None), Err(Error::MissingVariance));
        assert!(population_estimate(&pi, 0.05, Some(3.0)).is_ok());
    }

    #[test]
    fn tau_floor_and_monotone_width() {
        let mut last = f64::INFINITY;
        for i in 1..=20 {
            let psi = f64::from(i) / 20.0;
            let pop = population_interval(500, psi, 4.0, 0.05).unwrap();
            assert!(pop.tau_hat_sq >= (1.0 - psi) / psi);
            assert!(pop.half_width() <= last);
            last = pop.half_width();
        }
    }
}
