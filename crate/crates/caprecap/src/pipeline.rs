//! Single-dataset estimation and the report objects written by the CLI.

use std::io::Write;

use serde::Serialize;

use caprecap_core::estimators::{cross_fit_nuisances, estimate_with, CrossFitConfig, CrossFitNuisances, Pooling, TmleConfig};
use caprecap_core::inference::{ci_psi, population_estimate};
use caprecap_core::model::{Method, PsiEstimate};
use caprecap_core::nuisance::{NuisanceConfig, NuisanceSource, DEFAULT_TRUNCATION};
use caprecap_core::simulation::SimMetrics;
use caprecap_core::Error as CoreError;

use crate::format::fmt_f64;
use crate::io::{InputData, InputError};

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateOptions {
    pub method: Method,
    pub folds: usize,
    pub epsilon: f64,
    /// Miscoverage level of the reported intervals.
    pub alpha: f64,
    pub seed: u64,
    pub external_nuisance: bool,
    pub k2_identity: bool,
    pub no_covariates: bool,
    pub pooling: Pooling,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            method: Method::DoublyRobust,
            folds: 5,
            epsilon: DEFAULT_TRUNCATION,
            alpha: 0.05,
            seed: 0,
            external_nuisance: false,
            k2_identity: false,
            no_covariates: false,
            pooling: Pooling::Pooled,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EstimateError {
    #[error(transparent)]
    Input(#[from] InputError),
    #[error("estimation failed: {0}")]
    Estimation(#[from] CoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClampCounts {
    pub gamma: usize,
    pub psi: usize,
    pub offset: usize,
    pub separation: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub clamp_counts: ClampCounts,
    pub tmle_rounds: Option<usize>,
    pub tmle_converged: Option<bool>,
    pub one_step_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub method: &'static str,
    #[serde(rename = "N")]
    pub n_observed: usize,
    pub k_lists: usize,
    pub dim: usize,
    pub psi_hat: f64,
    pub psi_inv_hat: f64,
    pub psi_ci: [f64; 2],
    pub n_hat: f64,
    pub n_hat_rounded: u64,
    pub n_ci: [f64; 2],
    pub sigma_hat_sq: Option<f64>,
    /// `own`, or `doubly_robust` when the plug-in borrows the DR variance.
    pub variance_source: &'static str,
    pub tau_hat_sq: f64,
    pub alpha: f64,
    pub nuisance: &'static str,
    pub folds: usize,
    pub seed: u64,
    pub diagnostics: DiagnosticsReport,
}

fn nuisances(input: &InputData, opts: &EstimateOptions, config: &CrossFitConfig) -> Result<CrossFitNuisances, EstimateError> {
    if opts.external_nuisance {
        let q = input.external_q(opts.epsilon, opts.k2_identity)?;
        let n = q.len();
        return Ok(CrossFitNuisances {
            q,
            labels: vec![0; n],
            folds: 1,
            separation: 0,
        });
    }
    Ok(cross_fit_nuisances(&input.dataset, config)?)
}

/// Cross-fitting configuration implied by the options. Two-list data use
/// the two-list TMLE.
pub fn cross_fit_config(input: &InputData, opts: &EstimateOptions) -> CrossFitConfig {
    CrossFitConfig {
        folds: opts.folds,
        nuisance: NuisanceConfig {
            source: NuisanceSource::Logistic,
            epsilon: opts.epsilon,
            enforce_k2_identity: opts.k2_identity,
            intercept_only: opts.no_covariates,
            seed: opts.seed,
            ..NuisanceConfig::default()
        },
        tmle: TmleConfig {
            k2_variant: input.dataset.k_lists() == 2,
            ..TmleConfig::default()
        },
        pooling: opts.pooling,
    }
}

/// Estimate with `opts.method`, plus the doubly robust fit when the method
/// has no variance of its own.
pub fn estimate(input: &InputData, opts: &EstimateOptions) -> Result<(PsiEstimate, Option<PsiEstimate>), EstimateError> {
    let config = cross_fit_config(input, opts);
    config.nuisance.validate()?;
    let nuis = nuisances(input, opts, &config)?;
    let est = estimate_with(&input.dataset, &nuis, opts.method, &config)?;
    let dr = match opts.method {
        Method::PlugIn => Some(estimate_with(&input.dataset, &nuis, Method::DoublyRobust, &config)?),
        _ => None,
    };
    Ok((est, dr))
}

pub fn run_estimate(input: &InputData, opts: &EstimateOptions) -> Result<EstimateReport, EstimateError> {
    let (est, dr) = estimate(input, opts)?;
    let borrowed = dr.as_ref().and_then(|d| d.sigma_hat_sq);
    let sigma_sq = borrowed.or(est.sigma_hat_sq).ok_or(CoreError::MissingVariance)?;
    let psi_ci = ci_psi(est.psi_hat, sigma_sq.max(0.0).sqrt(), est.n_observed, opts.alpha)?;
    let pop = population_estimate(&est, opts.alpha, borrowed)?;
    let d = &est.diagnostics;
    Ok(EstimateReport {
        method: est.method.as_str(),
        n_observed: est.n_observed,
        k_lists: input.dataset.k_lists(),
        dim: input.dataset.dim(),
        psi_hat: est.psi_hat,
        psi_inv_hat: est.psi_inv_hat,
        psi_ci: [psi_ci.lower, psi_ci.upper],
        n_hat: pop.n_hat,
        n_hat_rounded: pop.n_hat_display(),
        n_ci: [pop.ci_lower, pop.ci_upper],
        sigma_hat_sq: est.sigma_hat_sq,
        variance_source: if borrowed.is_some() { "doubly_robust" } else { "own" },
        tau_hat_sq: pop.tau_hat_sq,
        alpha: opts.alpha,
        nuisance: if opts.external_nuisance {
            "external"
        } else if opts.no_covariates {
            "intercept_only"
        } else {
            "logistic"
        },
        folds: if opts.external_nuisance { 1 } else { opts.folds.max(1) },
        seed: opts.seed,
        diagnostics: DiagnosticsReport {
            clamp_counts: ClampCounts {
                gamma: d.gamma_clamped,
                psi: d.psi_clamped,
                offset: d.offset_clamped,
                separation: d.separation,
            },
            tmle_rounds: d.tmle_rounds,
            tmle_converged: d.tmle_converged,
            one_step_residual: d.one_step_residual,
        },
    })
}

/// Human-readable warnings for the diagnostics stream.
pub fn warnings(report: &EstimateReport) -> Vec<String> {
    let c = &report.diagnostics.clamp_counts;
    let mut out = Vec::new();
    if c.gamma > 0 {
        out.push(format!("{} unit(s) had estimated gamma above 1; clamped to 1", c.gamma));
    }
    if c.psi > 0 {
        out.push("estimated inverse capture probability fell below 1; psi clamped to 1".into());
    }
    if c.offset > 0 {
        out.push(format!("{} TMLE offset(s) floored where q_j - q12 was not positive", c.offset));
    }
    if c.separation > 0 {
        out.push(format!("{} logistic fit(s) hit the separation guard", c.separation));
    }
    if report.diagnostics.tmle_converged == Some(false) {
        out.push("TMLE did not converge; reporting the iterate with the smallest fluctuation".into());
    }
    out
}

pub const SIM_COLUMNS: [&str; 9] = [
    "method",
    "psi_true",
    "n_true",
    "alpha",
    "bias",
    "rmse",
    "coverage",
    "mean_n_hat",
    "reps_used",
];

pub fn write_metrics_csv<W: Write>(rows: &[SimMetrics], writer: W) -> Result<(), InputError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SIM_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.method.as_str().to_string(),
            fmt_f64(r.psi_true),
            r.n_true.to_string(),
            fmt_f64(r.alpha),
            fmt_f64(r.bias),
            fmt_f64(r.rmse),
            fmt_f64(r.coverage),
            fmt_f64(r.mean_n_hat),
            r.reps_used.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::read_capture_csv;

    fn petersen_csv(n1: usize, n2: usize, n12: usize) -> String {
        let mut s = String::from("y1,y2\n");
        s += &"1,1\n".repeat(n12);
        s += &"1,0\n".repeat(n1 - n12);
        s += &"0,1\n".repeat(n2 - n12);
        s
    }

    fn no_covariate_opts(method: Method) -> EstimateOptions {
        EstimateOptions {
            method,
            folds: 1,
            no_covariates: true,
            ..EstimateOptions::default()
        }
    }

    #[test]
    fn toy_table_gives_lincoln_petersen() {
        let input = read_capture_csv(petersen_csv(100, 80, 20).as_bytes()).unwrap();
        let r = run_estimate(&input, &no_covariate_opts(Method::PlugIn)).unwrap();
        assert_eq!(r.n_observed, 160);
        assert!((r.n_hat - 400.0).abs() < 400.0 * 1e-9);
        assert!((r.psi_hat - 0.4).abs() < 1e-12);
        assert_eq!(r.n_hat_rounded, 400);
        assert_eq!(r.variance_source, "doubly_robust");
        assert!(r.sigma_hat_sq.is_none());
        assert!(r.n_ci[0] < 400.0 && 400.0 < r.n_ci[1]);
    }

    #[test]
    fn all_methods_agree_without_covariates() {
        let input = read_capture_csv(petersen_csv(100, 80, 20).as_bytes()).unwrap();
        for method in Method::ALL {
            let r = run_estimate(&input, &no_covariate_opts(method)).unwrap();
            assert!((r.n_hat - 400.0).abs() < 1e-6, "{method}: {}", r.n_hat);
        }
    }

    #[test]
    fn external_nuisances_skip_fitting() {
        let mut s = String::from("y1,y2,x1,q1_hat,q2_hat,q12_hat\n");
        for i in 0..40 {
            let y = ["1,1", "1,0", "0,1"][i % 3];
            s += &format!("{y},{},0.6,0.55,0.3\n", i as f64 / 40.0);
        }
        let input = read_capture_csv(s.as_bytes()).unwrap();
        let opts = EstimateOptions {
            external_nuisance: true,
            ..EstimateOptions::default()
        };
        let r = run_estimate(&input, &opts).unwrap();
        assert_eq!(r.nuisance, "external");
        assert_eq!(r.folds, 1);
        assert!(r.psi_hat > 0.0 && r.psi_hat <= 1.0);
    }

    #[test]
    fn metrics_csv_has_the_documented_columns() {
        let mut buf = Vec::new();
        write_metrics_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim(), SIM_COLUMNS.join(","));
    }
}
