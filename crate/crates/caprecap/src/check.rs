//! Self-check suite behind `caprecap check`.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use caprecap_core::estimators::{doubly_robust, tmle, TmleConfig};
use caprecap_core::identification::{dr_summand, efficiency_bound};
use caprecap_core::model::{validate_dataset, Method, QProbs};
use caprecap_core::numeric::{mean, unbiased_variance};
use caprecap_core::nuisance::{oracle_noise_q_probs, truncate, OracleNoiseOptions, DEFAULT_TRUNCATION};
use caprecap_core::rng::{domain, keyed_rng, StreamRng};
use caprecap_core::simulation::{
    observe, observed_bound_input, run_replication, sample_population, true_psi, variance_comparison, ObservedSample,
    SimConfig,
};
use caprecap_core::Result;

use crate::io::InputData;
use crate::parallel::with_threads;
use crate::pipeline::{run_estimate, EstimateOptions};

const A_MID: f64 = -1.758;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    pub quick: bool,
    pub seed: u64,
    pub threads: Option<usize>,
    /// Corrupt one oracle so the suite must fail.
    pub inject_fault: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

fn verdict(name: &'static str, value: f64, threshold: f64, at_most: bool, detail: String) -> CheckResult {
    let passed = if at_most { value <= threshold } else { value >= threshold };
    CheckResult {
        name,
        passed: passed && value.is_finite(),
        value,
        threshold,
        detail,
    }
}

fn stream(seed: u64, check: u64, index: u64) -> StreamRng {
    keyed_rng(seed, domain::CHECK | (check << 40) | index)
}

fn sample(seed: u64, check: u64, index: u64, n: usize, a: f64) -> Result<(ObservedSample, StreamRng)> {
    let mut rng = stream(seed, check, index);
    let s = observe(&sample_population(n, a, &mut rng)?)?;
    Ok((s, rng))
}

fn noisy(s: &ObservedSample, alpha: f64, n: usize, rng: &mut StreamRng) -> Result<Vec<QProbs>> {
    oracle_noise_q_probs(&s.truth, alpha, n, rng, OracleNoiseOptions::default())?
        .into_iter()
        .map(|q| QProbs::from_estimates(truncate(q.q1(), 0.01), truncate(q.q2(), 0.01), truncate(q.q12(), 0.01)))
        .collect()
}

fn petersen_table(n1: usize, n2: usize, n12: usize) -> Result<InputData> {
    let mut rows: Vec<([f64; 2], [f64; 0])> = Vec::new();
    rows.extend((0..n12).map(|_| ([1.0, 1.0], [])));
    rows.extend((0..n1 - n12).map(|_| ([1.0, 0.0], [])));
    rows.extend((0..n2 - n12).map(|_| ([0.0, 1.0], [])));
    Ok(InputData {
        dataset: validate_dataset(&rows)?,
        external: None,
    })
}

/// Whether every empirical frequency of the table lies inside the
/// truncation bounds, so the intercept-only fits are the raw frequencies.
pub fn untruncated((n1, n2, n12): (usize, usize, usize), eps: f64) -> bool {
    let n = (n1 + n2 - n12) as f64;
    [n1, n2, n12].iter().all(|&c| {
        let f = c as f64 / n;
        f >= eps && f <= 1.0 - eps
    })
}

fn no_covariates(method: Method) -> EstimateOptions {
    EstimateOptions {
        method,
        folds: 1,
        no_covariates: true,
        ..EstimateOptions::default()
    }
}

fn petersen(opts: &CheckOptions) -> Result<CheckResult> {
    let mut rng = stream(opts.seed, 1, 0);
    let mut tables = vec![(100usize, 80usize, 20usize)];
    while tables.len() < if opts.quick { 6 } else { 26 } {
        let n12 = rng.random_range(1..60);
        let t = (n12 + rng.random_range(0..200), n12 + rng.random_range(0..200), n12);
        if untruncated(t, DEFAULT_TRUNCATION) {
            tables.push(t);
        }
    }
    let mut worst = 0.0f64;
    for &(n1, n2, n12) in &tables {
        let report = run_estimate(&petersen_table(n1, n2, n12)?, &no_covariates(Method::PlugIn))
            .map_err(|e| caprecap_core::Error::InvalidConfig(e.to_string()))?;
        let mut oracle = (n1 * n2) as f64 / n12 as f64;
        if opts.inject_fault {
            oracle += 1.0;
        }
        worst = worst.max((report.n_hat - oracle).abs() / oracle);
    }
    Ok(verdict(
        "petersen_reduction",
        worst,
        1e-9,
        true,
        format!("max relative |n_hat - n1 n2 / n12| over {} tables", tables.len()),
    ))
}

fn one_step_identity(opts: &CheckOptions) -> Result<CheckResult> {
    let reps = if opts.quick { 6 } else { 60 };
    let worst = (0..reps)
        .into_par_iter()
        .map(|r| {
            let alpha = [0.1, 0.25, 0.5][r % 3];
            let (s, mut rng) = sample(opts.seed, 2, r as u64, 2000, A_MID)?;
            let q = noisy(&s, alpha, 2000, &mut rng)?;
            let est = doubly_robust(s.dataset.units(), &q)?;
            Ok(est.diagnostics.one_step_residual.unwrap_or(f64::NAN).abs())
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(verdict(
        "one_step_identity",
        worst,
        1e-12,
        true,
        format!("max |psi_inv_dr - psi_inv_pi - mean eif| over {reps} noisy fits"),
    ))
}

fn eif_mean_zero(opts: &CheckOptions) -> Result<CheckResult> {
    let reps = if opts.quick { 60 } else { 500 };
    let psi_inv = 1.0 / true_psi(A_MID);
    let hits = (0..reps)
        .into_par_iter()
        .map(|r| {
            let (s, _) = sample(opts.seed, 3, r as u64, 5000, A_MID)?;
            let phi: Vec<f64> = s
                .dataset
                .units()
                .iter()
                .zip(&s.truth)
                .map(|(u, q)| dr_summand(u.y1(), u.y2(), q) - psi_inv)
                .collect();
            let sd = unbiased_variance(&phi).unwrap_or(f64::NAN).sqrt();
            Ok(mean(&phi).abs() <= 4.0 * sd / (phi.len() as f64).sqrt())
        })
        .collect::<Result<Vec<bool>>>()?
        .into_iter()
        .filter(|&h| h)
        .count();
    Ok(verdict(
        "eif_mean_zero",
        hits as f64 / reps as f64,
        0.99,
        false,
        format!("share of {reps} exact-nuisance samples with |mean eif| <= 4 sd/sqrt(N)"),
    ))
}

fn efficiency_bound_check(opts: &CheckOptions) -> Result<CheckResult> {
    let draws = if opts.quick { 200_000 } else { 1_000_000 };
    let bound = efficiency_bound(&observed_bound_input(A_MID)?)?;
    let psi = true_psi(A_MID);
    let mut rng = stream(opts.seed, 4, 0);
    let mut phi = Vec::with_capacity(draws);
    while phi.len() < draws {
        let s = observe(&sample_population(draws, A_MID, &mut rng)?)?;
        phi.extend(
            s.dataset
                .units()
                .iter()
                .zip(&s.truth)
                .map(|(u, q)| dr_summand(u.y1(), u.y2(), q) - 1.0 / psi)
                .take(draws - phi.len()),
        );
    }
    let empirical = unbiased_variance(&phi).unwrap_or(f64::NAN);
    Ok(verdict(
        "efficiency_bound",
        (empirical / bound - 1.0).abs(),
        0.02,
        true,
        format!("closed form {bound:.6} vs Monte Carlo variance {empirical:.6} over {draws} observed draws"),
    ))
}

fn tmle_checks(opts: &CheckOptions) -> Result<Vec<CheckResult>> {
    let reps = if opts.quick { 4 } else { 40 };
    let config = TmleConfig {
        k2_variant: true,
        ..TmleConfig::default()
    };
    let runs = (0..reps)
        .into_par_iter()
        .map(|r| {
            let (s, mut rng) = sample(opts.seed, 5, r as u64, 5000, A_MID)?;
            let q = noisy(&s, 0.25, 5000, &mut rng)?;
            let out = tmle(s.dataset.units(), &q, &config)?;
            let se = (out.estimate.sigma_hat_sq.unwrap_or(f64::NAN) / s.dataset.n_observed() as f64).sqrt();
            let converged = out.estimate.diagnostics.tmle_converged == Some(true);
            let ratio = if converged { out.score_mean.abs() / se } else { f64::INFINITY };
            let dev = out.rounds.iter().map(|r| r.max_k2_deviation).fold(0.0, f64::max);
            let psi = out.estimate.psi_hat;
            Ok((ratio, dev, psi > 0.0 && psi <= 1.0))
        })
        .collect::<Result<Vec<_>>>()?;
    let ratio = runs.iter().map(|r| r.0).fold(0.0, f64::max);
    let dev = runs.iter().map(|r| r.1).fold(0.0, f64::max);
    let in_range = runs.iter().filter(|r| r.2).count();
    Ok(vec![
        verdict(
            "tmle_score_equation",
            ratio,
            1e-3,
            true,
            format!("max |mean eif at q*| / (sd/sqrt(N)) over {reps} fits (infinite if any did not converge)"),
        ),
        verdict(
            "tmle_two_list_identity",
            dev,
            1e-9,
            true,
            "max |q1 + q2 - q12 - 1| over all rounds".into(),
        ),
        verdict(
            "tmle_psi_in_unit_interval",
            in_range as f64 / reps as f64,
            1.0,
            false,
            format!("share of {reps} fits with psi in (0, 1]"),
        ),
    ])
}

fn population_interval_reduction(opts: &CheckOptions) -> Result<CheckResult> {
    let mut rng = stream(opts.seed, 6, 0);
    let mut worst = 0.0f64;
    let tables = if opts.quick { 4 } else { 20 };
    for _ in 0..tables {
        let n12 = rng.random_range(20..200);
        let (n1, n2) = (n12 + rng.random_range(20..400), n12 + rng.random_range(20..400));
        let report = run_estimate(&petersen_table(n1, n2, n12)?, &no_covariates(Method::DoublyRobust))
            .map_err(|e| caprecap_core::Error::InvalidConfig(e.to_string()))?;
        let n = (n1 + n2 - n12) as f64;
        let q12 = n12 as f64 / n;
        let psi = report.psi_hat;
        let wald = 1.959963984540054 * (report.n_hat * (1.0 - psi) / (psi * q12)).sqrt();
        let general = 0.5 * (report.n_ci[1] - report.n_ci[0]);
        worst = worst.max((general / wald - 1.0).abs());
    }
    Ok(verdict(
        "population_interval_reduction",
        worst,
        0.02,
        true,
        format!("max relative gap between general and two-list half-widths over {tables} tables"),
    ))
}

fn variance_order(opts: &CheckOptions) -> Result<CheckResult> {
    let mut rng = stream(opts.seed, 7, 0);
    let mut worst = 0.0f64;
    let mut violations = 0usize;
    for _ in 0..1000 {
        let two: f64 = rng.random_range(1e-3..=1.0);
        let all: f64 = rng.random_range(two..=1.0);
        let n = rng.random_range(1..100_000usize);
        let (v2, vk) = variance_comparison(two, all, n)?;
        if vk > v2 {
            violations += 1;
        }
        for (v, p) in [(v2, two), (vk, all)] {
            let exact = n as f64 * (1.0 / p - 1.0);
            worst = worst.max((v - exact).abs() / exact.abs().max(1.0));
        }
    }
    Ok(verdict(
        "variance_comparison",
        worst + violations as f64,
        1e-12,
        true,
        format!("{violations} order violations; max relative error vs n (1 / psi - 1)"),
    ))
}

fn replication_determinism(opts: &CheckOptions) -> Result<CheckResult> {
    let config = SimConfig {
        n_population: 1500,
        n_reps: 4,
        alpha_noise: 0.25,
        seed: opts.seed,
        ..SimConfig::default()
    };
    let serial: Vec<_> = (0..4).map(|r| run_replication(&config, r)).collect::<Result<_>>()?;
    let parallel: Vec<_> = (0..4usize)
        .into_par_iter()
        .rev()
        .map(|r| run_replication(&config, r))
        .collect::<Result<Vec<_>>>()?;
    let mut parallel = parallel;
    parallel.reverse();
    let same = serial == parallel && run_replication(&config, 2)? == serial[2];
    Ok(verdict(
        "replication_determinism",
        if same { 0.0 } else { 1.0 },
        0.0,
        true,
        "replications rerun alone, serially and in parallel are identical".into(),
    ))
}

pub fn run_checks(opts: &CheckOptions) -> Result<Vec<CheckResult>> {
    with_threads(opts.threads, || {
        let mut out = vec![
            petersen(opts)?,
            one_step_identity(opts)?,
            eif_mean_zero(opts)?,
            efficiency_bound_check(opts)?,
        ];
        out.extend(tmle_checks(opts)?);
        out.push(population_interval_reduction(opts)?);
        out.push(variance_order(opts)?);
        out.push(replication_determinism(opts)?);
        Ok(out)
    })?
}

pub fn render_text(results: &[CheckResult]) -> String {
    let mut s = String::new();
    for r in results {
        s += &format!(
            "{} {:<30} value={} threshold={}  {}\n",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            crate::format::fmt_f64(r.value),
            crate::format::fmt_f64(r.threshold),
            r.detail
        );
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    s += &format!("{} of {} checks passed\n", results.len() - failed, results.len());
    s
}
