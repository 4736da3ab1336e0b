//! Simulation study: a one-covariate population with two conditionally
//! independent lists, oracle-noise or fitted nuisances, the replication
//! harness and its summary metrics.
//!
//! Covariate `X ~ Uniform(2, 3)`; list `j` captures with probability
//! `expit(a + b_j x)`, `b = (0.4, 0.3)`.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::estimators::{estimate_with, CrossFitConfig, CrossFitNuisances, Pooling, TmleConfig};
use crate::identification::EfficiencyBoundInput;
use crate::inference::population_estimate;
use crate::model::{validate_dataset, CaptureDataset, Method, QProbs};
use crate::numeric::{expit, sum};
use crate::nuisance::{
    oracle_noise_q_probs, truncate, NuisanceConfig, NuisanceSource, OracleNoiseOptions, DEFAULT_TRUNCATION,
};
use crate::rng::{domain, keyed_rng, replication_rng};

pub const SLOPES: [f64; 2] = [0.4, 0.3];
pub const X_RANGE: (f64, f64) = (2.0, 3.0);

/// Intercepts giving capture probabilities of about 0.3, 0.5 and 0.8.
pub const A_VALUES: [f64; 3] = [-2.513, -1.758, -0.66];

/// Noise exponents of the standard grid.
pub const ALPHA_GRID: [f64; 6] = [0.1, 0.2, 0.25, 0.3, 0.4, 0.5];

/// Per-list capture probabilities at covariate `x`.
pub fn capture_probs(x: f64, a: f64) -> (f64, f64) {
    (expit(a + SLOPES[0] * x), expit(a + SLOPES[1] * x))
}

/// True nuisances at `x`: `gamma = 1 - (1 - p1)(1 - p2)`, `q_j = p_j / gamma`,
/// `q12 = p1 p2 / gamma`.
pub fn true_q(x: f64, a: f64) -> Result<QProbs> {
    let (p1, p2) = capture_probs(x, a);
    let gamma = 1.0 - (1.0 - p1) * (1.0 - p2);
    QProbs::from_estimates(p1 / gamma, p2 / gamma, p1 * p2 / gamma)
}

fn gamma_at(x: f64, a: f64) -> f64 {
    let (p1, p2) = capture_probs(x, a);
    1.0 - (1.0 - p1) * (1.0 - p2)
}

/// Composite Simpson nodes and weights on the covariate range; weights sum
/// to 1 (the uniform density is folded in).
fn simpson_nodes(intervals: usize) -> (Vec<f64>, Vec<f64>) {
    let m = intervals + intervals % 2;
    let (lo, hi) = X_RANGE;
    let h = (hi - lo) / m as f64;
    let mut xs = Vec::with_capacity(m + 1);
    let mut ws = Vec::with_capacity(m + 1);
    for i in 0..=m {
        let c = if i == 0 || i == m {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        xs.push(lo + i as f64 * h);
        ws.push(c * h / (3.0 * (hi - lo)));
    }
    (xs, ws)
}

const QUADRATURE_INTERVALS: usize = 2000;

/// Marginal capture probability `E[gamma(X)]`.
pub fn true_psi(a: f64) -> f64 {
    let (xs, ws) = simpson_nodes(QUADRATURE_INTERVALS);
    sum(xs.iter().zip(&ws).map(|(&x, &w)| w * gamma_at(x, a)))
}

/// The observed-data covariate law (density proportional to `gamma`) on a
/// quadrature grid, for evaluating the efficiency bound without sampling.
pub fn observed_bound_input(a: f64) -> Result<EfficiencyBoundInput> {
    let (xs, ws) = simpson_nodes(QUADRATURE_INTERVALS);
    let psi = true_psi(a);
    let samples = xs.iter().map(|&x| true_q(x, a)).collect::<Result<Vec<_>>>()?;
    let mut weights: Vec<f64> = xs.iter().zip(&ws).map(|(&x, &w)| w * gamma_at(x, a) / psi).collect();
    let total = sum(weights.iter().copied());
    for w in &mut weights {
        *w /= total;
    }
    EfficiencyBoundInput::weighted(samples, weights)
}

/// One member of the full population, observed or not.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationUnit {
    pub x: f64,
    pub y1: u8,
    pub y2: u8,
    pub gamma: f64,
    pub q: QProbs,
}

impl PopulationUnit {
    pub fn captured(&self) -> bool {
        self.y1 == 1 || self.y2 == 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub a: f64,
    pub units: Vec<PopulationUnit>,
}

/// Observed units with their true nuisances, aligned with the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedSample {
    pub dataset: CaptureDataset,
    pub truth: Vec<QProbs>,
    pub n_population: usize,
}

/// Draw a population of size `n` from `rng`.
pub fn sample_population<R: Rng + ?Sized>(n: usize, a: f64, rng: &mut R) -> Result<Population> {
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if !a.is_finite() {
        return Err(Error::InvalidConfig(format!("intercept a = {a} is not finite")));
    }
    let (lo, hi) = X_RANGE;
    let mut units = Vec::with_capacity(n);
    for _ in 0..n {
        let x = lo + (hi - lo) * rng.random::<f64>();
        let (p1, p2) = capture_probs(x, a);
        let y1 = u8::from(rng.random::<f64>() < p1);
        let y2 = u8::from(rng.random::<f64>() < p2);
        units.push(PopulationUnit {
            x,
            y1,
            y2,
            gamma: gamma_at(x, a),
            q: true_q(x, a)?,
        });
    }
    Ok(Population { a, units })
}

/// Population of size `n` determined by `seed`.
pub fn generate_population(n: usize, a: f64, seed: u64) -> Result<Population> {
    sample_population(n, a, &mut keyed_rng(seed, domain::REPLICATION))
}

/// Drop uncaptured units.
pub fn observe(population: &Population) -> Result<ObservedSample> {
    if population.units.is_empty() {
        return Err(Error::EmptyInput);
    }
    let kept: Vec<&PopulationUnit> = population.units.iter().filter(|u| u.captured()).collect();
    if kept.is_empty() {
        return Err(Error::AllUnobserved);
    }
    let rows: Vec<([f64; 2], [f64; 1])> = kept
        .iter()
        .map(|u| ([f64::from(u.y1), f64::from(u.y2)], [u.x]))
        .collect();
    Ok(ObservedSample {
        dataset: validate_dataset(&rows)?,
        truth: kept.iter().map(|u| u.q).collect(),
        n_population: population.units.len(),
    })
}

/// Nuisances that keep one member of each product pair of the remainder at
/// the truth and replace its partner by a constant 0.5. The remaining
/// nuisance is derived so that `gamma = q12 / (q1 q2)` holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Misspecification {
    /// True `q1`, `q12`; `q2 = 0.5`, so `gamma` is distorted.
    Q1Q12,
    /// True `q1`, `gamma`; `q2 = 0.5`, `q12 = gamma q1 / 2`.
    Q1Gamma,
    /// True `q2`, `q12`; `q1 = 0.5`, so `gamma` is distorted.
    Q2Q12,
    /// True `q2`, `gamma`; `q1 = 0.5`, `q12 = gamma q2 / 2`.
    Q2Gamma,
}

impl Misspecification {
    pub const ALL: [Misspecification; 4] = [
        Misspecification::Q1Q12,
        Misspecification::Q1Gamma,
        Misspecification::Q2Q12,
        Misspecification::Q2Gamma,
    ];

    pub fn distorts_gamma(self) -> bool {
        matches!(self, Misspecification::Q1Q12 | Misspecification::Q2Q12)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Misspecification::Q1Q12 => "q1_q12",
            Misspecification::Q1Gamma => "q1_gamma",
            Misspecification::Q2Q12 => "q2_q12",
            Misspecification::Q2Gamma => "q2_gamma",
        }
    }

    pub fn apply(self, q: &QProbs) -> Result<QProbs> {
        const FLAT: f64 = 0.5;
        let g = q.gamma();
        match self {
            Misspecification::Q1Q12 => QProbs::from_estimates(q.q1(), FLAT, q.q12()),
            Misspecification::Q1Gamma => QProbs::from_estimates(q.q1(), FLAT, g * q.q1() * FLAT),
            Misspecification::Q2Q12 => QProbs::from_estimates(FLAT, q.q2(), q.q12()),
            Misspecification::Q2Gamma => QProbs::from_estimates(FLAT, q.q2(), g * FLAT * q.q2()),
        }
    }
}

/// Where a replication's nuisances come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SimNuisance {
    /// Truth perturbed on the logit scale at rate `n^-alpha_noise`; exact
    /// when `alpha_noise` is infinite.
    Oracle(OracleNoiseOptions),
    /// Cross-fitted logistic regressions on the covariate.
    Logistic { folds: usize },
    /// Truth with one nuisance of each pair replaced by a constant.
    Misspecified(Misspecification),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_population: usize,
    pub a: f64,
    pub alpha_noise: f64,
    pub n_reps: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    /// Miscoverage level of the population-size interval.
    pub ci_alpha: f64,
    pub nuisance: SimNuisance,
    /// Truncation applied to every nuisance estimate.
    pub epsilon: f64,
    pub tmle: TmleConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_population: 5000,
            a: A_VALUES[1],
            alpha_noise: 0.5,
            n_reps: 200,
            methods: Method::ALL.to_vec(),
            seed: 0,
            ci_alpha: 0.05,
            nuisance: SimNuisance::Oracle(OracleNoiseOptions::default()),
            epsilon: DEFAULT_TRUNCATION,
            tmle: TmleConfig {
                k2_variant: true,
                ..TmleConfig::default()
            },
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidConfig(msg));
        if self.n_reps == 0 {
            return bad("n_reps must be at least 1".into());
        }
        if self.n_population == 0 {
            return bad("population size must be at least 1".into());
        }
        if !self.a.is_finite() {
            return bad(format!("intercept a = {} is not finite", self.a));
        }
        if self.methods.is_empty() {
            return bad("no methods requested".into());
        }
        if !(self.ci_alpha > 0.0 && self.ci_alpha < 1.0) {
            return bad(format!("interval level alpha {} must lie in (0, 1)", self.ci_alpha));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 0.1) {
            return bad(format!("truncation epsilon {} must lie in (0, 0.1]", self.epsilon));
        }
        if matches!(self.nuisance, SimNuisance::Oracle(_)) && !(self.alpha_noise > 0.0) {
            return bad(format!("noise exponent {} must be positive", self.alpha_noise));
        }
        if let SimNuisance::Logistic { folds } = self.nuisance {
            if folds == 0 {
                return bad("folds must be at least 1".into());
            }
        }
        self.tmle.validate()
    }
}

/// One method's result in one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodRecord {
    pub method: Method,
    pub psi_hat: f64,
    pub n_hat: f64,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReplicationOutcome {
    Done {
        rep: usize,
        n_observed: usize,
        records: Vec<MethodRecord>,
    },
    /// Nobody was captured.
    Unobserved { rep: usize },
}

impl ReplicationOutcome {
    pub fn rep(&self) -> usize {
        match self {
            ReplicationOutcome::Done { rep, .. } | ReplicationOutcome::Unobserved { rep } => *rep,
        }
    }
}

fn simulated_nuisances<R: Rng + ?Sized>(
    config: &SimConfig,
    sample: &ObservedSample,
    rng: &mut R,
) -> Result<CrossFitNuisances> {
    let n = sample.dataset.n_observed();
    let trunc = |q: QProbs| {
        QProbs::from_estimates(
            truncate(q.q1(), config.epsilon),
            truncate(q.q2(), config.epsilon),
            truncate(q.q12(), config.epsilon),
        )
    };
    let single = |q: Vec<QProbs>| CrossFitNuisances {
        q,
        labels: alloc::vec![0; n],
        folds: 1,
        separation: 0,
    };
    match config.nuisance {
        SimNuisance::Oracle(options) => {
            let raw = if config.alpha_noise.is_infinite() {
                sample.truth.clone()
            } else {
                oracle_noise_q_probs(&sample.truth, config.alpha_noise, config.n_population, rng, options)?
            };
            Ok(single(raw.into_iter().map(trunc).collect::<Result<Vec<_>>>()?))
        }
        SimNuisance::Misspecified(m) => Ok(single(
            sample
                .truth
                .iter()
                .map(|q| m.apply(q).and_then(trunc))
                .collect::<Result<Vec<_>>>()?,
        )),
        SimNuisance::Logistic { folds } => {
            let cf = CrossFitConfig {
                folds,
                nuisance: NuisanceConfig {
                    source: NuisanceSource::Logistic,
                    epsilon: config.epsilon,
                    seed: rng.random(),
                    ..NuisanceConfig::default()
                },
                tmle: config.tmle.clone(),
                pooling: Pooling::Pooled,
            };
            crate::estimators::cross_fit_nuisances(&sample.dataset, &cf)
        }
    }
}

/// Run replication `rep`. Its randomness depends only on `(seed, rep)`.
pub fn run_replication(config: &SimConfig, rep: usize) -> Result<ReplicationOutcome> {
    config.validate()?;
    let mut rng = replication_rng(config.seed, rep as u64);
    let population = sample_population(config.n_population, config.a, &mut rng)?;
    let sample = match observe(&population) {
        Ok(s) => s,
        Err(Error::AllUnobserved) => return Ok(ReplicationOutcome::Unobserved { rep }),
        Err(e) => return Err(e),
    };
    let nuisances = simulated_nuisances(config, &sample, &mut rng)?;
    let cf = CrossFitConfig {
        tmle: config.tmle.clone(),
        ..CrossFitConfig::default()
    };

    let needs_dr = config.methods.contains(&Method::PlugIn) || config.methods.contains(&Method::DoublyRobust);
    let dr = if needs_dr {
        Some(estimate_with(&sample.dataset, &nuisances, Method::DoublyRobust, &cf)?)
    } else {
        None
    };
    let n_true = config.n_population as f64;
    let mut records = Vec::with_capacity(config.methods.len());
    for &method in &config.methods {
        let est = match (method, &dr) {
            (Method::DoublyRobust, Some(d)) => d.clone(),
            _ => estimate_with(&sample.dataset, &nuisances, method, &cf)?,
        };
        let borrowed = match method {
            Method::PlugIn => dr.as_ref().and_then(|d| d.sigma_hat_sq),
            _ => None,
        };
        let pop = population_estimate(&est, config.ci_alpha, borrowed)?;
        records.push(MethodRecord {
            method,
            psi_hat: est.psi_hat,
            n_hat: pop.n_hat,
            covered: pop.covers(n_true),
        });
    }
    Ok(ReplicationOutcome::Done {
        rep,
        n_observed: sample.dataset.n_observed(),
        records,
    })
}

/// Summary of one method over all usable replications.
#[derive(Debug, Clone, PartialEq)]
pub struct SimMetrics {
    pub method: Method,
    pub psi_true: f64,
    pub n_true: usize,
    pub alpha: f64,
    pub bias: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub mean_n_hat: f64,
    pub reps_used: usize,
}

/// Combine replication outcomes, in any order, into one row per method.
/// Sums run in replication order, so the result does not depend on the
/// order of `outcomes`.
pub fn aggregate(config: &SimConfig, outcomes: &[ReplicationOutcome]) -> Vec<SimMetrics> {
    let psi_true = true_psi(config.a);
    let mut sorted: Vec<&ReplicationOutcome> = outcomes.iter().collect();
    sorted.sort_by_key(|o| o.rep());
    config
        .methods
        .iter()
        .map(|&method| {
            let recs: Vec<&MethodRecord> = sorted
                .iter()
                .filter_map(|o| match o {
                    ReplicationOutcome::Done { records, .. } => records.iter().find(|r| r.method == method),
                    ReplicationOutcome::Unobserved { .. } => None,
                })
                .collect();
            let used = recs.len();
            let denom = used.max(1) as f64;
            let err = |r: &&MethodRecord| r.psi_hat - psi_true;
            let (bias, rmse, coverage, mean_n_hat) = if used == 0 {
                (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
            } else {
                (
                    sum(recs.iter().map(err)) / denom,
                    libm::sqrt(sum(recs.iter().map(|r| err(r) * err(r))) / denom),
                    recs.iter().filter(|r| r.covered).count() as f64 / denom,
                    sum(recs.iter().map(|r| r.n_hat)) / denom,
                )
            };
            SimMetrics {
                method,
                psi_true,
                n_true: config.n_population,
                alpha: config.alpha_noise,
                bias,
                rmse,
                coverage,
                mean_n_hat,
                reps_used: used,
            }
        })
        .collect()
}

/// Run all replications serially and aggregate.
pub fn run_replications(config: &SimConfig) -> Result<Vec<SimMetrics>> {
    config.validate()?;
    let outcomes = (0..config.n_reps)
        .map(|rep| run_replication(config, rep))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(config, &outcomes))
}

/// Variances `n (1/psi - 1)` of the population-size estimate when only two
/// lists are used (`psi_two_list`) and when all lists are used
/// (`psi_all_list`), with the capture probability known.
pub fn variance_comparison(psi_two_list: f64, psi_all_list: f64, n: usize) -> Result<(f64, f64)> {
    for (name, p) in [("psi_two_list", psi_two_list), ("psi_all_list", psi_all_list)] {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::ProbabilityOutOfRange { name, value: p });
        }
    }
    if psi_all_list < psi_two_list {
        return Err(Error::OrderViolation {
            two: psi_two_list,
            all: psi_all_list,
        });
    }
    let n = n as f64;
    Ok((n * (1.0 / psi_two_list - 1.0), n * (1.0 / psi_all_list - 1.0)))
}
