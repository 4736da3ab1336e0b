//! Per-unit nuisance estimates `(q1, q2, q12)`: logistic regression fits,
//! the oracle-noise model used in simulations, truncation, and fold
//! machinery for cross-fitting.

mod folds;
mod logistic;

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{CaptureDataset, QProbs};
use crate::numeric::{expit, logit};

pub use folds::{make_folds, FoldAssignment};
pub use logistic::{fit_logistic, FitStatus, LogisticModel, SEPARATION_BOUND};

pub const DEFAULT_TRUNCATION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NuisanceSource {
    /// Three logistic regressions (targets `Y1`, `Y2`, `Y1 Y2`) on the covariates.
    Logistic,
    /// True nuisances perturbed on the logit scale (simulation only).
    OracleNoise,
}

/// How the oracle logit perturbation is shared across units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    /// One draw per nuisance function per replication, shared by all units.
    PerFunction,
    /// Fresh draws for every unit.
    PerUnit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceConfig {
    pub source: NuisanceSource,
    /// Estimates are truncated to `[epsilon, 1 - epsilon]`.
    pub epsilon: f64,
    /// Noise rate exponent: logit errors have mean and sd `n^-alpha`.
    /// `f64::INFINITY` gives exact nuisances.
    pub alpha: f64,
    pub noise_mode: NoiseMode,
    /// Re-derive `q2 = 1 + q12 - q1` when there are exactly two lists.
    pub enforce_k2_identity: bool,
    /// Re-impose `q12 <= min(q1, q2)` on oracle-noise estimates.
    pub recohere: bool,
    /// Fit intercept-only models, ignoring covariates.
    pub intercept_only: bool,
    pub seed: u64,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        Self {
            source: NuisanceSource::Logistic,
            epsilon: DEFAULT_TRUNCATION,
            alpha: 0.5,
            noise_mode: NoiseMode::PerFunction,
            enforce_k2_identity: false,
            recohere: false,
            intercept_only: false,
            seed: 0,
        }
    }
}

impl NuisanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 0.1) {
            return Err(Error::InvalidConfig(format!(
                "truncation epsilon {} must lie in (0, 0.1]",
                self.epsilon
            )));
        }
        if self.source == NuisanceSource::OracleNoise && !(self.alpha > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise exponent alpha {} must be positive",
                self.alpha
            )));
        }
        Ok(())
    }
}

pub fn truncate(p: f64, epsilon: f64) -> f64 {
    p.clamp(epsilon, 1.0 - epsilon)
}

/// Truncate a raw triple and make it coherent: every value in
/// `[eps, 1 - eps]`, `q1 + q2 - 1 <= q12 <= min(q1, q2)`, and optionally the
/// two-list identity `q1 + q2 - q12 = 1` via `q2 = 1 + q12 - q1`.
pub fn coherent_triple(q1: f64, q2: f64, q12: f64, epsilon: f64, k2_identity: bool) -> Result<QProbs> {
    let q1 = truncate(q1, epsilon);
    let mut q2 = truncate(q2, epsilon);
    let floor = (q1 + q2 - 1.0).max(epsilon);
    let q12 = truncate(q12, epsilon).min(q1.min(q2)).max(floor);
    if k2_identity {
        q2 = 1.0 + q12 - q1;
    }
    QProbs::new(q1, q2, q12)
}

/// Nuisance predictions for a set of evaluation rows.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceFit {
    pub q: Vec<QProbs>,
    /// Number of the three fits that hit the separation guard.
    pub separation: usize,
}

/// Fit logistic models for `Y1`, `Y2` and `Y1 Y2` on `train_idx` and predict
/// on `eval_idx`. Predictions are truncated and made coherent by
/// [`coherent_triple`].
pub fn estimate_q_probs(
    dataset: &CaptureDataset,
    train_idx: &[usize],
    eval_idx: &[usize],
    config: &NuisanceConfig,
) -> Result<NuisanceFit> {
    config.validate()?;
    if train_idx.is_empty() || eval_idx.is_empty() {
        return Err(Error::EmptyInput);
    }
    let units = dataset.units();
    let p = if config.intercept_only { 0 } else { dataset.dim() };
    let mut features = Vec::with_capacity(train_idx.len() * p);
    let (mut t1, mut t2, mut t12) = (Vec::new(), Vec::new(), Vec::new());
    for &i in train_idx {
        let u = &units[i];
        features.extend_from_slice(&u.x()[..p]);
        t1.push(u.y1());
        t2.push(u.y2());
        t12.push(u.y1() * u.y2());
    }
    let models = [
        fit_logistic(&features, p, &t1, None, true)?,
        fit_logistic(&features, p, &t2, None, true)?,
        fit_logistic(&features, p, &t12, None, true)?,
    ];
    let separation = models
        .iter()
        .filter(|m| m.status == FitStatus::Separation)
        .count();
    let k2 = config.enforce_k2_identity && dataset.k_lists() == 2;
    let q = eval_idx
        .iter()
        .map(|&i| {
            let x = &units[i].x()[..p];
            coherent_triple(
                models[0].predict(x, 0.0),
                models[1].predict(x, 0.0),
                models[2].predict(x, 0.0),
                config.epsilon,
                k2,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NuisanceFit { q, separation })
}

/// Switches applied after the oracle perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleNoiseOptions {
    pub mode: NoiseMode,
    pub enforce_k2_identity: bool,
    pub recohere: bool,
}

impl Default for OracleNoiseOptions {
    fn default() -> Self {
        Self {
            mode: NoiseMode::PerFunction,
            enforce_k2_identity: false,
            recohere: false,
        }
    }
}

/// Perturb true nuisances as `expit(logit(q) + e)` with
/// `e ~ N(n^-alpha, n^-2alpha)`, drawn independently for `q1`, `q2` and
/// `q12`. `gamma` is recomputed from the perturbed triple.
pub fn oracle_noise_q_probs<R: Rng + ?Sized>(
    true_q: &[QProbs],
    alpha: f64,
    n: usize,
    rng: &mut R,
    options: OracleNoiseOptions,
) -> Result<Vec<QProbs>> {
    if !(alpha > 0.0) || n == 0 {
        return Err(Error::InvalidConfig(format!(
            "oracle noise needs alpha > 0 and n >= 1 (alpha = {alpha}, n = {n})"
        )));
    }
    let rate = libm::pow(n as f64, -alpha);
    let draw = |rng: &mut R| {
        let z: f64 = StandardNormal.sample(rng);
        rate + rate * z
    };
    let shared = match options.mode {
        NoiseMode::PerFunction => Some([draw(rng), draw(rng), draw(rng)]),
        NoiseMode::PerUnit => None,
    };
    true_q
        .iter()
        .map(|q| {
            let [e1, e2, e12] = match shared {
                Some(e) => e,
                None => [draw(rng), draw(rng), draw(rng)],
            };
            let q1 = expit(logit(q.q1()) + e1);
            let mut q2 = expit(logit(q.q2()) + e2);
            let mut q12 = expit(logit(q.q12()) + e12);
            if options.recohere {
                q12 = q12.min(q1.min(q2)).max(q1 + q2 - 1.0);
            }
            if options.enforce_k2_identity {
                q12 = q12.min(q1);
                q2 = 1.0 + q12 - q1;
            }
            QProbs::from_estimates(q1, q2, q12)
        })
        .collect()
}
