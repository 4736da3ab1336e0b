//! Domain types shared by every module.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};

/// Tolerance used when checking probability invariants on estimates.
pub const PROB_TOL: f64 = 1e-12;

/// Unclamped `gamma` above `1 + GAMMA_FLAG_TOL` is counted as a clamp event.
pub const GAMMA_FLAG_TOL: f64 = 1e-8;

/// One observed individual: capture indicators for each list plus covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitRecord {
    y: Vec<u8>,
    x: Vec<f64>,
}

impl UnitRecord {
    pub fn y(&self) -> &[u8] {
        &self.y
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y1(&self) -> f64 {
        f64::from(self.y[0])
    }

    pub fn y2(&self) -> f64 {
        f64::from(self.y[1])
    }
}

/// A validated set of observed units with `k_lists` lists and `dim` covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureDataset {
    units: Vec<UnitRecord>,
    k_lists: usize,
    dim: usize,
}

impl CaptureDataset {
    pub fn units(&self) -> &[UnitRecord] {
        &self.units
    }

    pub fn k_lists(&self) -> usize {
        self.k_lists
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of observed units `N`.
    pub fn n_observed(&self) -> usize {
        self.units.len()
    }

    /// Rows in the form accepted by [`validate_dataset`].
    pub fn to_rows(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.units
            .iter()
            .map(|u| (u.y.iter().map(|&v| f64::from(v)).collect(), u.x.clone()))
            .collect()
    }

    /// Sub-dataset holding the given rows, in the given order.
    pub fn subset(&self, idx: &[usize]) -> CaptureDataset {
        CaptureDataset {
            units: idx.iter().map(|&i| self.units[i].clone()).collect(),
            k_lists: self.k_lists,
            dim: self.dim,
        }
    }
}

/// Build a dataset from raw `(y, x)` rows.
///
/// Rejects empty input, ragged rows, indicators outside {0, 1}, all-zero
/// capture vectors and non-finite covariates. At least two lists are needed.
pub fn validate_dataset<Y, X>(rows: &[(Y, X)]) -> Result<CaptureDataset>
where
    Y: AsRef<[f64]>,
    X: AsRef<[f64]>,
{
    let first = rows.first().ok_or(Error::EmptyDataset)?;
    let k_lists = first.0.as_ref().len();
    let dim = first.1.as_ref().len();
    if k_lists < 2 {
        return Err(Error::TooFewLists(k_lists));
    }

    let mut units = Vec::with_capacity(rows.len());
    for (row, (y, x)) in rows.iter().enumerate() {
        let (y, x) = (y.as_ref(), x.as_ref());
        if y.len() != k_lists {
            return Err(Error::InconsistentWidth {
                row,
                what: "capture",
                expected: k_lists,
                found: y.len(),
            });
        }
        if x.len() != dim {
            return Err(Error::InconsistentWidth {
                row,
                what: "covariate",
                expected: dim,
                found: x.len(),
            });
        }
        let mut bits = Vec::with_capacity(k_lists);
        for (col, &v) in y.iter().enumerate() {
            let bit = if v == 0.0 {
                0
            } else if v == 1.0 {
                1
            } else {
                return Err(Error::NonBinaryIndicator {
                    row,
                    col: col + 1,
                    value: v,
                });
            };
            bits.push(bit);
        }
        if bits.iter().all(|&b| b == 0) {
            return Err(Error::AllZeroCaptureRow { row });
        }
        if let Some(col) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteCovariate { row, col: col + 1 });
        }
        if k_lists == 2 {
            debug_assert!(bits[0] + bits[1] >= 1);
        }
        units.push(UnitRecord {
            y: bits,
            x: x.to_vec(),
        });
    }

    Ok(CaptureDataset {
        units,
        k_lists,
        dim,
    })
}

/// Per-unit nuisance triple under the observed-data distribution, plus the
/// derived conditional capture probability `gamma = q12 / (q1 q2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QProbs {
    q1: f64,
    q2: f64,
    q12: f64,
    gamma: f64,
}

fn check_prob(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 && value <= 1.0 {
        Ok(())
    } else {
        Err(Error::ProbabilityOutOfRange { name, value })
    }
}

impl QProbs {
    /// Coherent triple: each value in (0, 1], `q12 <= min(q1, q2)` and
    /// `q1 + q2 - q12 <= 1`.
    pub fn new(q1: f64, q2: f64, q12: f64) -> Result<Self> {
        let q = Self::from_estimates(q1, q2, q12)?;
        if q12 > q1.min(q2) + PROB_TOL {
            return Err(Error::ProbabilityOutOfRange {
                name: "q12 (exceeds a marginal)",
                value: q12,
            });
        }
        if q1 + q2 - q12 > 1.0 + PROB_TOL {
            return Err(Error::ProbabilityOutOfRange {
                name: "q1 + q2 - q12",
                value: q1 + q2 - q12,
            });
        }
        Ok(q)
    }

    /// Estimated triple that only needs each value in (0, 1]. Joint/marginal
    /// coherence is not enforced; `gamma` is clamped to 1.
    pub fn from_estimates(q1: f64, q2: f64, q12: f64) -> Result<Self> {
        if !(q12 > 0.0) {
            return Err(Error::PositivityViolation(q12));
        }
        check_prob("q1", q1)?;
        check_prob("q2", q2)?;
        check_prob("q12", q12)?;
        Ok(Self {
            q1,
            q2,
            q12,
            gamma: (q12 / (q1 * q2)).min(1.0),
        })
    }

    pub fn q1(&self) -> f64 {
        self.q1
    }

    pub fn q2(&self) -> f64 {
        self.q2
    }

    pub fn q12(&self) -> f64 {
        self.q12
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `q12 / (q1 q2)` before clamping.
    pub fn raw_gamma(&self) -> f64 {
        self.q12 / (self.q1 * self.q2)
    }

    pub fn gamma_was_clamped(&self) -> bool {
        self.raw_gamma() > 1.0 + GAMMA_FLAG_TOL
    }

    /// Probability of appearing on neither list 1 nor list 2 (only possible
    /// with more than two lists), floored at zero.
    pub fn q0(&self) -> f64 {
        (1.0 - self.q1 - self.q2 + self.q12).max(0.0)
    }

    pub fn satisfies_k2_identity(&self, tol: f64) -> bool {
        (self.q1 + self.q2 - self.q12 - 1.0).abs() <= tol
    }

    pub fn is_coherent(&self) -> bool {
        self.q12 <= self.q1.min(self.q2) + PROB_TOL && self.q1 + self.q2 - self.q12 <= 1.0 + PROB_TOL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    PlugIn,
    DoublyRobust,
    Tmle,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::PlugIn, Method::DoublyRobust, Method::Tmle];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::PlugIn => "plug_in",
            Method::DoublyRobust => "doubly_robust",
            Method::Tmle => "tmle",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plug_in" | "pi" => Ok(Method::PlugIn),
            "doubly_robust" | "dr" => Ok(Method::DoublyRobust),
            "tmle" => Ok(Method::Tmle),
            other => Err(Error::InvalidConfig(alloc::format!("unknown method `{other}`"))),
        }
    }
}

/// Counters surfaced alongside an estimate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    /// Units whose estimated `gamma` exceeded 1 and was clamped.
    pub gamma_clamped: usize,
    /// 1 if the inverse capture probability fell below 1 and was clamped.
    pub psi_clamped: usize,
    /// TMLE offsets floored because `q1 - q12` (or `q2 - q12`) was not positive.
    pub offset_clamped: usize,
    /// Logistic nuisance fits that hit the separation guard.
    pub separation: usize,
    pub tmle_rounds: Option<usize>,
    pub tmle_converged: Option<bool>,
    /// `psi_inv_dr - psi_inv_pi - mean(eif at plug-in)`; zero up to rounding.
    pub one_step_residual: Option<f64>,
}

/// Estimated capture probability with influence values and variance.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiEstimate {
    pub method: Method,
    pub n_observed: usize,
    pub psi_hat: f64,
    pub psi_inv_hat: f64,
    /// Estimated efficient influence function values, one per unit; empty for
    /// the plug-in estimator.
    pub eif_values: Vec<f64>,
    /// Unbiased variance of `eif_values`; `None` for the plug-in estimator.
    pub sigma_hat_sq: Option<f64>,
    pub diagnostics: Diagnostics,
}

/// Estimated population size with its confidence interval.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationEstimate {
    pub n_observed: usize,
    pub psi_hat: f64,
    pub n_hat: f64,
    pub tau_hat_sq: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub alpha: f64,
}

impl PopulationEstimate {
    pub fn n_hat_display(&self) -> u64 {
        libm::round(self.n_hat) as u64
    }

    pub fn covers(&self, n: f64) -> bool {
        self.ci_lower <= n && n <= self.ci_upper
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_upper - self.ci_lower)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn minimal_valid_dataset() {
        let rows = vec![
            (vec![1.0, 0.0], vec![0.5]),
            (vec![0.0, 1.0], vec![1.5]),
            (vec![1.0, 1.0], vec![2.5]),
        ];
        let ds = validate_dataset(&rows).unwrap();
        assert_eq!(ds.n_observed(), 3);
        assert_eq!(ds.k_lists(), 2);
        assert_eq!(ds.dim(), 1);
    }

    #[test]
    fn rejects_unobservable_and_non_binary_rows() {
        let zero = vec![(vec![1.0, 0.0], vec![]), (vec![0.0, 0.0], vec![])];
        assert_eq!(
            validate_dataset(&zero),
            Err(Error::AllZeroCaptureRow { row: 1 })
        );
        let two = vec![(vec![2.0, 0.0], Vec::<f64>::new())];
        assert!(matches!(
            validate_dataset(&two),
            Err(Error::NonBinaryIndicator { row: 0, col: 1, .. })
        ));
    }

    #[test]
    fn rejects_empty_ragged_and_non_finite() {
        let empty: Vec<(Vec<f64>, Vec<f64>)> = vec![];
        assert_eq!(validate_dataset(&empty), Err(Error::EmptyDataset));
        let ragged = vec![(vec![1.0, 0.0], vec![1.0]), (vec![1.0, 0.0, 1.0], vec![1.0])];
        assert!(matches!(
            validate_dataset(&ragged),
            Err(Error::InconsistentWidth { row: 1, .. })
        ));
        let nan = vec![(vec![1.0, 0.0], vec![f64::NAN])];
        assert_eq!(
            validate_dataset(&nan),
            Err(Error::NonFiniteCovariate { row: 0, col: 1 })
        );
        let one_list = vec![(vec![1.0], vec![])];
        assert_eq!(validate_dataset(&one_list), Err(Error::TooFewLists(1)));
    }

    #[test]
    fn qprobs_gamma_and_invariants() {
        let q = QProbs::new(0.6, 0.5, 0.1).unwrap();
        assert!((q.gamma() - 0.1 / 0.3).abs() < 1e-15);
        assert!(QProbs::new(0.3, 0.5, 0.4).is_err());
        assert_eq!(
            QProbs::new(0.5, 0.5, 0.0),
            Err(Error::PositivityViolation(0.0))
        );
        let noisy = QProbs::from_estimates(0.4, 0.4, 0.3).unwrap();
        assert_eq!(noisy.gamma(), 1.0);
        assert!(noisy.gamma_was_clamped());
        let k2 = QProbs::new(0.7, 0.5, 0.2).unwrap();
        assert!(k2.satisfies_k2_identity(1e-12));
        assert!(k2.q0() < 1e-15);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("forest".parse::<Method>().is_err());
    }
}
