//! Capture-recapture estimation of population size from two conditionally
//! independent lists with covariates.
//!
//! The crate is `no_std` (with `alloc`) and carries only the numerical core:
//! identification formulas, the efficient influence function, nuisance
//! estimation (logistic regression and an oracle-noise model for
//! simulation), the plug-in, doubly robust and TMLE estimators, confidence
//! intervals, and the simulation data-generating process. File formats, the
//! parallel replication pool and the command-line tool live in the `caprecap`
//! crate.
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

mod error;
pub mod estimators;
pub mod identification;
pub mod inference;
pub mod model;
pub mod numeric;
pub mod nuisance;
pub mod rng;
pub mod simulation;

pub use error::{Error, Result};
pub use estimators::{
    cross_fit, cross_fit_nuisances, doubly_robust, estimate_with, plug_in, tmle, CrossFitConfig, CrossFitNuisances,
    Pooling, TmleConfig, TmleOutput,
};
pub use inference::{ci_psi, ci_psi_inv, eif_variance, population_estimate, population_interval, ConfidenceInterval, Target};
pub use model::{
    validate_dataset, CaptureDataset, Diagnostics, Method, PopulationEstimate, PsiEstimate, QProbs, UnitRecord,
};
pub use nuisance::{NoiseMode, NuisanceConfig, NuisanceSource, OracleNoiseOptions};
pub use simulation::{SimConfig, SimMetrics};
