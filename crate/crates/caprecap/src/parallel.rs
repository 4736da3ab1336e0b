//! Replication pool. Each replication draws from its own keyed stream and the
//! outcomes are aggregated in replication order, so results do not depend on
//! the thread count.

use rayon::prelude::*;

use caprecap_core::simulation::{aggregate, run_replication, ReplicationOutcome, SimConfig, SimMetrics};
use caprecap_core::{Error, Result};

/// Run `f` on a pool with `threads` workers (`None`: rayon's default).
pub fn with_threads<T, F>(threads: Option<usize>, f: F) -> Result<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::InvalidConfig("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Replication outcomes on the current pool.
pub fn replicate(config: &SimConfig) -> Result<Vec<ReplicationOutcome>> {
    config.validate()?;
    (0..config.n_reps)
        .into_par_iter()
        .map(|rep| run_replication(config, rep))
        .collect()
}

pub fn run_replications(config: &SimConfig, threads: Option<usize>) -> Result<Vec<SimMetrics>> {
    let outcomes = with_threads(threads, || replicate(config))??;
    Ok(aggregate(config, &outcomes))
}

/// Several configurations sharing one pool; rows in configuration order.
pub fn run_grid(configs: &[SimConfig], threads: Option<usize>) -> Result<Vec<SimMetrics>> {
    let per_config = with_threads(threads, || {
        configs
            .par_iter()
            .map(|c| replicate(c).map(|o| aggregate(c, &o)))
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(per_config.into_iter().flatten().collect())
}
