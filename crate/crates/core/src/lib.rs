//! Parametric bootstrap tests for multivariate functional MANOVA under
//! heteroscedasticity.
//!
//! Data are `k` groups of `p`-variate curves observed on a common grid.
//! For a hypothesis `H η(t) = c(t)` the pointwise Hotelling statistic is
//! globalized by its supremum or its integral over the grid, and
//! calibrated by a Gaussian parametric bootstrap. Several hypotheses can
//! be tested jointly with a common local level that controls the
//! family-wise error rate.

pub mod bench;
pub mod bootstrap;
pub mod contrasts;
pub mod dataset;
pub mod error;
pub mod estimators;
pub mod multiplicity;
pub mod numerics;
pub mod rng;
pub mod simulation;
pub mod statistics;

pub use bootstrap::{bootstrap_replicates, global_test, BootstrapReplicates, GlobalTestReport};
pub use contrasts::{build, DesignKind, DesignSpec};
pub use dataset::{FunctionalDataset, Group, TimeGrid};
pub use error::{Error, Result};
pub use estimators::{lambda_hat, PointwiseEstimates};
pub use multiplicity::{compute_beta, fwer_at, multiple_test, TestReport};
pub use statistics::{Globalizer, HypothesisBlock, HypothesisBlocks};

/// Runs `f` on a dedicated pool of `threads` workers; `0` uses rayon's default.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::BadConfig(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}
