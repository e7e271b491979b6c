//! Multiple testing with a common local level `β` calibrated on the joint
//! bootstrap distribution.
//!
//! For a candidate `β` every column `ℓ` gets the empirical `(1 − β)`-quantile
//! `q_ℓ`; the bootstrap family-wise error estimate is the share of
//! replicate rows with at least one `values[b][ℓ] > q_ℓ`. The calibrated
//! level is the largest `β ∈ {0, 1/B, …, (B−1)/B}` whose estimate is `≤ α`.

use serde::Serialize;

use crate::bootstrap::{bootstrap_replicates, BootstrapReplicates};
use crate::dataset::FunctionalDataset;
use crate::error::{Error, Result};
use crate::estimators::lambda_hat;
use crate::numerics::order_statistic_rank;
use crate::statistics::{observed_statistics, Globalizer, HypothesisBlocks};

/// Per-column sorted copies of a replicate matrix.
struct SortedColumns<'a> {
    reps: &'a BootstrapReplicates,
    sorted: Vec<Vec<f64>>,
}

impl<'a> SortedColumns<'a> {
    fn new(reps: &'a BootstrapReplicates) -> Self {
        let sorted = (0..reps.r())
            .map(|l| {
                let mut c = reps.column(l);
                c.sort_by(f64::total_cmp);
                c
            })
            .collect();
        Self { reps, sorted }
    }

    /// Quantiles at level `1 − j/B`, i.e. the `(B − j)`-th order statistics.
    fn quantiles(&self, j: usize) -> Vec<f64> {
        let b = self.reps.b();
        self.sorted.iter().map(|c| c[b - j - 1]).collect()
    }

    fn fwer_for(&self, q: &[f64]) -> f64 {
        let v = self.reps.values();
        let b = self.reps.b();
        let covered = (0..b)
            .filter(|&row| q.iter().enumerate().all(|(l, &ql)| v[(row, l)] <= ql))
            .count();
        (b - covered) as f64 / b as f64
    }

    fn fwer_index(&self, j: usize) -> f64 {
        self.fwer_for(&self.quantiles(j))
    }
}

/// Bootstrap estimate of the family-wise error rate at local level `beta`.
pub fn fwer_at(reps: &BootstrapReplicates, beta: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidParameter(format!("beta must lie in [0, 1), got {beta}")));
    }
    let cols = SortedColumns::new(reps);
    let rank = order_statistic_rank(1.0 - beta, reps.b());
    let q: Vec<f64> = cols.sorted.iter().map(|c| c[rank - 1]).collect();
    Ok(cols.fwer_for(&q))
}

/// Calibrated local level and the quantiles it induces.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub beta: f64,
    /// `beta · B`.
    pub beta_index: usize,
    pub quantiles: Vec<f64>,
    pub fwer_estimate: f64,
}

/// Largest grid level `β` with `fwer_at(β) ≤ α`, found by bisection on the
/// monotone grid.
pub fn calibrate(reps: &BootstrapReplicates, alpha: f64) -> Result<Calibration> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let cols = SortedColumns::new(reps);
    let b = reps.b();
    // Invariant: fwer(lo) <= alpha (true at 0), fwer(hi) > alpha or hi == b.
    let (mut lo, mut hi) = (0usize, b);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if cols.fwer_index(mid) <= alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let quantiles = cols.quantiles(lo);
    let fwer_estimate = cols.fwer_for(&quantiles);
    Ok(Calibration {
        beta: lo as f64 / b as f64,
        beta_index: lo,
        quantiles,
        fwer_estimate,
    })
}

pub fn compute_beta(reps: &BootstrapReplicates, alpha: f64) -> Result<f64> {
    Ok(calibrate(reps, alpha)?.beta)
}

/// Bonferroni decisions from the same replicates: column-wise quantiles at
/// level `1 − α/R`.
pub fn bonferroni_decisions(observed: &[f64], reps: &BootstrapReplicates, alpha: f64) -> Result<Vec<bool>> {
    check_observed(observed, reps)?;
    let level = 1.0 - alpha / reps.r() as f64;
    let rank = order_statistic_rank(level, reps.b());
    Ok(observed
        .iter()
        .enumerate()
        .map(|(l, &obs)| {
            let mut c = reps.column(l);
            c.sort_by(f64::total_cmp);
            obs > c[rank - 1]
        })
        .collect())
}

fn check_observed(observed: &[f64], reps: &BootstrapReplicates) -> Result<()> {
    if observed.len() != reps.r() {
        return Err(Error::DimensionMismatch(format!(
            "{} observed statistics for {} replicate columns",
            observed.len(),
            reps.r()
        )));
    }
    Ok(())
}

/// Decisions of the multiple procedure for given observed statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultipleDecision {
    pub calibration: Calibration,
    pub decisions: Vec<bool>,
    /// Unadjusted per-column fractions `#{b : T*_b ≥ T_obs} / B`.
    pub local_pvalues: Vec<f64>,
}

pub fn decide(observed: &[f64], reps: &BootstrapReplicates, alpha: f64) -> Result<MultipleDecision> {
    check_observed(observed, reps)?;
    let calibration = calibrate(reps, alpha)?;
    let decisions = observed
        .iter()
        .zip(&calibration.quantiles)
        .map(|(o, q)| o > q)
        .collect();
    let b = reps.b() as f64;
    let local_pvalues = observed
        .iter()
        .enumerate()
        .map(|(l, &o)| reps.values().column(l).iter().filter(|&&v| v >= o).count() as f64 / b)
        .collect();
    Ok(MultipleDecision {
        calibration,
        decisions,
        local_pvalues,
    })
}

/// Result of a multiple parametric bootstrap test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestReport {
    pub labels: Vec<String>,
    pub globalizer: Globalizer,
    pub alpha: f64,
    #[serde(rename = "B")]
    pub b: usize,
    pub seed: u64,
    pub observed: Vec<f64>,
    pub beta: f64,
    pub quantiles: Vec<f64>,
    pub decisions: Vec<bool>,
    pub local_pvalues: Vec<f64>,
    pub fwer_estimate: f64,
    pub rank_deficient_points: Vec<usize>,
}

pub fn multiple_test(
    d: &FunctionalDataset,
    hb: &HypothesisBlocks,
    alpha: f64,
    b: usize,
    seed: u64,
    globalizer: Globalizer,
) -> Result<TestReport> {
    if b < 2 {
        return Err(Error::InvalidParameter(format!("B must be at least 2, got {b}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let est = lambda_hat(d)?;
    let observed = observed_statistics(&est, d.grid(), hb, globalizer)?;
    let reps = bootstrap_replicates(d, hb, b, seed, globalizer)?;
    let decision = decide(&observed.values, &reps, alpha)?;
    Ok(TestReport {
        labels: hb.labels(),
        globalizer,
        alpha,
        b,
        seed,
        observed: observed.values,
        beta: decision.calibration.beta,
        quantiles: decision.calibration.quantiles,
        decisions: decision.decisions,
        local_pvalues: decision.local_pvalues,
        fwer_estimate: decision.calibration.fwer_estimate,
        rank_deficient_points: observed.rank_deficient_points,
    })
}
