//! Parametric bootstrap of the globalized statistics.
//!
//! Bootstrap curves for group `i` are drawn as
//! `x*_j = (nᵢ − 1)^{-1/2} Σ_l Y_jl (x_il − x̄ᵢ)` with i.i.d. standard normal
//! `Y_jl`. Conditionally on the data each `x*_j` is a centred Gaussian
//! process whose covariance on the grid is exactly `Γ̂ᵢ`, and no
//! `(p·T) × (p·T)` factorization is needed.
//!
//! Replicate `b` draws group `i` from the substream keyed by `(seed, b, i)`,
//! so the output does not depend on the number of worker threads.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{FunctionalDataset, Group};
use crate::error::{Error, Result};
use crate::estimators::{lambda_hat, PointwiseEstimates};
use crate::numerics::empirical_quantile;
use crate::rng::{substream, Domain};
use crate::statistics::{observed_statistics, Globalizer, HypothesisBlock, HypothesisBlocks};

fn centered(g: &Group) -> DMatrix<f64> {
    let mut x = g.curves().clone();
    for mut col in x.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    x
}

fn draw_from_centered<R: Rng + ?Sized>(centered: &DMatrix<f64>, rng: &mut R) -> DMatrix<f64> {
    let n = centered.nrows();
    // Row j holds the weights of bootstrap subject j, drawn in row order.
    let mut weights = DMatrix::zeros(n, n);
    for j in 0..n {
        for l in 0..n {
            weights[(j, l)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    weights * centered * (1.0 / ((n - 1) as f64).sqrt())
}

/// `nᵢ` bootstrap curves for one group, as an `nᵢ × (p·T)` matrix laid out
/// like [`Group::curves`].
pub fn draw_bootstrap_group<R: Rng + ?Sized>(g: &Group, rng: &mut R) -> Result<DMatrix<f64>> {
    if g.size() < 2 {
        return Err(Error::GroupTooSmall {
            group: g.label().to_string(),
            size: g.size(),
        });
    }
    Ok(draw_from_centered(&centered(g), rng))
}

/// `B × R` bootstrap statistics; row `b` comes from a single joint draw.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapReplicates {
    values: DMatrix<f64>,
    seed: u64,
    globalizer: Globalizer,
}

impl BootstrapReplicates {
    /// Wraps precomputed values; every entry must be finite and nonnegative.
    pub fn from_values(values: DMatrix<f64>, seed: u64, globalizer: Globalizer) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::EmptyInput("replicate matrix is empty".into()));
        }
        if let Some(&v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Numerical(format!(
                "bootstrap statistic {v} is not a finite nonnegative number"
            )));
        }
        Ok(Self {
            values,
            seed,
            globalizer,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], seed: u64, globalizer: Globalizer) -> Result<Self> {
        let r = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != r) {
            return Err(Error::DimensionMismatch("ragged replicate rows".into()));
        }
        Self::from_values(DMatrix::from_fn(rows.len(), r, |b, l| rows[b][l]), seed, globalizer)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Number of replicates `B`.
    pub fn b(&self) -> usize {
        self.values.nrows()
    }

    /// Number of hypothesis blocks `R`.
    pub fn r(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, l: usize) -> Vec<f64> {
        self.values.column(l).iter().copied().collect()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn globalizer(&self) -> Globalizer {
        self.globalizer
    }
}

/// Draws `B` joint replicates of `(T*(H_ℓ))_ℓ`.
///
/// Each replicate re-estimates `η̂*` and `Λ̂*` from the bootstrap curves and
/// evaluates every block with `c ≡ 0`.
pub fn bootstrap_replicates(
    d: &FunctionalDataset,
    hb: &HypothesisBlocks,
    b: usize,
    seed: u64,
    globalizer: Globalizer,
) -> Result<BootstrapReplicates> {
    if b == 0 {
        return Err(Error::InvalidParameter("B must be at least 1".into()));
    }
    let (p, t) = (d.p(), d.n_times());
    let prepared = hb.prepare(p, d.k())?;
    let sources: Vec<DMatrix<f64>> = d.groups().iter().map(centered).collect();
    let grid = d.grid();

    let rows: Vec<Vec<f64>> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let draws: Vec<DMatrix<f64>> = sources
                .iter()
                .enumerate()
                .map(|(i, src)| {
                    let mut rng = substream(seed, Domain::Bootstrap, &[rep as u64, i as u64]);
                    draw_from_centered(src, &mut rng)
                })
                .collect();
            let refs: Vec<&DMatrix<f64>> = draws.iter().collect();
            let est = PointwiseEstimates::from_curves(&refs, p, t)?;
            prepared
                .iter()
                .map(|block| globalizer.apply(&block.pointwise(&est, true)?.values, grid))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    BootstrapReplicates::from_rows(&rows, seed, globalizer)
}

/// Outcome of the global test `1{T_n > Q*(1 − α)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GlobalDecision {
    /// Fraction of replicates `≥` the observed statistic.
    pub p_value: f64,
    pub quantile: f64,
    pub reject: bool,
}

pub fn global_pvalue(observed: f64, column: &[f64], alpha: f64) -> Result<GlobalDecision> {
    if column.is_empty() {
        return Err(Error::EmptyInput("bootstrap column is empty".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let quantile = empirical_quantile(column, 1.0 - alpha)?;
    let exceed = column.iter().filter(|&&v| v >= observed).count();
    Ok(GlobalDecision {
        p_value: exceed as f64 / column.len() as f64,
        quantile,
        reject: observed > quantile,
    })
}

/// Result of a global parametric bootstrap test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlobalTestReport {
    pub hypothesis: String,
    pub globalizer: Globalizer,
    pub alpha: f64,
    #[serde(rename = "B")]
    pub b: usize,
    pub seed: u64,
    pub observed: f64,
    pub quantile: f64,
    pub p_value: f64,
    pub reject: bool,
    pub rank_deficient_points: usize,
}

/// Global test of a single hypothesis block.
pub fn global_test(
    d: &FunctionalDataset,
    block: &HypothesisBlock,
    alpha: f64,
    b: usize,
    seed: u64,
    globalizer: Globalizer,
) -> Result<GlobalTestReport> {
    let hb = HypothesisBlocks::single(block.clone());
    let est = lambda_hat(d)?;
    let observed = observed_statistics(&est, d.grid(), &hb, globalizer)?;
    let reps = bootstrap_replicates(d, &hb, b, seed, globalizer)?;
    let decision = global_pvalue(observed.values[0], &reps.column(0), alpha)?;
    Ok(GlobalTestReport {
        hypothesis: block.label().to_string(),
        globalizer,
        alpha,
        b,
        seed,
        observed: observed.values[0],
        quantile: decision.quantile,
        p_value: decision.p_value,
        reject: decision.reject,
        rank_deficient_points: observed.rank_deficient_points[0],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::TimeGrid;
    use crate::estimators::group_cov;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_dataset() -> FunctionalDataset {
        let g1 = Group::from_nested(
            "a",
            &[vec![vec![0.0, 1.0, 2.0]], vec![vec![1.0, 0.5, 1.0]], vec![vec![2.0, 2.0, -1.0]]],
        )
        .unwrap();
        let g2 = Group::from_nested(
            "b",
            &[vec![vec![1.0, 1.0, 0.0]], vec![vec![0.0, 3.0, 1.0]], vec![vec![-1.0, 0.0, 2.0]]],
        )
        .unwrap();
        FunctionalDataset::new(TimeGrid::uniform(3).unwrap(), vec![g1, g2]).unwrap()
    }

    fn difference_blocks() -> HypothesisBlocks {
        HypothesisBlocks::single(
            HypothesisBlock::new("a-b", DMatrix::from_row_slice(1, 2, &[-1.0, 1.0]), None).unwrap(),
        )
    }

    #[test]
    fn identical_subjects_give_zero_draws() {
        let g = Group::from_nested("g", &vec![vec![vec![1.0, 2.0], vec![3.0, 4.0]]; 4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draw = draw_bootstrap_group(&g, &mut rng).unwrap();
        assert!(draw.iter().all(|&v| v == 0.0));
        let small = Group::from_nested("g", &[vec![vec![1.0]]]).unwrap();
        assert!(draw_bootstrap_group(&small, &mut rng).is_err());
    }

    #[test]
    fn draws_are_reproducible() {
        let d = tiny_dataset();
        let a = draw_bootstrap_group(&d.groups()[0], &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = draw_bootstrap_group(&d.groups()[0], &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn two_point_group_variance_matches_gamma() {
        // Curves c and -c: Γ̂ = 2c² on the diagonal.
        let c = [1.5, -0.5];
        let g = Group::from_nested("g", &[vec![c.to_vec()], vec![c.iter().map(|v| -v).collect()]]).unwrap();
        let gamma = group_cov(&g, 0, 0).unwrap()[(0, 0)];
        assert!((gamma - 2.0 * c[0] * c[0]).abs() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let mut count = 0.0;
        for _ in 0..5000 {
            let d = draw_bootstrap_group(&g, &mut rng).unwrap();
            for j in 0..2 {
                let v = d[(j, 0)];
                sum += v;
                sumsq += v * v;
                count += 1.0;
            }
        }
        let var = sumsq / count - (sum / count).powi(2);
        assert!((var - gamma).abs() / gamma < 0.05, "var {var} vs {gamma}");
    }

    #[test]
    fn bootstrap_mean_is_centred() {
        let d = tiny_dataset();
        let g = &d.groups()[1];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let reps = 2000;
        let n = g.size();
        let mut sum = DMatrix::zeros(n, 3);
        for _ in 0..reps {
            sum += draw_bootstrap_group(g, &mut rng).unwrap();
        }
        let total = (reps * n) as f64;
        for col in 0..3 {
            let mean = sum.column(col).sum() / total;
            let sd = group_cov(g, col, col).unwrap()[(0, 0)].sqrt();
            assert!(mean.abs() < 5.0 * sd / total.sqrt(), "col {col}: {mean}");
        }
    }

    #[test]
    fn constant_data_give_zero_replicates() {
        let g = Group::from_nested("g", &vec![vec![vec![1.0, 2.0]]; 3]).unwrap();
        let h = Group::from_nested("h", &vec![vec![vec![-1.0, 0.5]]; 4]).unwrap();
        let d = FunctionalDataset::new(TimeGrid::uniform(2).unwrap(), vec![g, h]).unwrap();
        let reps = bootstrap_replicates(&d, &difference_blocks(), 20, 1, Globalizer::Sup).unwrap();
        assert!(reps.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_blocks_give_identical_columns() {
        let d = tiny_dataset();
        let block = difference_blocks().blocks()[0].clone();
        let hb = HypothesisBlocks::new(vec![block.clone(), block.clone(), block]).unwrap();
        let reps = bootstrap_replicates(&d, &hb, 50, 5, Globalizer::Integral).unwrap();
        for b in 0..50 {
            assert_eq!(reps.values()[(b, 0)], reps.values()[(b, 1)]);
            assert_eq!(reps.values()[(b, 0)], reps.values()[(b, 2)]);
        }
    }

    #[test]
    fn replicates_do_not_depend_on_thread_count() {
        let d = tiny_dataset();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| bootstrap_replicates(&d, &difference_blocks(), 64, 77, Globalizer::Sup).unwrap())
        };
        let one = run(1);
        assert_eq!(one, run(2));
        assert_eq!(one, run(4));
        assert_ne!(one, bootstrap_replicates(&d, &difference_blocks(), 64, 78, Globalizer::Sup).unwrap());
    }

    #[test]
    fn pvalue_examples() {
        let d = global_pvalue(5.0, &[1.0, 2.0, 3.0, 4.0], 0.05).unwrap();
        assert!(d.reject);
        assert_eq!(d.p_value, 0.0);

        let d = global_pvalue(4.0, &[1.0, 2.0, 3.0, 4.0], 0.05).unwrap();
        assert!(!d.reject);
        assert!(d.p_value >= 0.25);

        let column: Vec<f64> = (1..=100).map(f64::from).collect();
        let d = global_pvalue(96.0, &column, 0.05).unwrap();
        // Brute force: sorted column, 95th entry; count of values >= 96.
        assert_eq!(d.quantile, column[94]);
        assert!(d.reject);
        assert_eq!(d.p_value, column.iter().filter(|&&v| v >= 96.0).count() as f64 / 100.0);
        assert_eq!(d.p_value, 0.05);

        assert!(matches!(global_pvalue(1.0, &[], 0.05), Err(Error::EmptyInput(_))));
        assert!(global_pvalue(1.0, &[1.0], 1.0).is_err());
    }

    #[test]
    fn replicate_validation() {
        assert!(BootstrapReplicates::from_rows(&[vec![1.0], vec![-1.0]], 0, Globalizer::Sup).is_err());
        assert!(BootstrapReplicates::from_rows(&[vec![1.0], vec![1.0, 2.0]], 0, Globalizer::Sup).is_err());
        assert!(BootstrapReplicates::from_rows(&[], 0, Globalizer::Sup).is_err());
    }
}
