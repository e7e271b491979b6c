//! Pointwise Hotelling statistic and its sup / integral globalizers.
//!
//! For a hypothesis `H η(t) = c(t)` the pointwise statistic is
//!
//! ```text
//! PH(t) = n · (H η̂(t) − c(t))ᵀ (H Λ̂(t,t) Hᵀ)⁺ (H η̂(t) − c(t))
//! ```
//!
//! [`pointwise_hotelling`] evaluates this literally. [`HypothesisBlock`]
//! evaluates the same quantity through a row-space reduction of `H`
//! (see [`PreparedBlock`]), which is what the bootstrap loops use.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::TimeGrid;
use crate::error::{Error, Result};
use crate::estimators::PointwiseEstimates;
use crate::numerics::{self, psd_quadratic_form, psd_quadratic_form_eigen, SymMatrix};

/// How pointwise statistics are collapsed into one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Globalizer {
    /// Maximum over the grid.
    #[serde(rename = "sup")]
    Sup,
    /// Trapezoidal integral over the grid.
    #[serde(rename = "int", alias = "integral")]
    Integral,
}

impl Globalizer {
    pub fn apply(self, ph: &[f64], grid: &TimeGrid) -> Result<f64> {
        match self {
            Globalizer::Sup => Ok(sup_stat(ph)),
            Globalizer::Integral => int_stat(ph, grid),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Globalizer::Sup => "sup",
            Globalizer::Integral => "int",
        }
    }
}

impl std::str::FromStr for Globalizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sup" => Ok(Globalizer::Sup),
            "int" | "integral" => Ok(Globalizer::Integral),
            other => Err(Error::InvalidParameter(format!(
                "unknown globalizer {other:?} (expected sup or int)"
            ))),
        }
    }
}

/// Maximum over grid points.
pub fn sup_stat(ph: &[f64]) -> f64 {
    ph.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Trapezoidal quadrature of `ph` over the grid.
pub fn int_stat(ph: &[f64], grid: &TimeGrid) -> Result<f64> {
    let t = grid.points();
    if t.len() < 2 {
        return Err(Error::GridTooShort(t.len()));
    }
    if ph.len() != t.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} pointwise values for a grid of {} points",
            ph.len(),
            t.len()
        )));
    }
    Ok(ph
        .windows(2)
        .zip(t.windows(2))
        .map(|(v, s)| 0.5 * (v[0] + v[1]) * (s[1] - s[0]))
        .sum())
}

/// `PH(t)` for every grid point, evaluated with the eigendecomposition
/// pseudoinverse of `H Λ̂(t,t) Hᵀ`.
pub fn pointwise_hotelling(
    est: &PointwiseEstimates,
    h: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    let pk = est.p() * est.k();
    let t = est.n_times();
    if h.ncols() != pk {
        return Err(Error::DimensionMismatch(format!(
            "hypothesis matrix has {} columns, expected p·k = {pk}",
            h.ncols()
        )));
    }
    if c.nrows() != h.nrows() || c.ncols() != t {
        return Err(Error::DimensionMismatch(format!(
            "c is {}x{}, expected {}x{t}",
            c.nrows(),
            c.ncols(),
            h.nrows()
        )));
    }
    let n = est.n_total() as f64;
    (0..t)
        .map(|ti| {
            let x = h * est.eta_hat().column(ti) - c.column(ti);
            let m = h * est.lambda(ti) * h.transpose();
            Ok(n * psd_quadratic_form_eigen(&m, x.as_slice())?.value)
        })
        .collect()
}

/// One local hypothesis `H_ℓ η(t) = c_ℓ(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisBlock {
    label: String,
    matrix: DMatrix<f64>,
    /// `None` is the zero function.
    c: Option<DMatrix<f64>>,
}

impl HypothesisBlock {
    /// Rejects matrices of numerical rank zero.
    pub fn new(label: impl Into<String>, matrix: DMatrix<f64>, c: Option<DMatrix<f64>>) -> Result<Self> {
        let label = label.into();
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::BadDimensions(format!("hypothesis {label:?} is empty")));
        }
        if let Some(c) = &c {
            if c.nrows() != matrix.nrows() {
                return Err(Error::DimensionMismatch(format!(
                    "hypothesis {label:?}: c has {} rows, H has {}",
                    c.nrows(),
                    matrix.nrows()
                )));
            }
        }
        let gram = SymMatrix::symmetrized(&matrix * matrix.transpose());
        if matrix.amax() == 0.0 || numerics::numerical_rank(&gram, 0.0)? == 0 {
            return Err(Error::BadDimensions(format!(
                "hypothesis {label:?} has rank 0"
            )));
        }
        Ok(Self { label, matrix, c })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn c(&self) -> Option<&DMatrix<f64>> {
        self.c.as_ref()
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    /// `c` sampled on a grid of `t` points, zero-filled when unset.
    pub fn c_on_grid(&self, t: usize) -> Result<DMatrix<f64>> {
        match &self.c {
            None => Ok(DMatrix::zeros(self.rows(), t)),
            Some(c) if c.ncols() == t => Ok(c.clone()),
            Some(c) => Err(Error::DimensionMismatch(format!(
                "hypothesis {:?}: c has {} grid columns, data has {t}",
                self.label,
                c.ncols()
            ))),
        }
    }

    /// Same block with `c(t) := H η̂(t)`, so that the observed statistic vanishes.
    pub fn fitted_to(&self, est: &PointwiseEstimates) -> Result<Self> {
        let fitted = &self.matrix * est.eta_hat();
        Self::new(self.label.clone(), self.matrix.clone(), Some(fitted))
    }

    pub fn prepare(&self, p: usize, k: usize) -> Result<PreparedBlock> {
        PreparedBlock::new(self, p, k)
    }
}

/// A stack `H = [H₁ᵀ, …, H_Rᵀ]ᵀ` of local hypotheses on the same `η`.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisBlocks {
    blocks: Vec<HypothesisBlock>,
}

impl HypothesisBlocks {
    pub fn new(blocks: Vec<HypothesisBlock>) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::BadDimensions("no hypothesis blocks".into()))?;
        let cols = first.matrix.ncols();
        if let Some(b) = blocks.iter().find(|b| b.matrix.ncols() != cols) {
            return Err(Error::BadDimensions(format!(
                "block {:?} has {} columns, block {:?} has {cols}",
                b.label,
                b.matrix.ncols(),
                first.label
            )));
        }
        Ok(Self { blocks })
    }

    pub fn single(block: HypothesisBlock) -> Self {
        Self { blocks: vec![block] }
    }

    pub fn blocks(&self) -> &[HypothesisBlock] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn labels(&self) -> Vec<String> {
        self.blocks.iter().map(|b| b.label.clone()).collect()
    }

    /// Number of columns, `p·k`.
    pub fn cols(&self) -> usize {
        self.blocks[0].matrix.ncols()
    }

    /// Total row count `r = Σ r_ℓ`.
    pub fn total_rows(&self) -> usize {
        self.blocks.iter().map(HypothesisBlock::rows).sum()
    }

    /// The global matrix and `c`, as a single block.
    pub fn stacked(&self, label: impl Into<String>) -> Result<HypothesisBlock> {
        let r = self.total_rows();
        let cols = self.cols();
        let mut h = DMatrix::zeros(r, cols);
        let mut row = 0;
        for b in &self.blocks {
            h.view_mut((row, 0), (b.rows(), cols)).copy_from(&b.matrix);
            row += b.rows();
        }
        let c = if self.blocks.iter().all(|b| b.c.is_none()) {
            None
        } else {
            let t = self
                .blocks
                .iter()
                .find_map(|b| b.c.as_ref().map(|c| c.ncols()))
                .unwrap_or(0);
            let mut c = DMatrix::zeros(r, t);
            let mut row = 0;
            for b in &self.blocks {
                c.view_mut((row, 0), (b.rows(), t)).copy_from(&b.c_on_grid(t)?);
                row += b.rows();
            }
            Some(c)
        };
        HypothesisBlock::new(label, h, c)
    }

    pub fn fitted_to(&self, est: &PointwiseEstimates) -> Result<Self> {
        Ok(Self {
            blocks: self
                .blocks
                .iter()
                .map(|b| b.fitted_to(est))
                .collect::<Result<_>>()?,
        })
    }

    pub(crate) fn prepare(&self, p: usize, k: usize) -> Result<Vec<PreparedBlock>> {
        if self.cols() != p * k {
            return Err(Error::DimensionMismatch(format!(
                "hypothesis matrices have {} columns, data has p·k = {}",
                self.cols(),
                p * k
            )));
        }
        self.blocks.iter().map(|b| b.prepare(p, k)).collect()
    }
}

/// Pointwise statistic values plus the number of grid points at which
/// `H Λ̂(t,t) Hᵀ` had rank below `rank(H)`. Singularity forced by `H`
/// itself, as for centering contrasts, is not counted.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseStatistic {
    pub values: Vec<f64>,
    pub rank_deficient_points: usize,
}

/// A hypothesis block reduced to its row space.
///
/// With `H Hᵀ = U D Uᵀ` (keeping the `q = rank(H)` nonzero eigenvalues) and
/// `K = Uᵀ H`, one has `H Λ Hᵀ = U (K Λ Kᵀ) Uᵀ` and therefore
/// `(H Λ Hᵀ)⁺ = U (K Λ Kᵀ)⁺ Uᵀ`, so the statistic only needs the `q × q`
/// matrix `K Λ Kᵀ` and the projected residual `K η̂ − Uᵀ c`.
#[derive(Debug, Clone)]
pub struct PreparedBlock {
    reduced: DMatrix<f64>,
    reduced_c: Option<DMatrix<f64>>,
    /// Groups whose columns of `K` are not identically zero.
    active_groups: Vec<usize>,
    p: usize,
}

impl PreparedBlock {
    fn new(block: &HypothesisBlock, p: usize, k: usize) -> Result<Self> {
        let h = &block.matrix;
        let rows = h.nrows();
        let gram = SymMatrix::symmetrized(h * h.transpose());
        let pinv = numerics::sym_pseudo_inverse_with_rank(&gram, 0.0)?;
        let (reduced, reduced_c) = if pinv.rank == rows {
            (h.clone(), block.c.clone())
        } else {
            let eig = nalgebra::SymmetricEigen::new(gram.into_inner());
            let mut order: Vec<usize> = (0..rows).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
            let basis = DMatrix::from_fn(rows, pinv.rank, |r, j| eig.eigenvectors[(r, order[j])]);
            let ut = basis.transpose();
            (&ut * h, block.c.as_ref().map(|c| &ut * c))
        };
        let active_groups = (0..k)
            .filter(|&i| reduced.columns(i * p, p).iter().any(|&v| v != 0.0))
            .collect();
        Ok(Self {
            reduced,
            reduced_c,
            active_groups,
            p,
        })
    }

    /// `PH(t)` on every grid point; with `centered` the residual is
    /// `K η̂(t)` (bootstrap convention, `c ≡ 0`).
    pub fn pointwise(&self, est: &PointwiseEstimates, centered: bool) -> Result<PointwiseStatistic> {
        let q = self.reduced.nrows();
        let p = self.p;
        let n = est.n_total() as f64;
        let mut values = Vec::with_capacity(est.n_times());
        let mut rank_deficient_points = 0;
        let mut residual = DVector::zeros(q);
        let mut gram = DMatrix::zeros(q, q);
        for ti in 0..est.n_times() {
            self.reduced.mul_to(&est.eta_hat().column(ti), &mut residual);
            if !centered {
                if let Some(c) = &self.reduced_c {
                    residual -= c.column(ti);
                }
            }
            gram.fill(0.0);
            for &i in &self.active_groups {
                let ki = self.reduced.columns(i * p, p);
                let tmp = ki * est.lambda_block(ti, i).as_matrix();
                gram.gemm(1.0, &tmp, &ki.transpose(), 1.0);
            }
            let qf = psd_quadratic_form(&gram, residual.as_slice())?;
            if qf.rank < q {
                rank_deficient_points += 1;
            }
            values.push(n * qf.value);
        }
        Ok(PointwiseStatistic {
            values,
            rank_deficient_points,
        })
    }
}

/// Observed statistics `T_n(H_ℓ, c_ℓ)` for every block.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedStatistics {
    pub values: Vec<f64>,
    pub rank_deficient_points: Vec<usize>,
}

pub fn observed_statistics(
    est: &PointwiseEstimates,
    grid: &TimeGrid,
    hb: &HypothesisBlocks,
    globalizer: Globalizer,
) -> Result<ObservedStatistics> {
    for b in hb.blocks() {
        b.c_on_grid(grid.len())?;
    }
    let prepared = hb.prepare(est.p(), est.k())?;
    let mut values = Vec::with_capacity(prepared.len());
    let mut rank_deficient_points = Vec::with_capacity(prepared.len());
    for block in &prepared {
        let ph = block.pointwise(est, false)?;
        values.push(globalizer.apply(&ph.values, grid)?);
        rank_deficient_points.push(ph.rank_deficient_points);
    }
    Ok(ObservedStatistics {
        values,
        rank_deficient_points,
    })
}
