//! Small dense linear algebra and order statistics.
//!
//! Everything here works on `nalgebra` dynamic matrices. The matrices the
//! tests produce are tiny (at most `p·k` square), so the routines favour
//! clarity and exact reproducibility over blocking tricks.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative asymmetry tolerated by [`SymMatrix::new`] before symmetrizing.
pub const SYMMETRY_RTOL: f64 = 1e-10;

/// Negative eigenvalues down to `-PSD_FLOOR * trace` are treated as round-off.
pub const PSD_FLOOR: f64 = 1e-10;

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_ITER: usize = 10_000;

/// A real symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Wraps a square matrix, replacing it by `(M + Mᵀ)/2`.
    ///
    /// Fails if the asymmetry exceeds [`SYMMETRY_RTOL`] relative to the
    /// largest absolute entry.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                value: m.iter().copied().find(|v| !v.is_finite()).unwrap_or(f64::NAN),
                context: "symmetric matrix entry".into(),
            });
        }
        let scale = m.amax();
        let asym = (&m - m.transpose()).amax();
        if asym > SYMMETRY_RTOL * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidParameter(format!(
                "matrix is not symmetric (max |m - mᵀ| = {asym:e})"
            )));
        }
        Ok(Self::symmetrized(m))
    }

    /// Symmetrizes without checking; for matrices symmetric by construction.
    pub(crate) fn symmetrized(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let eig = sym_eigen(&self.0)?;
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        vals.sort_by(f64::total_cmp);
        Ok(vals)
    }
}

fn sym_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    SymmetricEigen::try_new(m.clone(), EIGEN_EPS, EIGEN_MAX_ITER).ok_or_else(|| {
        Error::EigenFailure(format!(
            "no convergence after {EIGEN_MAX_ITER} iterations on a {}x{} matrix",
            m.nrows(),
            m.ncols()
        ))
    })
}

/// Default relative eigenvalue cut-off, `dim · ε`.
pub fn default_rtol(dim: usize) -> f64 {
    dim.max(1) as f64 * f64::EPSILON
}

fn effective_rtol(dim: usize, rtol: f64) -> f64 {
    if rtol > 0.0 {
        rtol
    } else {
        default_rtol(dim)
    }
}

/// Moore–Penrose pseudoinverse together with the numerical rank it used.
#[derive(Debug, Clone)]
pub struct PseudoInverse {
    pub inverse: SymMatrix,
    pub rank: usize,
}

/// Moore–Penrose pseudoinverse via the symmetric eigendecomposition.
///
/// Eigenvalues with `|λ| ≤ τ·max|λ|` are dropped, where `τ = rtol`, or
/// [`default_rtol`] when `rtol == 0`.
pub fn sym_pseudo_inverse(m: &SymMatrix, rtol: f64) -> Result<SymMatrix> {
    Ok(sym_pseudo_inverse_with_rank(m, rtol)?.inverse)
}

pub fn sym_pseudo_inverse_with_rank(m: &SymMatrix, rtol: f64) -> Result<PseudoInverse> {
    if rtol < 0.0 || !rtol.is_finite() {
        return Err(Error::InvalidParameter(format!("rtol must be >= 0, got {rtol}")));
    }
    let dim = m.dim();
    if dim == 0 {
        return Ok(PseudoInverse {
            inverse: SymMatrix(DMatrix::zeros(0, 0)),
            rank: 0,
        });
    }
    let eig = sym_eigen(&m.0)?;
    let cutoff = effective_rtol(dim, rtol) * eig.eigenvalues.amax();
    let mut out = DMatrix::zeros(dim, dim);
    let mut rank = 0;
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() <= cutoff {
            continue;
        }
        rank += 1;
        let v = eig.eigenvectors.column(i);
        out.ger(1.0 / lambda, &v, &v, 1.0);
    }
    Ok(PseudoInverse {
        inverse: SymMatrix::symmetrized(out),
        rank,
    })
}

/// Numerical rank under the same cut-off as [`sym_pseudo_inverse`].
pub fn numerical_rank(m: &SymMatrix, rtol: f64) -> Result<usize> {
    Ok(sym_pseudo_inverse_with_rank(m, rtol)?.rank)
}

/// Kronecker product; block `(i, j)` of the result is `a[i][j]·b`.
pub fn kronecker(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Value of `xᵀ M⁺ x` for a positive semidefinite `M`, and the rank of `M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticForm {
    pub value: f64,
    pub rank: usize,
}

/// Computes `xᵀ M⁺ x` for symmetric PSD `M` under the default cut-off.
///
/// A Cholesky factorization is tried first. It is accepted only when the
/// bound `λ_min ≥ 1/tr(M⁻¹)` proves that no eigenvalue would fall under
/// the pseudoinverse cut-off, in which case `M⁺ = M⁻¹` and both routes agree.
/// Otherwise the eigendecomposition route is used. Eigenvalues below
/// `-PSD_FLOOR·tr(M)` are reported as an internal-consistency failure.
pub fn psd_quadratic_form(m: &DMatrix<f64>, x: &[f64]) -> Result<QuadraticForm> {
    let dim = m.nrows();
    debug_assert_eq!(dim, x.len());
    let trace = m.trace();
    if dim == 0 || trace <= 0.0 {
        if m.iter().all(|&v| v == 0.0) {
            return Ok(QuadraticForm { value: 0.0, rank: 0 });
        }
        if trace < 0.0 {
            return Err(Error::Numerical(format!(
                "covariance-type matrix has negative trace {trace:e}"
            )));
        }
    }
    if let Some(value) = cholesky_quadratic_form(m, x, trace) {
        return Ok(QuadraticForm { value, rank: dim });
    }
    eigen_quadratic_form(m, x, trace)
}

/// Reference route for [`psd_quadratic_form`]: eigendecomposition only.
pub fn psd_quadratic_form_eigen(m: &DMatrix<f64>, x: &[f64]) -> Result<QuadraticForm> {
    let trace = m.trace();
    if m.nrows() == 0 || m.iter().all(|&v| v == 0.0) {
        return Ok(QuadraticForm { value: 0.0, rank: 0 });
    }
    eigen_quadratic_form(m, x, trace)
}

fn eigen_quadratic_form(m: &DMatrix<f64>, x: &[f64], trace: f64) -> Result<QuadraticForm> {
    let dim = m.nrows();
    let eig = sym_eigen(m)?;
    let floor = -PSD_FLOOR * trace.abs();
    if let Some(&min) = eig.eigenvalues.iter().min_by(|a, b| a.total_cmp(b)) {
        if min < floor {
            return Err(Error::Numerical(format!(
                "matrix expected PSD has eigenvalue {min:e} (trace {trace:e})"
            )));
        }
    }
    let cutoff = default_rtol(dim) * eig.eigenvalues.amax();
    let mut value = 0.0;
    let mut rank = 0;
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        // Round-off negatives are clipped to zero together with the small ones.
        if lambda <= cutoff {
            continue;
        }
        rank += 1;
        let proj: f64 = eig
            .eigenvectors
            .column(i)
            .iter()
            .zip(x)
            .map(|(v, xi)| v * xi)
            .sum();
        value += proj * proj / lambda;
    }
    Ok(QuadraticForm { value, rank })
}

fn cholesky_quadratic_form(m: &DMatrix<f64>, x: &[f64], trace: f64) -> Option<f64> {
    let n = m.nrows();
    // Lower factor, column-major n×n.
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[k * n + j] * l[k * n + j];
        }
        if d.is_nan() || d <= 0.0 {
            return None;
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[k * n + i] * l[k * n + j];
            }
            l[j * n + i] = s / d;
        }
    }

    // tr(M⁻¹) = ‖L⁻¹‖²_F, column by column of L⁻¹.
    let mut inv_trace = 0.0;
    let mut col = vec![0.0; n];
    for c in 0..n {
        col.iter_mut().for_each(|v| *v = 0.0);
        col[c] = 1.0 / l[c * n + c];
        inv_trace += col[c] * col[c];
        for i in (c + 1)..n {
            let mut s = 0.0;
            for k in c..i {
                s -= l[k * n + i] * col[k];
            }
            col[i] = s / l[i * n + i];
            inv_trace += col[i] * col[i];
        }
    }
    let lambda_min_bound = 1.0 / inv_trace;
    if lambda_min_bound.is_nan() || lambda_min_bound <= default_rtol(n) * trace {
        return None;
    }

    // Forward substitution L y = x; the form is ‖y‖².
    let mut y = vec![0.0; n];
    let mut value = 0.0;
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[k * n + i] * y[k];
        }
        y[i] = s / l[i * n + i];
        value += y[i] * y[i];
    }
    Some(value)
}

/// Index (1-based) of the order statistic `⌈level·B⌉`, clamped to `[1, B]`.
///
/// Products within a few ulps of an integer are snapped to it, so that
/// levels such as `1 - j/B` select exactly the `(B - j)`-th statistic.
pub fn order_statistic_rank(level: f64, b: usize) -> usize {
    let x = level * b as f64;
    let nearest = x.round();
    let k = if (x - nearest).abs() <= 8.0 * f64::EPSILON * (b as f64).max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    (k.max(1.0) as usize).min(b)
}

/// Empirical quantile: the `⌈level·B⌉`-th smallest value.
pub fn empirical_quantile(values: &[f64], level: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("empirical quantile of no values".into()));
    }
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "quantile level must lie in (0, 1], got {level}"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[order_statistic_rank(level, sorted.len()) - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_psd(n: usize, rank: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let g = DMatrix::from_fn(n, rank, |_, _| rng.sample::<f64, _>(StandardNormal));
        &g * g.transpose()
    }

    fn close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
        (a - b).amax() <= tol * (1.0 + a.amax().max(b.amax()))
    }

    #[test]
    fn pinv_of_identity_is_identity() {
        let p = sym_pseudo_inverse(&SymMatrix::identity(3), 0.0).unwrap();
        assert_eq!(p.as_matrix(), &DMatrix::<f64>::identity(3, 3));
    }

    #[test]
    fn pinv_of_rank_deficient_diagonal() {
        let p = sym_pseudo_inverse_with_rank(&SymMatrix::from_diagonal(&[2.0, 0.0]), 0.0).unwrap();
        assert_eq!(p.rank, 1);
        assert!((p.inverse.as_matrix()[(0, 0)] - 0.5).abs() < 1e-15);
        assert_eq!(p.inverse.as_matrix()[(1, 1)], 0.0);
        assert_eq!(p.inverse.as_matrix()[(0, 1)], 0.0);
    }

    #[test]
    fn penrose_conditions_on_random_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for rank in 1..=4 {
            let m = random_psd(4, rank, &mut rng);
            let pinv = sym_pseudo_inverse_with_rank(&SymMatrix::new(m.clone()).unwrap(), 0.0).unwrap();
            assert_eq!(pinv.rank, rank);
            let mp = pinv.inverse.as_matrix();
            assert!(close(&(&m * mp * &m), &m, 1e-9));
            assert!(close(&(mp * &m * mp), mp, 1e-9));
            let a = &m * mp;
            assert!(close(&a.transpose(), &a, 1e-9));
            let b = mp * &m;
            assert!(close(&b.transpose(), &b, 1e-9));
        }
    }

    #[test]
    fn pinv_is_an_involution_on_full_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let m = random_psd(5, 5, &mut rng) + DMatrix::identity(5, 5) * 0.1;
            let s = SymMatrix::new(m.clone()).unwrap();
            let back = sym_pseudo_inverse(&sym_pseudo_inverse(&s, 0.0).unwrap(), 0.0).unwrap();
            assert!((back.as_matrix() - &m).amax() <= 1e-8 * m.amax());
        }
    }

    #[test]
    fn symmatrix_rejects_asymmetric_and_non_square() {
        assert!(SymMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 1.0])).is_err());
        assert!(SymMatrix::new(DMatrix::zeros(2, 3)).is_err());
        assert!(sym_pseudo_inverse(&SymMatrix::identity(2), -1.0).is_err());
    }

    #[test]
    fn kronecker_identities() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert_eq!(kronecker(&i2, &i3), DMatrix::<f64>::identity(6, 6));
        let row = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let expected = DMatrix::from_row_slice(
            2,
            4,
            &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0],
        );
        assert_eq!(kronecker(&row, &i2), expected);
    }

    #[test]
    fn kronecker_mixed_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut r = || DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));
        let (a, b, c, d) = (r(), r(), r(), r());
        let lhs = kronecker(&a, &b) * kronecker(&c, &d);
        let rhs = kronecker(&(&a * &c), &(&b * &d));
        assert!((lhs - rhs).amax() < 1e-12);
    }

    #[test]
    fn kronecker_rank_is_multiplicative() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let a = random_psd(3, 3, &mut rng);
        let b = random_psd(2, 2, &mut rng);
        let k = kronecker(&a, &b);
        let rank = numerical_rank(&SymMatrix::new(k).unwrap(), 0.0).unwrap();
        assert_eq!(rank, 6);
        let a1 = random_psd(3, 1, &mut rng);
        let k = kronecker(&a1, &b);
        assert_eq!(numerical_rank(&SymMatrix::new(k).unwrap(), 0.0).unwrap(), 2);
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(empirical_quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.6).unwrap(), 3.0);
        assert_eq!(empirical_quantile(&[7.0; 9], 0.01).unwrap(), 7.0);
        assert_eq!(empirical_quantile(&[7.0; 9], 1.0).unwrap(), 7.0);
        assert!(matches!(empirical_quantile(&[], 0.5), Err(Error::EmptyInput(_))));
        assert!(empirical_quantile(&[1.0], 0.0).is_err());
    }

    #[test]
    fn quantile_of_normal_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let draws: Vec<f64> = (0..1000).map(|_| rng.sample(StandardNormal)).collect();
        // Brute force: sort and index the 950th value directly.
        let mut sorted = draws.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let brute = sorted[949];
        let q = empirical_quantile(&draws, 0.95).unwrap();
        assert_eq!(q, brute);
        assert!((q - 1.645).abs() < 0.15, "q = {q}");
    }

    #[test]
    fn order_statistic_rank_snaps_grid_levels() {
        for b in [5usize, 20, 500, 1000, 999] {
            for j in 0..b {
                let level = 1.0 - j as f64 / b as f64;
                assert_eq!(order_statistic_rank(level, b), b - j);
            }
        }
        assert_eq!(order_statistic_rank(0.95, 100), 95);
    }

    #[test]
    fn quadratic_form_routes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for n in 1..8 {
            for rank in 1..=n {
                let m = random_psd(n, rank, &mut rng);
                // Keep x in the range of M so every generalized inverse agrees.
                let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                let x = &m * DVector::from_vec(z);
                let fast = psd_quadratic_form(&m, x.as_slice()).unwrap();
                let slow = psd_quadratic_form_eigen(&m, x.as_slice()).unwrap();
                assert_eq!(fast.rank, rank);
                assert_eq!(slow.rank, rank);
                assert!(
                    (fast.value - slow.value).abs() <= 1e-7 * slow.value.abs().max(1.0),
                    "{} vs {}",
                    fast.value,
                    slow.value
                );
            }
        }
    }

    #[test]
    fn quadratic_form_flags_indefinite_input() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5]));
        assert!(matches!(
            psd_quadratic_form(&m, &[1.0, 1.0]),
            Err(Error::Numerical(_))
        ));
        let zero = DMatrix::zeros(3, 3);
        assert_eq!(psd_quadratic_form(&zero, &[1.0, 2.0, 3.0]).unwrap().value, 0.0);
    }

    proptest! {
        #[test]
        fn quantile_monotone_and_extremes(mut v in proptest::collection::vec(-1e3f64..1e3, 1..40), a in 0.001f64..1.0, b in 0.001f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(empirical_quantile(&v, lo).unwrap() <= empirical_quantile(&v, hi).unwrap());
            let n = v.len();
            v.sort_by(f64::total_cmp);
            prop_assert_eq!(empirical_quantile(&v, 1.0 / n as f64).unwrap(), v[0]);
            prop_assert_eq!(empirical_quantile(&v, 1.0).unwrap(), v[n - 1]);
        }
    }
}
