//! Group mean functions, group covariance functions and the pooled
//! block-diagonal `Λ̂(t,t) = ⊕ᵢ (n/nᵢ)·Γ̂ᵢ(t,t)`.

use nalgebra::DMatrix;

use crate::dataset::{FunctionalDataset, Group};
use crate::error::{Error, Result};
use crate::numerics::SymMatrix;

/// Mean over subjects, as a `p × T` array.
pub fn group_mean(g: &Group) -> DMatrix<f64> {
    let (p, t) = (g.n_vars(), g.n_times());
    let means = column_means(g.curves());
    DMatrix::from_fn(p, t, |m, ti| means[m * t + ti])
}

fn column_means(curves: &DMatrix<f64>) -> Vec<f64> {
    let n = curves.nrows() as f64;
    curves.column_iter().map(|c| c.sum() / n).collect()
}

/// Sample cross-covariance `Γ̂(tᵢ, tⱼ)` of one group with divisor `nᵢ - 1`.
pub fn group_cov(g: &Group, ti: usize, tj: usize) -> Result<DMatrix<f64>> {
    let n = g.size();
    if n < 2 {
        return Err(Error::GroupTooSmall {
            group: g.label().to_string(),
            size: n,
        });
    }
    let (p, t) = (g.n_vars(), g.n_times());
    if ti >= t || tj >= t {
        return Err(Error::DimensionMismatch(format!(
            "grid indices ({ti}, {tj}) out of range for T = {t}"
        )));
    }
    let x = g.curves();
    let means = column_means(x);
    let mut cov = DMatrix::zeros(p, p);
    for a in 0..p {
        let ca = a * t + ti;
        for b in 0..p {
            let cb = b * t + tj;
            let s: f64 = (0..n)
                .map(|j| (x[(j, ca)] - means[ca]) * (x[(j, cb)] - means[cb]))
                .sum();
            cov[(a, b)] = s / (n - 1) as f64;
        }
    }
    Ok(cov)
}

/// Stacked group means and the diagonal blocks of `Λ̂(t,t)` on the grid.
#[derive(Debug, Clone)]
pub struct PointwiseEstimates {
    p: usize,
    /// `(p·k) × T`; rows `i·p .. (i+1)·p` hold group `i`.
    eta_hat: DMatrix<f64>,
    /// `lambda_blocks[t][i] = (n/nᵢ)·Γ̂ᵢ(t,t)`.
    lambda_blocks: Vec<Vec<SymMatrix>>,
    n_total: usize,
    group_sizes: Vec<usize>,
}

impl PointwiseEstimates {
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn k(&self) -> usize {
        self.group_sizes.len()
    }

    pub fn n_times(&self) -> usize {
        self.eta_hat.ncols()
    }

    pub fn eta_hat(&self) -> &DMatrix<f64> {
        &self.eta_hat
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.group_sizes
    }

    pub fn lambda_block(&self, t: usize, group: usize) -> &SymMatrix {
        &self.lambda_blocks[t][group]
    }

    /// The full `pk × pk` direct sum at grid index `t`.
    pub fn lambda(&self, t: usize) -> DMatrix<f64> {
        let (p, k) = (self.p, self.k());
        let mut out = DMatrix::zeros(p * k, p * k);
        for (i, block) in self.lambda_blocks[t].iter().enumerate() {
            out.view_mut((i * p, i * p), (p, p)).copy_from(block.as_matrix());
        }
        out
    }

    /// Estimates from raw `nᵢ × (p·T)` curve matrices, one per group.
    pub(crate) fn from_curves(curves: &[&DMatrix<f64>], p: usize, t: usize) -> Result<Self> {
        let group_sizes: Vec<usize> = curves.iter().map(|c| c.nrows()).collect();
        let n_total: usize = group_sizes.iter().sum();
        let k = curves.len();
        let mut eta_hat = DMatrix::zeros(p * k, t);
        let mut lambda_blocks: Vec<Vec<SymMatrix>> = (0..t).map(|_| Vec::with_capacity(k)).collect();
        let mut centered = vec![0.0; p];

        for (i, x) in curves.iter().enumerate() {
            let n = x.nrows();
            if n < 2 {
                return Err(Error::GroupTooSmall {
                    group: format!("#{i}"),
                    size: n,
                });
            }
            let means = column_means(x);
            for m in 0..p {
                for ti in 0..t {
                    eta_hat[(i * p + m, ti)] = means[m * t + ti];
                }
            }
            let weight = n_total as f64 / n as f64 / (n - 1) as f64;
            for (ti, blocks) in lambda_blocks.iter_mut().enumerate() {
                let mut acc = DMatrix::<f64>::zeros(p, p);
                for j in 0..n {
                    for (m, c) in centered.iter_mut().enumerate() {
                        let col = m * t + ti;
                        *c = x[(j, col)] - means[col];
                    }
                    for b in 0..p {
                        let cb = centered[b];
                        for a in b..p {
                            acc[(a, b)] += centered[a] * cb;
                        }
                    }
                }
                for b in 0..p {
                    for a in b..p {
                        let v = acc[(a, b)] * weight;
                        acc[(a, b)] = v;
                        acc[(b, a)] = v;
                    }
                }
                blocks.push(SymMatrix::symmetrized(acc));
            }
        }
        Ok(Self {
            p,
            eta_hat,
            lambda_blocks,
            n_total,
            group_sizes,
        })
    }
}

/// Pointwise estimates `η̂(t)` and `Λ̂(t,t)` for every grid point.
pub fn lambda_hat(d: &FunctionalDataset) -> Result<PointwiseEstimates> {
    let curves: Vec<&DMatrix<f64>> = d.groups().iter().map(Group::curves).collect();
    PointwiseEstimates::from_curves(&curves, d.p(), d.n_times())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::TimeGrid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_group(n: usize, p: usize, t: usize, rng: &mut impl Rng) -> Group {
        let curves: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|_| (0..p).map(|_| (0..t).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect())
            .collect();
        Group::from_nested("g", &curves).unwrap()
    }

    #[test]
    fn mean_of_single_subject_is_that_subject() {
        let g = Group::from_nested("g", &[vec![vec![1.0, 2.0], vec![3.0, 4.0]]]).unwrap();
        assert_eq!(group_mean(&g), DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    }

    #[test]
    fn mean_of_opposite_curves_is_zero() {
        let c = vec![vec![1.5, -2.0, 0.25]];
        let neg: Vec<Vec<f64>> = c.iter().map(|v| v.iter().map(|x| -x).collect()).collect();
        let g = Group::from_nested("g", &[c, neg]).unwrap();
        assert!(group_mean(&g).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mean_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random_group(5, 2, 3, &mut rng);
        let mean = group_mean(&g);
        for m in 0..2 {
            for t in 0..3 {
                let mut s = 0.0;
                for j in 0..5 {
                    s += g.value(j, m, t);
                }
                assert!((mean[(m, t)] - s / 5.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn cov_examples() {
        let same = Group::from_nested("g", &[vec![vec![1.0, 2.0]], vec![vec![1.0, 2.0]]]).unwrap();
        assert!(group_cov(&same, 0, 1).unwrap().iter().all(|&v| v == 0.0));

        let two = Group::from_nested("g", &[vec![vec![0.0]], vec![vec![2.0]]]).unwrap();
        assert_eq!(group_cov(&two, 0, 0).unwrap()[(0, 0)], 2.0);

        let one = Group::from_nested("g", &[vec![vec![0.0]]]).unwrap();
        assert!(matches!(group_cov(&one, 0, 0), Err(Error::GroupTooSmall { .. })));
        assert!(group_cov(&two, 0, 1).is_err());
    }

    #[test]
    fn cov_matches_double_loop_and_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = random_group(6, 2, 4, &mut rng);
        for ti in 0..4 {
            let cov = group_cov(&g, ti, ti).unwrap();
            let mut oracle = [[0.0; 2]; 2];
            for a in 0..2 {
                for b in 0..2 {
                    let ma: f64 = (0..6).map(|j| g.value(j, a, ti)).sum::<f64>() / 6.0;
                    let mb: f64 = (0..6).map(|j| g.value(j, b, ti)).sum::<f64>() / 6.0;
                    for j in 0..6 {
                        oracle[a][b] += (g.value(j, a, ti) - ma) * (g.value(j, b, ti) - mb);
                    }
                    oracle[a][b] /= 5.0;
                    assert!((cov[(a, b)] - oracle[a][b]).abs() < 1e-12);
                }
            }
            let eig = SymMatrix::new(cov.clone()).unwrap().eigenvalues().unwrap();
            assert!(eig[0] >= -1e-10 * cov.trace());
        }
        for ti in 0..4 {
            for tj in 0..4 {
                assert_eq!(group_cov(&g, ti, tj).unwrap(), group_cov(&g, tj, ti).unwrap().transpose());
            }
        }
    }

    #[test]
    fn cov_is_translation_invariant_and_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_group(7, 3, 2, &mut rng);
        let shift: Vec<f64> = (0..6).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let mut shifted = g.curves().clone();
        for (col, mut c) in shifted.column_iter_mut().enumerate() {
            c.add_scalar_mut(shift[col]);
        }
        let gs = g.with_curves(shifted);
        for t in 0..2 {
            let d = group_cov(&g, t, t).unwrap() - group_cov(&gs, t, t).unwrap();
            assert!(d.amax() < 1e-12 * 50.0 * 50.0);
        }

        let d = FunctionalDataset::new(TimeGrid::uniform(2).unwrap(), vec![g.clone()]).unwrap();
        let s = DMatrix::from_fn(3, 2, |m, t| 0.5 + m as f64 + 0.25 * t as f64);
        let scaled = d.apply_scaling(&s).unwrap();
        for t in 0..2 {
            let before = group_cov(&g, t, t).unwrap();
            let after = group_cov(&scaled.groups()[0], t, t).unwrap();
            for a in 0..3 {
                for b in 0..3 {
                    let expect = before[(a, b)] * s[(a, t)] * s[(b, t)];
                    assert!((after[(a, b)] - expect).abs() < 1e-12 * (1.0 + expect.abs()));
                }
            }
        }
    }

    #[test]
    fn lambda_for_single_group_is_gamma() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = random_group(4, 2, 3, &mut rng);
        let d = FunctionalDataset::new(TimeGrid::uniform(3).unwrap(), vec![g.clone()]).unwrap();
        let est = lambda_hat(&d).unwrap();
        for t in 0..3 {
            let diff = est.lambda(t) - group_cov(&g, t, t).unwrap();
            assert!(diff.amax() < 1e-14);
        }
        assert_eq!(est.eta_hat().column(1).as_slice(), group_mean(&g).column(1).as_slice());
    }

    #[test]
    fn lambda_identical_groups_give_equal_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_group(3, 2, 2, &mut rng);
        let d = FunctionalDataset::new(TimeGrid::uniform(2).unwrap(), vec![g.clone(), g]).unwrap();
        let est = lambda_hat(&d).unwrap();
        for t in 0..2 {
            assert_eq!(est.lambda_block(t, 0), est.lambda_block(t, 1));
        }
    }

    #[test]
    fn lambda_direct_sum_with_unequal_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g1 = random_group(2, 2, 3, &mut rng);
        let g2 = random_group(4, 2, 3, &mut rng);
        let d = FunctionalDataset::new(TimeGrid::uniform(3).unwrap(), vec![g1.clone(), g2.clone()]).unwrap();
        let est = lambda_hat(&d).unwrap();
        assert_eq!(est.n_total(), 6);
        for t in 0..3 {
            // Hand assembly: weights n/n1 = 3 and n/n2 = 1.5 on the diagonal blocks.
            let mut oracle = DMatrix::zeros(4, 4);
            let c1 = group_cov(&g1, t, t).unwrap() * 3.0;
            let c2 = group_cov(&g2, t, t).unwrap() * 1.5;
            for a in 0..2 {
                for b in 0..2 {
                    oracle[(a, b)] = c1[(a, b)];
                    oracle[(2 + a, 2 + b)] = c2[(a, b)];
                }
            }
            let lam = est.lambda(t);
            assert!((&lam - &oracle).amax() < 1e-12);
            for a in 0..2 {
                for b in 2..4 {
                    assert_eq!(lam[(a, b)], 0.0);
                    assert_eq!(lam[(b, a)], 0.0);
                }
            }
        }
    }
}
