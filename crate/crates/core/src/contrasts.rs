//! Hypothesis matrices for common designs.
//!
//! `P_m = I_m − J_m/m` is the centering matrix. Two-way designs index
//! groups lexicographically as `(i₁, i₂)` with the second factor running
//! fastest; longitudinal designs nest each group's `p = a·b` variables as
//! `(repeat, dimension)` with the dimension running fastest.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::kronecker;
use crate::statistics::{HypothesisBlock, HypothesisBlocks};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignKind {
    OneWay,
    #[serde(rename = "two-way-a")]
    TwoWayMainA,
    #[serde(rename = "two-way-b")]
    TwoWayMainB,
    TwoWayInteraction,
    LongGroup,
    LongTime,
    LongInteraction,
    Tukey,
    Dunnett,
    Identity,
}

impl DesignKind {
    pub const ALL: [DesignKind; 10] = [
        DesignKind::OneWay,
        DesignKind::TwoWayMainA,
        DesignKind::TwoWayMainB,
        DesignKind::TwoWayInteraction,
        DesignKind::LongGroup,
        DesignKind::LongTime,
        DesignKind::LongInteraction,
        DesignKind::Tukey,
        DesignKind::Dunnett,
        DesignKind::Identity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DesignKind::OneWay => "one-way",
            DesignKind::TwoWayMainA => "two-way-a",
            DesignKind::TwoWayMainB => "two-way-b",
            DesignKind::TwoWayInteraction => "two-way-interaction",
            DesignKind::LongGroup => "long-group",
            DesignKind::LongTime => "long-time",
            DesignKind::LongInteraction => "long-interaction",
            DesignKind::Tukey => "tukey",
            DesignKind::Dunnett => "dunnett",
            DesignKind::Identity => "identity",
        }
    }

    fn is_two_way(self) -> bool {
        matches!(
            self,
            DesignKind::TwoWayMainA | DesignKind::TwoWayMainB | DesignKind::TwoWayInteraction
        )
    }

    fn is_longitudinal(self) -> bool {
        matches!(
            self,
            DesignKind::LongGroup | DesignKind::LongTime | DesignKind::LongInteraction
        )
    }
}

impl fmt::Display for DesignKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DesignKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DesignKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = DesignKind::ALL.iter().map(|k| k.name()).collect();
                Error::BadConfig(format!("unknown design {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// `a` and `b` are the factor levels of a two-way design (`k = a·b`) or the
/// repeats and dimensions of a longitudinal one (`p = a·b`); other kinds
/// ignore them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub kind: DesignKind,
    pub k: usize,
    pub p: usize,
    #[serde(default = "one")]
    pub a: usize,
    #[serde(default = "one")]
    pub b: usize,
}

fn one() -> usize {
    1
}

impl DesignSpec {
    pub fn new(kind: DesignKind, k: usize, p: usize) -> Self {
        Self { kind, k, p, a: 1, b: 1 }
    }

    pub fn with_factors(mut self, a: usize, b: usize) -> Self {
        self.a = a;
        self.b = b;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.p == 0 || self.a == 0 || self.b == 0 {
            return Err(Error::BadDimensions(format!(
                "k, p, a and b must be positive, got k={}, p={}, a={}, b={}",
                self.k, self.p, self.a, self.b
            )));
        }
        if self.kind.is_two_way() && self.k != self.a * self.b {
            return Err(Error::BadDimensions(format!(
                "{} needs k = a·b, got k={}, a={}, b={}",
                self.kind, self.k, self.a, self.b
            )));
        }
        if self.kind.is_longitudinal() && self.p != self.a * self.b {
            return Err(Error::BadDimensions(format!(
                "{} needs p = a·b, got p={}, a={}, b={}",
                self.kind, self.p, self.a, self.b
            )));
        }
        Ok(())
    }
}

/// `I_m − J_m/m`.
pub fn centering(m: usize) -> DMatrix<f64> {
    DMatrix::identity(m, m) - DMatrix::from_element(m, m, 1.0 / m as f64)
}

/// `1_mᵀ/m`.
pub fn averaging(m: usize) -> DMatrix<f64> {
    DMatrix::from_element(1, m, 1.0 / m as f64)
}

fn kron3(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    kronecker(&kronecker(a, b), c)
}

fn difference(k: usize, i: usize, j: usize) -> DMatrix<f64> {
    let mut t = DMatrix::zeros(1, k);
    t[(0, i)] = -1.0;
    t[(0, j)] = 1.0;
    t
}

/// Hypothesis blocks for `spec`. `c` is used only by [`DesignKind::Identity`]
/// and must be `pk × T`.
pub fn build(spec: &DesignSpec, c: Option<DMatrix<f64>>) -> Result<HypothesisBlocks> {
    spec.validate()?;
    let DesignSpec { kind, k, p, a, b } = *spec;
    let ip = DMatrix::identity(p, p);
    let single = |m: DMatrix<f64>| -> Result<HypothesisBlocks> {
        Ok(HypothesisBlocks::single(HypothesisBlock::new(kind.name(), m, None)?))
    };
    match kind {
        DesignKind::OneWay => single(kronecker(&centering(k), &ip)),
        DesignKind::TwoWayMainA => single(kron3(&centering(a), &averaging(b), &ip)),
        DesignKind::TwoWayMainB => single(kron3(&averaging(a), &centering(b), &ip)),
        DesignKind::TwoWayInteraction => single(kron3(&centering(a), &centering(b), &ip)),
        DesignKind::LongGroup => {
            single(kron3(&centering(k), &averaging(a), &DMatrix::identity(b, b)))
        }
        DesignKind::LongTime => single(kron3(&averaging(k), &centering(a), &DMatrix::identity(b, b))),
        DesignKind::LongInteraction => {
            single(kron3(&centering(k), &centering(a), &DMatrix::identity(b, b)))
        }
        DesignKind::Tukey => {
            let mut blocks = Vec::with_capacity(k * k.saturating_sub(1) / 2);
            for i in 0..k {
                for j in i + 1..k {
                    let h = kronecker(&difference(k, i, j), &ip);
                    blocks.push(HypothesisBlock::new(format!("{}-{}", i + 1, j + 1), h, None)?);
                }
            }
            if blocks.is_empty() {
                return Err(Error::BadDimensions("tukey needs at least two groups".into()));
            }
            HypothesisBlocks::new(blocks)
        }
        DesignKind::Dunnett => {
            if k < 2 {
                return Err(Error::BadDimensions("dunnett needs at least two groups".into()));
            }
            let blocks = (1..k)
                .map(|l| {
                    let h = kronecker(&difference(k, 0, l), &ip);
                    HypothesisBlock::new(format!("1-{}", l + 1), h, None)
                })
                .collect::<Result<Vec<_>>>()?;
            HypothesisBlocks::new(blocks)
        }
        DesignKind::Identity => Ok(HypothesisBlocks::single(HypothesisBlock::new(
            kind.name(),
            DMatrix::identity(p * k, p * k),
            c,
        )?)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tukey_blocks_for_four_groups() {
        let hb = build(&DesignSpec::new(DesignKind::Tukey, 4, 6), None).unwrap();
        assert_eq!(hb.len(), 6);
        assert_eq!(hb.labels(), vec!["1-2", "1-3", "1-4", "2-3", "2-4", "3-4"]);
        let first = hb.blocks()[0].matrix();
        assert_eq!(first.shape(), (6, 24));
        for r in 0..6 {
            for col in 0..24 {
                let expected = match (col / 6, col % 6 == r) {
                    (0, true) => -1.0,
                    (1, true) => 1.0,
                    _ => 0.0,
                };
                assert_eq!(first[(r, col)], expected);
            }
        }
        let stacked = hb.stacked("tukey").unwrap();
        assert_eq!(stacked.matrix().shape(), (36, 24));
    }

    #[test]
    fn one_way_with_one_group_is_rejected() {
        let err = build(&DesignSpec::new(DesignKind::OneWay, 1, 3), None).unwrap_err();
        assert!(matches!(err, Error::BadDimensions(_)));
        assert!(build(&DesignSpec::new(DesignKind::Tukey, 1, 3), None).is_err());
        assert!(build(&DesignSpec::new(DesignKind::Dunnett, 1, 3), None).is_err());
    }

    #[test]
    fn interaction_matches_hand_expansion() {
        let spec = DesignSpec::new(DesignKind::TwoWayInteraction, 4, 1).with_factors(2, 2);
        let hb = build(&spec, None).unwrap();
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, -1.0, -1.0, 1.0, //
                -1.0, 1.0, 1.0, -1.0, //
                -1.0, 1.0, 1.0, -1.0, //
                1.0, -1.0, -1.0, 1.0,
            ],
        ) * 0.25;
        assert!((hb.blocks()[0].matrix() - expected).amax() < 1e-15);
    }

    #[test]
    fn main_effects_match_hand_expansion() {
        let spec = DesignSpec::new(DesignKind::TwoWayMainA, 4, 1).with_factors(2, 2);
        let h = build(&spec, None).unwrap().blocks()[0].matrix().clone();
        let expected = DMatrix::from_row_slice(2, 4, &[1.0, 1.0, -1.0, -1.0, -1.0, -1.0, 1.0, 1.0]) * 0.25;
        assert!((h - expected).amax() < 1e-15);
        let spec = DesignSpec::new(DesignKind::TwoWayMainB, 4, 1).with_factors(2, 2);
        let h = build(&spec, None).unwrap().blocks()[0].matrix().clone();
        let expected = DMatrix::from_row_slice(2, 4, &[1.0, -1.0, 1.0, -1.0, -1.0, 1.0, -1.0, 1.0]) * 0.25;
        assert!((h - expected).amax() < 1e-15);
    }

    #[test]
    fn factor_invariants_are_checked() {
        let bad = DesignSpec::new(DesignKind::TwoWayMainA, 5, 1).with_factors(2, 2);
        assert!(matches!(build(&bad, None), Err(Error::BadDimensions(_))));
        let bad = DesignSpec::new(DesignKind::LongTime, 3, 5).with_factors(2, 2);
        assert!(matches!(build(&bad, None), Err(Error::BadDimensions(_))));
        let ok = DesignSpec::new(DesignKind::LongTime, 3, 6).with_factors(3, 2);
        let h = build(&ok, None).unwrap();
        assert_eq!(h.cols(), 18);
    }

    #[test]
    fn contrast_rows_sum_to_zero() {
        for kind in [DesignKind::Tukey, DesignKind::Dunnett, DesignKind::OneWay] {
            let hb = build(&DesignSpec::new(kind, 5, 3), None).unwrap();
            for block in hb.blocks() {
                for row in block.matrix().row_iter() {
                    assert!(row.sum().abs() < 1e-14);
                }
            }
        }
        let hb = build(&DesignSpec::new(DesignKind::Dunnett, 4, 2), None).unwrap();
        assert_eq!(hb.len(), 3);
    }

    #[test]
    fn one_way_annihilates_common_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (k, p) = (4, 3);
        let h = build(&DesignSpec::new(DesignKind::OneWay, k, p), None).unwrap().blocks()[0]
            .matrix()
            .clone();
        let v = DMatrix::from_fn(p, 1, |_, _| rng.gen_range(-5.0..5.0));
        let eta = kronecker(&DMatrix::from_element(k, 1, 1.0), &v);
        assert!((h * eta).amax() < 1e-13);
    }

    #[test]
    fn one_way_and_tukey_share_the_null() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (k, p) = (4, 2);
        let one_way = build(&DesignSpec::new(DesignKind::OneWay, k, p), None).unwrap().blocks()[0]
            .matrix()
            .clone();
        let tukey = build(&DesignSpec::new(DesignKind::Tukey, k, p), None).unwrap();
        for trial in 0..100 {
            let eta = if trial % 2 == 0 {
                let v = DMatrix::from_fn(p, 1, |_, _| rng.gen_range(-1.0..1.0));
                kronecker(&DMatrix::from_element(k, 1, 1.0), &v)
            } else {
                DMatrix::from_fn(p * k, 1, |_, _| rng.gen_range(-1.0..1.0))
            };
            let ow_null = (&one_way * &eta).amax() < 1e-12;
            let tk_null = tukey.blocks().iter().all(|b| (b.matrix() * &eta).amax() < 1e-12);
            assert_eq!(ow_null, tk_null);
            assert_eq!(ow_null, trial % 2 == 0);
        }
    }

    #[test]
    fn identity_keeps_user_c() {
        let c = DMatrix::from_element(6, 4, 1.5);
        let hb = build(&DesignSpec::new(DesignKind::Identity, 2, 3), Some(c.clone())).unwrap();
        assert_eq!(hb.blocks()[0].c(), Some(&c));
        assert!(build(&DesignSpec::new(DesignKind::Identity, 2, 3), Some(DMatrix::zeros(5, 4))).is_err());
    }

    #[test]
    fn design_names_round_trip() {
        for kind in DesignKind::ALL {
            assert_eq!(kind.name().parse::<DesignKind>().unwrap(), kind);
            let json = serde_json::to_string(&kind).unwrap();
            assert_eq!(json, format!("\"{}\"", kind.name()));
        }
        assert!("anova".parse::<DesignKind>().is_err());
    }
}
