//! Bootstrap throughput measurements.

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use rand_distr::StandardNormal;
use rand::Rng;
use serde::Serialize;

use crate::bootstrap::bootstrap_replicates;
use crate::contrasts::{build, DesignKind, DesignSpec};
use crate::dataset::{default_subject_ids, FunctionalDataset, Group, TimeGrid};
use crate::error::{Error, Result};
use crate::rng::{substream, Domain};
use crate::statistics::Globalizer;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub name: String,
    pub sizes: Vec<usize>,
    pub p: usize,
    pub t: usize,
    pub b: usize,
    pub design: DesignKind,
    pub seed: u64,
}

impl BenchSpec {
    /// Four groups of six variables on 50 points with all pairwise contrasts.
    pub fn model1_tukey(b: usize) -> Self {
        Self {
            name: "k4-p6-T50-tukey".into(),
            sizes: vec![20, 30, 40, 50],
            p: 6,
            t: 50,
            b,
            design: DesignKind::Tukey,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchCase {
    pub name: String,
    pub k: usize,
    pub sizes: String,
    pub p: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "B")]
    pub b: usize,
    pub threads: usize,
    pub seconds: f64,
    pub replicates_per_second: f64,
}

fn bench_dataset(spec: &BenchSpec) -> Result<FunctionalDataset> {
    let mut rng = substream(spec.seed, Domain::Simulation, &[u64::MAX]);
    let groups = spec
        .sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let curves = DMatrix::from_fn(n, spec.p * spec.t, |_, _| rng.sample::<f64, _>(StandardNormal));
            Group::new(format!("{}", i + 1), default_subject_ids(n), spec.p, spec.t, curves)
        })
        .collect::<Result<Vec<_>>>()?;
    FunctionalDataset::new(TimeGrid::uniform(spec.t)?, groups)
}

/// Times `bootstrap_replicates` for `spec` on the current thread pool and
/// checks a reduced run against a single-threaded reference.
pub fn bench_bootstrap(spec: &BenchSpec) -> Result<BenchCase> {
    let d = bench_dataset(spec)?;
    let hb = build(&DesignSpec::new(spec.design, spec.sizes.len(), spec.p), None)?;

    let check_b = spec.b.min(16);
    let parallel = bootstrap_replicates(&d, &hb, check_b, spec.seed, Globalizer::Sup)?;
    let serial = crate::with_threads(1, || bootstrap_replicates(&d, &hb, check_b, spec.seed, Globalizer::Sup))??;
    if parallel != serial {
        return Err(Error::Numerical("bootstrap output depends on the thread count".into()));
    }

    let start = Instant::now();
    let reps = bootstrap_replicates(&d, &hb, spec.b, spec.seed, Globalizer::Sup)?;
    let seconds = start.elapsed().as_secs_f64().max(1e-9);
    debug_assert_eq!(reps.b(), spec.b);
    Ok(BenchCase {
        name: spec.name.clone(),
        k: spec.sizes.len(),
        sizes: spec.sizes.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(";"),
        p: spec.p,
        t: spec.t,
        b: spec.b,
        threads: rayon::current_num_threads(),
        seconds,
        replicates_per_second: spec.b as f64 / seconds,
    })
}

pub fn write_bench_csv<W: Write>(cases: &[BenchCase], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for c in cases {
        w.serialize(c).map_err(|e| Error::io("<benchmark table>", e.into()))?;
    }
    w.flush().map_err(|e| Error::io("<benchmark table>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(b: usize) -> BenchSpec {
        BenchSpec {
            name: "small".into(),
            sizes: vec![8, 10],
            p: 2,
            t: 10,
            b,
            design: DesignKind::OneWay,
            seed: 3,
        }
    }

    #[test]
    fn smoke_run_reports_finite_throughput() {
        let case = bench_bootstrap(&BenchSpec::model1_tukey(100)).unwrap();
        assert_eq!((case.k, case.p, case.t, case.b), (4, 6, 50, 100));
        assert!(case.replicates_per_second.is_finite() && case.replicates_per_second > 0.0);
        let mut buf = Vec::new();
        write_bench_csv(&[case], &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("name,k,sizes,p,T,B,threads,seconds"));
    }

    #[test]
    fn throughput_is_roughly_linear_in_b() {
        let best = |b: usize| {
            (0..5)
                .map(|_| bench_bootstrap(&small(b)).unwrap().replicates_per_second)
                .fold(0.0, f64::max)
        };
        let (one, two) = (best(400), best(800));
        let ratio = two / one;
        assert!((0.7..=1.3).contains(&ratio), "throughput ratio {ratio}");
    }

    #[test]
    fn thread_count_does_not_change_replicates() {
        let spec = small(40);
        let d = bench_dataset(&spec).unwrap();
        let hb = build(&DesignSpec::new(spec.design, 2, 2), None).unwrap();
        let one = crate::with_threads(1, || bootstrap_replicates(&d, &hb, 40, 5, Globalizer::Sup)).unwrap().unwrap();
        let max = crate::with_threads(0, || bootstrap_replicates(&d, &hb, 40, 5, Globalizer::Sup)).unwrap().unwrap();
        assert_eq!(one, max);
    }
}
