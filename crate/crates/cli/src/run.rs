use std::io::Write;
use std::path::{Path, PathBuf};

use fmanova::bench::{bench_bootstrap, write_bench_csv, BenchSpec};
use fmanova::dataset::load_pattern_csv;
use fmanova::simulation::{run_study, StudyConfig, StudyReport};
use fmanova::{
    build, global_test, multiple_test, DesignSpec, Error, FunctionalDataset, Globalizer,
    HypothesisBlocks, Result,
};
use serde::Serialize;

use crate::{BenchArgs, SimulateArgs, TestArgs};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum CommandName {
    Test,
    Mtest,
    Simulate,
}

#[derive(Debug, Serialize)]
struct DesignManifest {
    kind: String,
    k: usize,
    p: usize,
    a: usize,
    b: usize,
}

/// Everything that determines a report. Thread count is deliberately absent.
#[derive(Debug, Serialize)]
struct RunManifest {
    command: CommandName,
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    c: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    design: Option<DesignManifest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reps: Option<usize>,
    alpha: f64,
    #[serde(rename = "B")]
    b: usize,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    globalizer: Option<Globalizer>,
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    schema_version: u32,
    manifest: &'a RunManifest,
    result: &'a T,
}

fn check_common(alpha: f64, b: usize) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if b < 2 {
        return Err(Error::InvalidParameter(format!("B must be at least 2, got {b}")));
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn emit<T: Serialize>(manifest: &RunManifest, result: &T, out: Option<&Path>) -> Result<()> {
    let report = Report {
        schema_version: SCHEMA_VERSION,
        manifest,
        result,
    };
    let mut text = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Numerical(format!("cannot serialize report: {e}")))?;
    text.push('\n');
    match out {
        Some(path) => write_file(path, text.as_bytes()),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

struct Prepared {
    data: FunctionalDataset,
    blocks: HypothesisBlocks,
    manifest: RunManifest,
}

fn prepare(args: &TestArgs, command: CommandName) -> Result<Prepared> {
    check_common(args.alpha, args.replicates)?;
    let data = FunctionalDataset::load_csv(&args.data, args.grid.as_deref())?;
    if let Some(p) = args.p {
        if p != data.p() {
            return Err(Error::DimensionMismatch(format!("--p {p} but the data have p = {}", data.p())));
        }
    }
    let spec = DesignSpec::new(args.design, data.k(), data.p()).with_factors(args.a, args.b);
    let c = match (&args.c, args.design) {
        (None, _) => None,
        (Some(path), fmanova::DesignKind::Identity) => {
            Some(load_pattern_csv(path, data.p() * data.k(), data.n_times())?)
        }
        (Some(_), kind) => {
            return Err(Error::BadConfig(format!("--c is only accepted with --design identity, not {kind}")))
        }
    };
    let blocks = build(&spec, c)?;
    let manifest = RunManifest {
        command,
        data: Some(args.data.clone()),
        grid: args.grid.clone(),
        c: args.c.clone(),
        config: None,
        design: Some(DesignManifest {
            kind: spec.kind.name().into(),
            k: spec.k,
            p: spec.p,
            a: spec.a,
            b: spec.b,
        }),
        reps: None,
        alpha: args.alpha,
        b: args.replicates,
        seed: args.seed,
        globalizer: Some(args.globalizer),
        out: args.out.clone(),
    };
    Ok(Prepared { data, blocks, manifest })
}

pub fn test(args: &TestArgs) -> Result<()> {
    let Prepared { data, blocks, manifest } = prepare(args, CommandName::Test)?;
    let block = match blocks.blocks() {
        [single] => single.clone(),
        _ => blocks.stacked(args.design.name())?,
    };
    let report = global_test(&data, &block, args.alpha, args.replicates, args.seed, args.globalizer)?;
    emit(&manifest, &report, args.out.as_deref())
}

pub fn mtest(args: &TestArgs) -> Result<()> {
    let Prepared { data, blocks, manifest } = prepare(args, CommandName::Mtest)?;
    let report = multiple_test(&data, &blocks, args.alpha, args.replicates, args.seed, args.globalizer)?;
    emit(&manifest, &report, args.out.as_deref())
}

#[derive(Serialize)]
struct Timing {
    elapsed_seconds: f64,
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    check_common(args.alpha, args.replicates)?;
    let text = std::fs::read_to_string(&args.config).map_err(|e| Error::io(&args.config, e))?;
    let study = StudyConfig::from_json(&text)?;
    let report: StudyReport = run_study(
        &study.scenarios,
        &study.test,
        args.reps,
        args.replicates,
        args.alpha,
        args.seed,
    )?;
    let manifest = RunManifest {
        command: CommandName::Simulate,
        data: None,
        grid: None,
        c: None,
        config: Some(args.config.clone()),
        design: None,
        reps: Some(args.reps),
        alpha: args.alpha,
        b: args.replicates,
        seed: args.seed,
        globalizer: Some(study.test.globalizer),
        out: args.out.clone(),
    };
    match &args.out {
        Some(csv_path) => {
            report.write_csv(csv_path)?;
            emit(&manifest, &report, Some(&csv_path.with_extension("json")))?;
            let timing = serde_json::to_string(&Timing {
                elapsed_seconds: report.elapsed_seconds,
            })
            .map_err(|e| Error::Numerical(e.to_string()))?;
            write_file(&csv_path.with_extension("meta.json"), format!("{timing}\n").as_bytes())
        }
        None => emit(&manifest, &report, None),
    }
}

pub fn bench(args: &BenchArgs) -> Result<()> {
    let case = bench_bootstrap(&BenchSpec::model1_tukey(args.replicates))?;
    match &args.out {
        Some(path) => {
            let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
            write_bench_csv(&[case], file)
        }
        None => write_bench_csv(&[case], std::io::stdout()),
    }
}
