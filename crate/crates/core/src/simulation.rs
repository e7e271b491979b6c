//! Simulation models and Monte-Carlo size, power and FWER studies.
//!
//! Model 1 has `k = 4` groups of `p = 6` variables, Model 2 has `k = 2`
//! groups of `p = 2`. Curves are `x_ij(t) = η_i(t) + A z_ij(t)` with
//! `z_ijm(t) = Σ_r √(h_i ρ^r) v_ijmr ψ_r(t)`, `r = 1..7`, evaluated on an
//! equally spaced grid of `[0, 1]`.

use std::f64::consts::{PI, SQRT_2};
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution as _, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_replicates, global_pvalue, BootstrapReplicates};
use crate::contrasts::{build, DesignKind, DesignSpec};
use crate::dataset::{default_subject_ids, FunctionalDataset, Group, TimeGrid};
use crate::error::{Error, Result};
use crate::estimators::lambda_hat;
use crate::multiplicity::{bonferroni_decisions, decide};
use crate::rng::{derive_key, substream, Domain};
use crate::statistics::{observed_statistics, Globalizer, HypothesisBlocks};

pub const BASIS_LEN: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Model1,
    Model2,
}

impl Model {
    pub fn k(self) -> usize {
        match self {
            Model::Model1 => 4,
            Model::Model2 => 2,
        }
    }

    pub fn p(self) -> usize {
        match self {
            Model::Model1 => 6,
            Model::Model2 => 2,
        }
    }

    pub fn mixing(self) -> DMatrix<f64> {
        match self {
            Model::Model1 => DMatrix::from_row_slice(
                6,
                6,
                &[
                    1.0, 0.0, -1.0, -1.0, 0.0, 0.0, //
                    0.0, 1.0, 0.0, 0.0, -1.0, -1.0, //
                    0.0, 0.0, 1.0, -1.0, 0.0, -1.0, //
                    1.0, 1.0, 0.0, 1.0, 0.0, -1.0, //
                    0.0, 0.0, 1.0, 0.0, 1.0, -1.0, //
                    0.0, 0.0, 0.0, 0.0, 0.0, 1.0,
                ],
            ),
            Model::Model2 => DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.0, 1.0]),
        }
    }
}

/// Standardized innovation laws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Distribution {
    #[serde(rename = "normal")]
    Normal,
    /// `t₄/√2`.
    #[serde(rename = "t4")]
    StudentT4,
    /// `(χ²₄ − 4)/√8`.
    #[serde(rename = "chisq4")]
    ChiSq4,
}

pub fn draw_innovation<R: Rng + ?Sized>(dist: Distribution, rng: &mut R) -> f64 {
    match dist {
        Distribution::Normal => rng.sample(StandardNormal),
        Distribution::StudentT4 => StudentT::new(4.0).expect("valid dof").sample(rng) / SQRT_2,
        Distribution::ChiSq4 => (ChiSquared::new(4.0).expect("valid dof").sample(rng) - 4.0) / 8f64.sqrt(),
    }
}

/// `(1, √2 sin 2πt, √2 cos 2πt, √2 sin 4πt, √2 cos 4πt, √2 sin 6πt, √2 cos 6πt)`.
pub fn fourier_basis(t: f64) -> [f64; BASIS_LEN] {
    let mut psi = [1.0; BASIS_LEN];
    for s in 1..=3 {
        let arg = 2.0 * PI * s as f64 * t;
        psi[2 * s - 1] = SQRT_2 * arg.sin();
        psi[2 * s] = SQRT_2 * arg.cos();
    }
    psi
}

/// `h(t) = 1/(t + 1/50)`.
pub fn scaling_function(t: f64) -> f64 {
    1.0 / (t + 1.0 / 50.0)
}

fn default_grid_len() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub model: Model,
    pub rho: f64,
    pub h_vector: Vec<f64>,
    pub sample_sizes: Vec<usize>,
    pub distribution: Distribution,
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub scaled: bool,
    #[serde(rename = "T", default = "default_grid_len")]
    pub grid_len: usize,
}

impl ModelConfig {
    /// Model 1 with `n = (20, 30, 40, 50)` on 50 grid points.
    pub fn model1(distribution: Distribution, rho: f64, delta: f64, h_vector: [f64; 4]) -> Self {
        Self {
            model: Model::Model1,
            rho,
            h_vector: h_vector.to_vec(),
            sample_sizes: vec![20, 30, 40, 50],
            distribution,
            delta,
            scaled: false,
            grid_len: 50,
        }
    }

    /// Model 2 with `n = (20, 30)` on 50 grid points.
    pub fn model2(distribution: Distribution, rho: f64, delta: f64, h_vector: [f64; 2]) -> Self {
        Self {
            model: Model::Model2,
            rho,
            h_vector: h_vector.to_vec(),
            sample_sizes: vec![20, 30],
            distribution,
            delta,
            scaled: false,
            grid_len: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.model.k();
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::BadConfig(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        if self.h_vector.len() != k || self.sample_sizes.len() != k {
            return Err(Error::BadConfig(format!(
                "{:?} needs {k} variance weights and sample sizes, got {} and {}",
                self.model,
                self.h_vector.len(),
                self.sample_sizes.len()
            )));
        }
        if self.h_vector.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::BadConfig("variance weights must be positive".into()));
        }
        if self.sample_sizes.iter().any(|&n| n < 2) {
            return Err(Error::BadConfig("every sample size must be at least 2".into()));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::BadConfig(format!("delta must be nonnegative, got {}", self.delta)));
        }
        if self.grid_len < 2 {
            return Err(Error::BadConfig(format!("T must be at least 2, got {}", self.grid_len)));
        }
        Ok(())
    }

    /// `λ_ir = h_i ρ^r`, `r = 1..7`.
    pub fn eigenvalues(&self, group: usize) -> [f64; BASIS_LEN] {
        let mut lambda = [0.0; BASIS_LEN];
        for (r, l) in lambda.iter_mut().enumerate() {
            *l = self.h_vector[group] * self.rho.powi(r as i32 + 1);
        }
        lambda
    }
}

fn cubic(t: f64, delta: f64) -> f64 {
    let s = delta / 30f64.sqrt();
    (1.0 + s) + (2.3 + 2.0 * s) * t + (3.4 + 3.0 * s) * t * t + (1.5 + 4.0 * s) * t.powi(3)
}

fn mean_value(model: Model, group: usize, var: usize, t: f64, delta: f64) -> f64 {
    let sin5 = (2.0 * PI * t * t).sin().powi(5);
    match (model, var) {
        (Model::Model1, 0) => sin5,
        (Model::Model1, 1) => (2.0 * PI * t * t).cos().powi(5),
        (Model::Model1, 2) => t.cbrt() * (1.0 - t) - 5.0,
        (Model::Model1, 3) => 5f64.sqrt() * t.powf(2.0 / 3.0) * (-7.0 * t).exp(),
        (Model::Model1, 4) => (13.0 * t).sqrt() * (-6.5 * t).exp(),
        (Model::Model1, _) => cubic(t, if group == 3 { delta } else { 0.0 }),
        (Model::Model2, 0) => sin5,
        (Model::Model2, _) => cubic(t, if group == 1 { delta } else { 0.0 }),
    }
}

/// Population mean functions `η_i` on the grid, one `p × T` matrix per
/// group, after scaling when `cfg.scaled`.
pub fn population_means(cfg: &ModelConfig) -> Result<Vec<DMatrix<f64>>> {
    cfg.validate()?;
    let grid = TimeGrid::uniform(cfg.grid_len)?;
    let (k, p) = (cfg.model.k(), cfg.model.p());
    Ok((0..k)
        .map(|i| {
            DMatrix::from_fn(p, cfg.grid_len, |m, ti| {
                let t = grid.points()[ti];
                let scale = if cfg.scaled { scaling_function(t) } else { 1.0 };
                mean_value(cfg.model, i, m, t, cfg.delta) * scale
            })
        })
        .collect())
}

/// One simulated dataset. All innovations come from one keyed stream in
/// (group, subject, variable, basis index) order.
pub fn generate(cfg: &ModelConfig, seed: u64) -> Result<FunctionalDataset> {
    generate_with_mixing(cfg, seed, &cfg.model.mixing())
}

fn generate_with_mixing(cfg: &ModelConfig, seed: u64, mixing: &DMatrix<f64>) -> Result<FunctionalDataset> {
    let means = population_means(cfg)?;
    let grid = TimeGrid::uniform(cfg.grid_len)?;
    let (p, t_len) = (cfg.model.p(), cfg.grid_len);
    let basis: Vec<[f64; BASIS_LEN]> = grid.points().iter().map(|&t| fourier_basis(t)).collect();
    let scale: Vec<f64> = grid
        .points()
        .iter()
        .map(|&t| if cfg.scaled { scaling_function(t) } else { 1.0 })
        .collect();
    let mut rng: ChaCha8Rng = substream(seed, Domain::Simulation, &[]);

    let mut groups = Vec::with_capacity(cfg.model.k());
    for (i, &n) in cfg.sample_sizes.iter().enumerate() {
        let sd: Vec<f64> = cfg.eigenvalues(i).iter().map(|l| l.sqrt()).collect();
        let mut curves = DMatrix::zeros(n, p * t_len);
        let mut coef = DMatrix::zeros(p, BASIS_LEN);
        for j in 0..n {
            for m in 0..p {
                for r in 0..BASIS_LEN {
                    coef[(m, r)] = sd[r] * draw_innovation(cfg.distribution, &mut rng);
                }
            }
            // Rows of `mixed` are the basis coefficients of A z.
            let mixed = mixing * &coef;
            for m in 0..p {
                for (ti, psi) in basis.iter().enumerate() {
                    let e: f64 = (0..BASIS_LEN).map(|r| mixed[(m, r)] * psi[r]).sum();
                    curves[(j, m * t_len + ti)] = means[i][(m, ti)] + e * scale[ti];
                }
            }
        }
        groups.push(Group::new(
            format!("{}", i + 1),
            default_subject_ids(n),
            p,
            t_len,
            curves,
        )?);
    }
    FunctionalDataset::new(grid, groups)
}

/// Which hypotheses a study evaluates.
///
/// The global test uses the stacked matrix of all blocks of `design`; the
/// multiple procedures use the blocks separately. Both are calibrated on the
/// same bootstrap draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    #[serde(default = "default_design")]
    pub design: DesignKind,
    #[serde(default = "default_globalizer")]
    pub globalizer: Globalizer,
}

fn default_design() -> DesignKind {
    DesignKind::Tukey
}

fn default_globalizer() -> Globalizer {
    Globalizer::Sup
}

impl Default for StudySpec {
    fn default() -> Self {
        Self {
            design: default_design(),
            globalizer: default_globalizer(),
        }
    }
}

/// A study configuration file: scenarios plus an optional test spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub scenarios: Vec<ModelConfig>,
    #[serde(default)]
    pub test: StudySpec,
}

impl StudyConfig {
    /// Accepts a full study document, a list of scenarios or a single scenario.
    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Doc {
            Study(StudyConfig),
            List(Vec<ModelConfig>),
            One(ModelConfig),
        }
        let doc: Doc = serde_json::from_str(text)
            .map_err(|e| Error::BadConfig(format!("invalid study configuration: {e}")))?;
        let cfg = match doc {
            Doc::Study(s) => s,
            Doc::List(scenarios) => StudyConfig {
                scenarios,
                test: StudySpec::default(),
            },
            Doc::One(s) => StudyConfig {
                scenarios: vec![s],
                test: StudySpec::default(),
            },
        };
        if cfg.scenarios.is_empty() {
            return Err(Error::BadConfig("study has no scenarios".into()));
        }
        for s in &cfg.scenarios {
            s.validate()?;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioResult {
    pub config: ModelConfig,
    pub hypotheses: Vec<String>,
    /// Whether each local hypothesis holds for the population means.
    pub true_nulls: Vec<bool>,
    /// Rejection rate of the global test on the stacked hypothesis.
    pub global_rate: f64,
    /// Share of runs in which the multiple procedure rejects anything.
    pub multiple_global_rate: f64,
    pub multiple_local_rates: Vec<f64>,
    /// Share of runs rejecting at least one true null.
    pub multiple_fwer: f64,
    pub bonferroni_global_rate: f64,
    pub bonferroni_local_rates: Vec<f64>,
    pub bonferroni_fwer: f64,
    pub mean_beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub test: StudySpec,
    pub reps: usize,
    #[serde(rename = "B")]
    pub b: usize,
    pub alpha: f64,
    pub seed: u64,
    pub scenarios: Vec<ScenarioResult>,
    /// Wall-clock time; kept out of the serialized report so that reports
    /// are reproducible byte for byte.
    #[serde(skip)]
    pub elapsed_seconds: f64,
}

struct RunOutcome {
    global: bool,
    multiple: Vec<bool>,
    bonferroni: Vec<bool>,
    beta: f64,
}

fn true_nulls(cfg: &ModelConfig, hb: &HypothesisBlocks) -> Result<Vec<bool>> {
    let means = population_means(cfg)?;
    let p = cfg.model.p();
    let eta = DMatrix::from_fn(p * means.len(), cfg.grid_len, |row, t| means[row / p][(row % p, t)]);
    Ok(hb
        .blocks()
        .iter()
        .map(|b| {
            let diff = b.matrix() * &eta - b.c_on_grid(cfg.grid_len).expect("grid checked");
            diff.amax() <= 1e-9 * eta.amax().max(1.0)
        })
        .collect())
}

/// Everything a single study run needs besides its seeds.
struct RunPlan<'a> {
    cfg: &'a ModelConfig,
    /// Local hypotheses.
    hb: &'a HypothesisBlocks,
    /// The stacked hypothesis followed by the local ones, or just the
    /// single block.
    with_global: &'a HypothesisBlocks,
    globalizer: Globalizer,
    b: usize,
    alpha: f64,
}

impl RunPlan<'_> {
    fn run(&self, data_seed: u64, boot_seed: u64) -> Result<RunOutcome> {
        let d = generate(self.cfg, data_seed)?;
        let est = lambda_hat(&d)?;
        let observed = observed_statistics(&est, d.grid(), self.with_global, self.globalizer)?.values;
        let reps = bootstrap_replicates(&d, self.with_global, self.b, boot_seed, self.globalizer)?;
        let global = global_pvalue(observed[0], &reps.column(0), self.alpha)?.reject;
        let r = self.hb.len();
        let (local_obs, local_reps) = if r == 1 {
            (observed, reps)
        } else {
            let local = reps.values().columns(1, r).into_owned();
            (observed[1..].to_vec(), BootstrapReplicates::from_values(local, boot_seed, self.globalizer)?)
        };
        let multiple = decide(&local_obs, &local_reps, self.alpha)?;
        let bonferroni = bonferroni_decisions(&local_obs, &local_reps, self.alpha)?;
        Ok(RunOutcome {
            global,
            multiple: multiple.decisions,
            bonferroni,
            beta: multiple.calibration.beta,
        })
    }
}

/// Monte-Carlo study over `cfgs`. Run `rep` of scenario `s` generates its
/// data from the key `(seed, s, rep)` and bootstraps from a separate key, so
/// the report is a function of the arguments alone.
pub fn run_study(
    cfgs: &[ModelConfig],
    spec: &StudySpec,
    reps: usize,
    b: usize,
    alpha: f64,
    seed: u64,
) -> Result<StudyReport> {
    if reps == 0 {
        return Err(Error::InvalidParameter("reps must be at least 1".into()));
    }
    if b < 2 {
        return Err(Error::InvalidParameter(format!("B must be at least 2, got {b}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let start = std::time::Instant::now();
    let mut scenarios = Vec::with_capacity(cfgs.len());
    for (s, cfg) in cfgs.iter().enumerate() {
        cfg.validate()?;
        let design = DesignSpec::new(spec.design, cfg.model.k(), cfg.model.p());
        let hb = build(&design, None)?;
        let with_global = if hb.len() == 1 {
            hb.clone()
        } else {
            let mut blocks = vec![hb.stacked("global")?];
            blocks.extend(hb.blocks().iter().cloned());
            HypothesisBlocks::new(blocks)?
        };
        let nulls = true_nulls(cfg, &hb)?;
        let plan = RunPlan {
            cfg,
            hb: &hb,
            with_global: &with_global,
            globalizer: spec.globalizer,
            b,
            alpha,
        };
        let outcomes: Vec<RunOutcome> = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let path = [s as u64, rep as u64];
                plan.run(
                    derive_key(seed, Domain::Simulation, &path),
                    derive_key(seed, Domain::StudyBootstrap, &path),
                )
            })
            .collect::<Result<_>>()?;
        scenarios.push(tabulate(cfg.clone(), hb.labels(), nulls, &outcomes));
    }
    Ok(StudyReport {
        test: *spec,
        reps,
        b,
        alpha,
        seed,
        scenarios,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}

fn tabulate(config: ModelConfig, hypotheses: Vec<String>, true_nulls: Vec<bool>, runs: &[RunOutcome]) -> ScenarioResult {
    let reps = runs.len() as f64;
    let rate = |f: &dyn Fn(&RunOutcome) -> bool| runs.iter().filter(|o| f(o)).count() as f64 / reps;
    let r = hypotheses.len();
    let local = |pick: fn(&RunOutcome) -> &Vec<bool>| -> Vec<f64> {
        (0..r).map(|l| rate(&|o| pick(o)[l])).collect()
    };
    let fwer = |pick: fn(&RunOutcome) -> &Vec<bool>| -> f64 {
        rate(&|o| pick(o).iter().zip(&true_nulls).any(|(d, n)| *d && *n))
    };
    ScenarioResult {
        global_rate: rate(&|o| o.global),
        multiple_global_rate: rate(&|o| o.multiple.iter().any(|&d| d)),
        multiple_local_rates: local(|o| &o.multiple),
        multiple_fwer: fwer(|o| &o.multiple),
        bonferroni_global_rate: rate(&|o| o.bonferroni.iter().any(|&d| d)),
        bonferroni_local_rates: local(|o| &o.bonferroni),
        bonferroni_fwer: fwer(|o| &o.bonferroni),
        mean_beta: runs.iter().map(|o| o.beta).sum::<f64>() / reps,
        config,
        hypotheses,
        true_nulls,
    }
}

/// One row of the flat study table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub scenario: usize,
    pub model: String,
    pub distribution: String,
    pub rho: f64,
    pub delta: f64,
    pub h_vector: String,
    pub sample_sizes: String,
    pub scaled: bool,
    pub statistic: String,
    pub hypothesis: String,
    pub true_null: String,
    pub rate: f64,
}

impl StudyReport {
    pub fn rows(&self) -> Vec<StudyRow> {
        let mut rows = Vec::new();
        for (s, sc) in self.scenarios.iter().enumerate() {
            let cfg = &sc.config;
            let join = |v: Vec<String>| v.join(";");
            let row = |statistic: &str, hypothesis: &str, true_null: &str, rate: f64| StudyRow {
                scenario: s,
                model: json_name(&cfg.model),
                distribution: json_name(&cfg.distribution),
                rho: cfg.rho,
                delta: cfg.delta,
                h_vector: join(cfg.h_vector.iter().map(|h| format!("{h:?}")).collect()),
                sample_sizes: join(cfg.sample_sizes.iter().map(|n| n.to_string()).collect()),
                scaled: cfg.scaled,
                statistic: statistic.into(),
                hypothesis: hypothesis.into(),
                true_null: true_null.into(),
                rate,
            };
            let all_null = if sc.true_nulls.iter().all(|&n| n) { "true" } else { "false" };
            rows.push(row("global", "all", all_null, sc.global_rate));
            rows.push(row("multiple-any", "all", all_null, sc.multiple_global_rate));
            rows.push(row("multiple-fwer", "all", "", sc.multiple_fwer));
            rows.push(row("bonferroni-any", "all", all_null, sc.bonferroni_global_rate));
            rows.push(row("bonferroni-fwer", "all", "", sc.bonferroni_fwer));
            for (l, h) in sc.hypotheses.iter().enumerate() {
                let tn = sc.true_nulls[l].to_string();
                rows.push(row("multiple-local", h, &tn, sc.multiple_local_rates[l]));
                rows.push(row("bonferroni-local", h, &tn, sc.bonferroni_local_rates[l]));
            }
        }
        rows
    }

    pub fn write_csv_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in self.rows() {
            w.serialize(row).map_err(|e| Error::io("<study table>", e.into()))?;
        }
        w.flush().map_err(|e| Error::io("<study table>", e))?;
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(std::io::BufWriter::new(file))
    }
}

pub fn read_study_csv<R: std::io::Read>(reader: R) -> Result<Vec<StudyRow>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::Parse {
                line: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

fn json_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}
