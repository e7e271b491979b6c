//! Discretized multivariate functional samples on a shared time grid.
//!
//! Data files are long-format CSV with the header
//! `group,subject,variable,time_index,value`, one scalar measurement per
//! line. Groups and subjects keep their order of first appearance;
//! `variable` and `time_index` are zero-based integers.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly increasing evaluation points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidGrid("grid needs at least one point".into()));
        }
        if let Some(&v) = points.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                value: v,
                context: "time grid".into(),
            });
        }
        if let Some(i) = points.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(format!(
                "points must be strictly increasing (index {} -> {})",
                i,
                i + 1
            )));
        }
        Ok(Self { points })
    }

    /// `len` equally spaced points on `[0, 1]` (just `0` when `len == 1`).
    pub fn uniform(len: usize) -> Result<Self> {
        match len {
            0 => Err(Error::InvalidGrid("grid needs at least one point".into())),
            1 => Self::new(vec![0.0]),
            _ => {
                let step = (len - 1) as f64;
                Self::new((0..len).map(|i| i as f64 / step).collect())
            }
        }
    }

    /// Reads one time value per line; blank lines are skipped.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut points = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let v: f64 = line.parse().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("grid value {line:?} is not a number"),
            })?;
            points.push(v);
        }
        Self::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// One sample: `n_i` subjects, each a `p × T` array.
///
/// Curves are stored as an `n_i × (p·T)` matrix; column `m·T + t` holds
/// variable `m` at grid index `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    label: String,
    subjects: Vec<String>,
    n_vars: usize,
    n_times: usize,
    curves: DMatrix<f64>,
}

impl Group {
    pub fn new(
        label: impl Into<String>,
        subjects: Vec<String>,
        n_vars: usize,
        n_times: usize,
        curves: DMatrix<f64>,
    ) -> Result<Self> {
        let label = label.into();
        if n_vars == 0 || n_times == 0 {
            return Err(Error::InconsistentDimensions(format!(
                "group {label:?}: p and T must be positive"
            )));
        }
        if curves.ncols() != n_vars * n_times || curves.nrows() != subjects.len() {
            return Err(Error::InconsistentDimensions(format!(
                "group {label:?}: curve matrix is {}x{}, expected {}x{}",
                curves.nrows(),
                curves.ncols(),
                subjects.len(),
                n_vars * n_times
            )));
        }
        Ok(Self {
            label,
            subjects,
            n_vars,
            n_times,
            curves,
        })
    }

    /// Builds a group from `curves[subject][variable][time]`, naming subjects
    /// `s1, s2, ...`.
    pub fn from_nested(label: impl Into<String>, curves: &[Vec<Vec<f64>>]) -> Result<Self> {
        let label = label.into();
        let n = curves.len();
        let p = curves.first().map_or(0, |c| c.len());
        let t = curves.first().and_then(|c| c.first()).map_or(0, |c| c.len());
        if curves.iter().any(|c| c.len() != p || c.iter().any(|v| v.len() != t)) {
            return Err(Error::InconsistentDimensions(format!(
                "group {label:?}: subjects have differing shapes"
            )));
        }
        let m = DMatrix::from_fn(n, p * t, |j, col| curves[j][col / t][col % t]);
        Self::new(label, default_subject_ids(n), p, t, m)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn subjects(&self) -> &[String] {
        &self.subjects
    }

    pub fn size(&self) -> usize {
        self.curves.nrows()
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn value(&self, subject: usize, variable: usize, time: usize) -> f64 {
        self.curves[(subject, variable * self.n_times + time)]
    }

    pub fn curves(&self) -> &DMatrix<f64> {
        &self.curves
    }

    pub(crate) fn with_curves(&self, curves: DMatrix<f64>) -> Self {
        debug_assert_eq!(curves.shape(), self.curves.shape());
        Self {
            curves,
            ..self.clone()
        }
    }
}

pub(crate) fn default_subject_ids(n: usize) -> Vec<String> {
    (1..=n).map(|j| format!("s{j}")).collect()
}

/// `k` independent groups sharing `p` functional variables and one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDataset {
    grid: TimeGrid,
    groups: Vec<Group>,
}

impl FunctionalDataset {
    pub fn new(grid: TimeGrid, groups: Vec<Group>) -> Result<Self> {
        let first = groups
            .first()
            .ok_or_else(|| Error::EmptyInput("dataset has no groups".into()))?;
        let (p, t) = (first.n_vars, first.n_times);
        if t != grid.len() {
            return Err(Error::InconsistentDimensions(format!(
                "curves have {t} time points but the grid has {}",
                grid.len()
            )));
        }
        for g in &groups {
            if g.n_vars != p || g.n_times != t {
                return Err(Error::InconsistentDimensions(format!(
                    "group {:?} is {}x{}, group {:?} is {p}x{t}",
                    g.label, g.n_vars, g.n_times, first.label
                )));
            }
            if g.size() < 2 {
                return Err(Error::GroupTooSmall {
                    group: g.label.clone(),
                    size: g.size(),
                });
            }
            if let Some(&v) = g.curves.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    value: v,
                    context: format!("curve value in group {:?}", g.label),
                });
            }
        }
        Ok(Self { grid, groups })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn k(&self) -> usize {
        self.groups.len()
    }

    pub fn p(&self) -> usize {
        self.groups[0].n_vars
    }

    pub fn n_times(&self) -> usize {
        self.grid.len()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Group::size).collect()
    }

    pub fn n_total(&self) -> usize {
        self.groups.iter().map(Group::size).sum()
    }

    /// Multiplies variable `m` at grid index `t` by `scale[(m, t)]` in
    /// every curve.
    pub fn apply_scaling(&self, scale: &DMatrix<f64>) -> Result<Self> {
        let (p, t) = (self.p(), self.n_times());
        if scale.shape() != (p, t) {
            return Err(Error::DimensionMismatch(format!(
                "scale is {}x{}, dataset is {p}x{t}",
                scale.nrows(),
                scale.ncols()
            )));
        }
        for m in 0..p {
            for ti in 0..t {
                let v = scale[(m, ti)];
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::NonPositiveScale {
                        value: v,
                        variable: m,
                        time_index: ti,
                    });
                }
            }
        }
        let groups = self
            .groups
            .iter()
            .map(|g| {
                let mut c = g.curves.clone();
                for (col, mut column) in c.column_iter_mut().enumerate() {
                    column *= scale[(col / t, col % t)];
                }
                g.with_curves(c)
            })
            .collect();
        Ok(Self {
            grid: self.grid.clone(),
            groups,
        })
    }

    /// Loads a long-format CSV file; `grid_path` overrides the default
    /// uniform grid on `[0, 1]`.
    pub fn load_csv(path: impl AsRef<Path>, grid_path: Option<&Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let grid = grid_path.map(TimeGrid::from_file).transpose()?;
        Self::read_csv(file, grid)
    }

    pub fn read_csv<R: Read>(reader: R, grid: Option<TimeGrid>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut table = LongTable::default();
        for (i, rec) in rdr.deserialize::<Row>().enumerate() {
            let row = rec.map_err(|e| Error::Parse {
                line: e.position().map_or(i + 2, |p| p.line() as usize),
                message: e.to_string(),
            })?;
            if !row.value.is_finite() {
                return Err(Error::NonFinite {
                    value: row.value,
                    context: format!(
                        "group {:?}, subject {:?}, variable {}, time index {}",
                        row.group, row.subject, row.variable, row.time_index
                    ),
                });
            }
            table.insert(row)?;
        }
        table.into_dataset(grid)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    /// Writes the long format with shortest round-trip float formatting.
    pub fn write_csv_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "group,subject,variable,time_index,value")?;
        for g in &self.groups {
            for (j, subject) in g.subjects.iter().enumerate() {
                for m in 0..g.n_vars {
                    for t in 0..g.n_times {
                        writeln!(
                            w,
                            "{},{},{m},{t},{:?}",
                            csv_field(&g.label),
                            csv_field(subject),
                            g.value(j, m, t)
                        )?;
                    }
                }
            }
        }
        w.flush()
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) || s.trim() != s {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Reads a hypothesized function `c` from CSV with header
/// `row,time_index,value` into a `rows × n_times` matrix. Every cell must
/// appear exactly once.
pub fn read_pattern_csv<R: Read>(reader: R, rows: usize, n_times: usize) -> Result<DMatrix<f64>> {
    #[derive(Deserialize)]
    struct Cell {
        row: usize,
        time_index: usize,
        value: f64,
    }
    let mut c = DMatrix::from_element(rows, n_times, f64::NAN);
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    for (i, rec) in rdr.deserialize::<Cell>().enumerate() {
        let cell = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(i + 2, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        if cell.row >= rows || cell.time_index >= n_times {
            return Err(Error::DimensionMismatch(format!(
                "c cell ({}, {}) outside {rows} x {n_times}",
                cell.row, cell.time_index
            )));
        }
        if !cell.value.is_finite() {
            return Err(Error::NonFinite {
                value: cell.value,
                context: format!("c row {}, time index {}", cell.row, cell.time_index),
            });
        }
        if !c[(cell.row, cell.time_index)].is_nan() {
            return Err(Error::Parse {
                line: i + 2,
                message: format!("duplicate c cell ({}, {})", cell.row, cell.time_index),
            });
        }
        c[(cell.row, cell.time_index)] = cell.value;
    }
    if let Some(pos) = c.iter().position(|v| v.is_nan()) {
        return Err(Error::EmptyInput(format!(
            "c cell ({}, {}) is missing",
            pos % rows,
            pos / rows
        )));
    }
    Ok(c)
}

pub fn load_pattern_csv(path: impl AsRef<Path>, rows: usize, n_times: usize) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_pattern_csv(file, rows, n_times)
}

#[derive(Debug, Deserialize)]
struct Row {
    group: String,
    subject: String,
    variable: usize,
    time_index: usize,
    value: f64,
}

#[derive(Default)]
struct SubjectCells {
    id: String,
    cells: HashMap<(usize, usize), f64>,
    max_var: usize,
    max_time: usize,
}

#[derive(Default)]
struct LongTable {
    groups: Vec<(String, Vec<SubjectCells>, HashMap<String, usize>)>,
    group_index: HashMap<String, usize>,
}

impl LongTable {
    fn insert(&mut self, row: Row) -> Result<()> {
        let gi = match self.group_index.get(&row.group) {
            Some(&gi) => gi,
            None => {
                self.groups.push((row.group.clone(), Vec::new(), HashMap::new()));
                self.group_index.insert(row.group.clone(), self.groups.len() - 1);
                self.groups.len() - 1
            }
        };
        let (_, subjects, index) = &mut self.groups[gi];
        let si = match index.get(&row.subject) {
            Some(&si) => si,
            None => {
                subjects.push(SubjectCells {
                    id: row.subject.clone(),
                    ..Default::default()
                });
                index.insert(row.subject.clone(), subjects.len() - 1);
                subjects.len() - 1
            }
        };
        let s = &mut subjects[si];
        if s.cells.insert((row.variable, row.time_index), row.value).is_some() {
            return Err(Error::DuplicateCell {
                group: row.group,
                subject: row.subject,
                variable: row.variable,
                time_index: row.time_index,
            });
        }
        s.max_var = s.max_var.max(row.variable);
        s.max_time = s.max_time.max(row.time_index);
        Ok(())
    }

    fn into_dataset(self, grid: Option<TimeGrid>) -> Result<FunctionalDataset> {
        let all = || self.groups.iter().flat_map(|(_, s, _)| s.iter());
        let p = all().map(|s| s.max_var + 1).max().ok_or_else(|| {
            Error::EmptyInput("data file contains no measurements".into())
        })?;
        let t = all().map(|s| s.max_time + 1).max().unwrap_or(0);

        for (label, subjects, _) in &self.groups {
            for s in subjects {
                let (ps, ts) = (s.max_var + 1, s.max_time + 1);
                let complete_box = s.cells.len() == ps * ts;
                if complete_box && (ps, ts) != (p, t) {
                    return Err(Error::InconsistentDimensions(format!(
                        "subject {:?} of group {label:?} has p={ps}, T={ts}; others reach p={p}, T={t}",
                        s.id
                    )));
                }
                if s.cells.len() != p * t {
                    let (variable, time_index) = (0..p)
                        .flat_map(|m| (0..t).map(move |ti| (m, ti)))
                        .find(|c| !s.cells.contains_key(c))
                        .expect("incomplete subject has a missing cell");
                    return Err(Error::MissingCell {
                        group: label.clone(),
                        subject: s.id.clone(),
                        variable,
                        time_index,
                    });
                }
            }
        }

        let grid = match grid {
            Some(g) => g,
            None => TimeGrid::uniform(t)?,
        };
        let groups = self
            .groups
            .into_iter()
            .map(|(label, subjects, _)| {
                let curves = DMatrix::from_fn(subjects.len(), p * t, |j, col| {
                    subjects[j].cells[&(col / t, col % t)]
                });
                let ids = subjects.into_iter().map(|s| s.id).collect();
                Group::new(label, ids, p, t, curves)
            })
            .collect::<Result<Vec<_>>>()?;
        FunctionalDataset::new(grid, groups)
    }
}
