//! Tables, scaling, splits and missingness masks.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

/// Prediction task attached to a target column.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Regression,
    BinClass,
    MultiClass,
}

impl Task {
    pub fn is_classification(self) -> bool {
        !matches!(self, Task::Regression)
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(Task::Regression),
            "binclass" => Ok(Task::BinClass),
            "multiclass" => Ok(Task::MultiClass),
            _ => Err(Error::InvalidArgument(format!(
                "unknown task {s:?} (expected regression, binclass or multiclass)"
            ))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Regression => "regression",
            Task::BinClass => "binclass",
            Task::MultiClass => "multiclass",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Target {
    pub name: String,
    pub values: Vec<f64>,
    pub task: Task,
}

/// A complete numeric table with an optional target column.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    pub feature_names: Vec<String>,
    pub target: Option<Target>,
}

impl Dataset {
    pub fn rows(&self) -> usize {
        self.features.rows()
    }

    pub fn cols(&self) -> usize {
        self.features.cols()
    }

    /// Rows `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: select_rows(&self.features, idx),
            feature_names: self.feature_names.clone(),
            target: self.target.as_ref().map(|t| Target {
                name: t.name.clone(),
                values: idx.iter().map(|&i| t.values[i]).collect(),
                task: t.task,
            }),
        }
    }

    /// Seeded shuffle, then the first `fraction` of rows for training.
    pub fn split(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        let (a, b) = split_indices(self.rows(), fraction, seed)?;
        Ok((self.select(&a), self.select(&b)))
    }
}

pub(crate) fn select_rows<F: Real>(x: &Tensor<F>, idx: &[usize]) -> Tensor<F> {
    let mut data = Vec::with_capacity(idx.len() * x.cols());
    for &i in idx {
        data.extend_from_slice(x.row(i));
    }
    Tensor::from_parts(vec![idx.len(), x.cols()], data)
}

/// Train/test row indices: a seeded permutation cut at `round(fraction * n)`,
/// kept within `1..n` so neither side is empty.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("cannot split {n} rows")));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("split fraction {fraction} outside (0, 1)")));
    }
    let mut perm = Rng::new(seed).permutation(n);
    let cut = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let test = perm.split_off(cut);
    Ok((perm, test))
}

/// A numeric table read from CSV in which some cells may be missing.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    pub names: Vec<String>,
    pub rows: usize,
    /// Row-major cells; `None` where the file had an empty cell, `NA` or `NaN`.
    pub cells: Vec<Option<f64>>,
}

impl RawTable {
    pub fn cols(&self) -> usize {
        self.names.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Values with NaN at missing cells, and the mask of present cells.
    pub fn to_observed(&self, columns: &[usize]) -> (Tensor, Mask) {
        let k = columns.len();
        let mut data = Vec::with_capacity(self.rows * k);
        let mut known = Vec::with_capacity(self.rows * k);
        for r in 0..self.rows {
            for &c in columns {
                let v = self.cells[r * self.cols() + c];
                data.push(v.unwrap_or(f64::NAN));
                known.push(v.is_some());
            }
        }
        (Tensor::from_parts(vec![self.rows, k], data), Mask { rows: self.rows, cols: k, known })
    }
}

fn is_missing_token(s: &str) -> bool {
    s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan")
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => Error::Parse {
            path: path.into(),
            line,
            column: len as usize,
            message: format!("expected {expected_len} fields, found {len}"),
        },
        other => Error::Parse {
            path: path.into(),
            line,
            column: 0,
            message: format!("{other:?}"),
        },
    }
}

/// Reads a headed CSV of numbers. Lines starting with `#` are comments.
/// Empty, `NA` and `NaN` cells are missing; anything else that does not
/// parse as a number is an error naming the line and (1-based) column.
pub fn read_table(path: &Path) -> Result<RawTable> {
    let mut reader = csv_reader(path)?;
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if names.is_empty() || names.iter().all(String::is_empty) {
        return Err(Error::InvalidArgument(format!("{}: empty file", path.display())));
    }
    let mut cells = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        for (c, field) in record.iter().enumerate() {
            if is_missing_token(field) {
                cells.push(None);
                continue;
            }
            match field.parse::<f64>() {
                Ok(v) if v.is_finite() => cells.push(Some(v)),
                _ => {
                    return Err(Error::Parse {
                        path: path.into(),
                        line,
                        column: c + 1,
                        message: format!("cannot parse {field:?} as a finite number"),
                    })
                }
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::InvalidArgument(format!("{}: no data rows", path.display())));
    }
    Ok(RawTable { names, rows, cells })
}

/// Loads a complete dataset. With `target = Some((name, task))` that column is
/// split off as the target; every other column is a feature.
pub fn load_csv(path: &Path, target: Option<(&str, Task)>) -> Result<Dataset> {
    let table = read_table(path)?;
    if let Some(i) = table.cells.iter().position(Option::is_none) {
        return Err(Error::InvalidArgument(format!(
            "{}: missing value in row {}, column {:?}; training data must be complete",
            path.display(),
            i / table.cols() + 1,
            table.names[i % table.cols()]
        )));
    }
    let target_col = match target {
        Some((name, _)) => Some(table.column_index(name).ok_or_else(|| {
            Error::InvalidArgument(format!("{}: no column named {name:?}", path.display()))
        })?),
        None => None,
    };
    let feature_cols: Vec<usize> = (0..table.cols()).filter(|&c| Some(c) != target_col).collect();
    if feature_cols.is_empty() {
        return Err(Error::InvalidArgument(format!("{}: no feature columns", path.display())));
    }
    let (features, _) = table.to_observed(&feature_cols);
    let target = match (target, target_col) {
        (Some((name, task)), Some(c)) => {
            let values: Vec<f64> = (0..table.rows).map(|r| table.cells[r * table.cols() + c].unwrap()).collect();
            if task.is_classification() && values.iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{}: class labels in {name:?} must be non-negative integers",
                    path.display()
                )));
            }
            Some(Target {
                name: name.to_string(),
                values,
                task,
            })
        }
        _ => None,
    };
    Ok(Dataset {
        features,
        feature_names: feature_cols.iter().map(|&c| table.names[c].clone()).collect(),
        target,
    })
}

/// Writes a headed CSV. `header` lines are emitted first as `#` comments.
/// Cells marked missing in `mask` are left empty. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_csv(path: &Path, header: &[String], names: &[String], x: &Tensor, mask: Option<&Mask>) -> Result<()> {
    std::fs::write(path, csv_string(header, names, x, mask)?).map_err(|e| Error::io(path, e))
}

pub fn csv_string(header: &[String], names: &[String], x: &Tensor, mask: Option<&Mask>) -> Result<String> {
    if x.rank() != 2 || names.len() != x.cols() {
        return Err(Error::InvalidArgument(format!(
            "{} column names for a table of shape {:?}",
            names.len(),
            x.shape()
        )));
    }
    if let Some(m) = mask {
        m.check_shape(x.rows(), x.cols())?;
    }
    let mut out = String::new();
    for h in header {
        out.push_str("# ");
        out.push_str(h);
        out.push('\n');
    }
    out.push_str(&names.join(","));
    out.push('\n');
    for r in 0..x.rows() {
        for c in 0..x.cols() {
            if c > 0 {
                out.push(',');
            }
            if mask.map_or(true, |m| m.is_known(r, c)) {
                out.push_str(&x.at(r, c).to_string());
            }
        }
        out.push('\n');
    }
    Ok(out)
}

/// Per-column min-max scaling onto `range`.
#[derive(Clone, Debug, PartialEq)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub range: (f64, f64),
}

impl MinMaxScaler {
    /// Column minima and maxima of a complete table.
    pub fn fit(x: &Tensor) -> Result<Self> {
        if x.rank() != 2 || x.rows() == 0 {
            return Err(Error::InvalidShape {
                shape: x.shape().to_vec(),
                reason: "scaler needs a non-empty [rows, k] table".into(),
            });
        }
        x.ensure_finite("scaler fit")?;
        let k = x.cols();
        let mut min = vec![f64::INFINITY; k];
        let mut max = vec![f64::NEG_INFINITY; k];
        for r in 0..x.rows() {
            for (c, &v) in x.row(r).iter().enumerate() {
                min[c] = min[c].min(v);
                max[c] = max[c].max(v);
            }
        }
        Ok(Self { min, max, range: (0.0, 1.0) })
    }

    pub fn cols(&self) -> usize {
        self.min.len()
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.rank() != 2 || x.cols() != self.cols() {
            return Err(Error::InvalidShape {
                shape: x.shape().to_vec(),
                reason: format!("scaler was fitted on {} columns", self.cols()),
            });
        }
        Ok(())
    }

    /// Values outside the fitted range map outside `range`; there is no
    /// clipping. Constant columns map to `range.0`. NaN stays NaN.
    pub fn transform(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let (lo, hi) = self.range;
        let k = self.cols();
        Ok(Tensor::from_fn(x.shape(), |i| {
            let c = i % k;
            let span = self.max[c] - self.min[c];
            if span == 0.0 {
                lo + 0.0 * x.data()[i]
            } else {
                (x.data()[i] - self.min[c]) / span * (hi - lo) + lo
            }
        }))
    }

    /// Inverse of [`MinMaxScaler::transform`]; constant columns return their value.
    pub fn inverse_transform(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let (lo, hi) = self.range;
        let k = self.cols();
        Ok(Tensor::from_fn(x.shape(), |i| {
            let c = i % k;
            let span = self.max[c] - self.min[c];
            if span == 0.0 {
                self.min[c]
            } else {
                (x.data()[i] - lo) / (hi - lo) * span + self.min[c]
            }
        }))
    }

    pub fn fit_transform(x: &Tensor) -> Result<(Self, Tensor)> {
        let s = Self::fit(x)?;
        let t = s.transform(x)?;
        Ok((s, t))
    }
}

/// Which entries of an `rows x cols` table are observed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    known: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, known: Vec<bool>) -> Result<Self> {
        if known.len() != rows * cols {
            return Err(Error::InvalidShape {
                shape: vec![rows, cols],
                reason: format!("mask has {} entries", known.len()),
            });
        }
        Ok(Self { rows, cols, known })
    }

    pub fn all_known(rows: usize, cols: usize) -> Self {
        Self { rows, cols, known: vec![true; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn known(&self) -> &[bool] {
        &self.known
    }

    pub fn is_known(&self, row: usize, col: usize) -> bool {
        self.known[row * self.cols + col]
    }

    pub fn n_missing(&self) -> usize {
        self.known.iter().filter(|&&k| !k).count()
    }

    pub fn missing_fraction(&self) -> f64 {
        self.n_missing() as f64 / self.known.len().max(1) as f64
    }

    pub fn check_shape(&self, rows: usize, cols: usize) -> Result<()> {
        if (rows, cols) != (self.rows, self.cols) {
            return Err(Error::shape("mask", &[self.rows, self.cols], &[rows, cols]));
        }
        Ok(())
    }

    /// Copies `x` with missing entries replaced by `fill`.
    pub fn apply<F: Real>(&self, x: &Tensor<F>, fill: F) -> Result<Tensor<F>> {
        self.check_shape(x.rows(), x.cols())?;
        Ok(Tensor::from_fn(x.shape(), |i| if self.known[i] { x.data()[i] } else { fill }))
    }

    /// `0`/`1` CSV (1 = known) with a `c0,c1,...` header.
    pub fn to_csv(&self) -> String {
        let mut s = (0..self.cols).map(|c| format!("c{c}")).collect::<Vec<_>>().join(",");
        s.push('\n');
        for row in self.known.chunks(self.cols.max(1)) {
            let cells: Vec<&str> = row.iter().map(|&k| if k { "1" } else { "0" }).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let table = read_table(path)?;
        let mut known = Vec::with_capacity(table.cells.len());
        for (i, v) in table.cells.iter().enumerate() {
            match v {
                Some(v) if *v == 1.0 => known.push(true),
                Some(v) if *v == 0.0 => known.push(false),
                _ => {
                    return Err(Error::Parse {
                        path: path.into(),
                        line: 0,
                        column: i % table.cols() + 1,
                        message: format!("mask row {} holds a value other than 0 or 1", i / table.cols() + 1),
                    })
                }
            }
        }
        Mask::new(table.rows, table.cols(), known)
    }
}

/// `rows` draws of a standard bivariate normal with correlation `rho`.
pub fn correlated_gaussian(rows: usize, rho: f64, seed: u64) -> Result<Tensor> {
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!("correlation {rho} outside [-1, 1]")));
    }
    let mut rng = Rng::new(seed);
    let c = (1.0 - rho * rho).sqrt();
    let mut data = Vec::with_capacity(2 * rows);
    for _ in 0..rows {
        let a = rng.normal();
        let b = rng.normal();
        data.push(a);
        data.push(rho * a + c * b);
    }
    Tensor::new(vec![rows, 2], data)
}

/// Each entry missing independently with probability `p`.
pub fn gen_mcar_mask(rows: usize, cols: usize, p: f64, seed: u64) -> Result<Mask> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("MCAR probability {p} outside (0, 1)")));
    }
    let mut rng = Rng::new(seed);
    let known = (0..rows * cols).map(|_| !rng.bernoulli(p)).collect();
    Mask::new(rows, cols, known)
}

/// `p_col` whole columns, chosen uniformly without replacement, are missing.
pub fn gen_mar_mask(rows: usize, cols: usize, p_col: usize, seed: u64) -> Result<Mask> {
    if p_col == 0 || p_col >= cols {
        return Err(Error::InvalidArgument(format!(
            "MAR column count {p_col} must be in 1..{cols} for {cols} columns"
        )));
    }
    let chosen = &Rng::new(seed).permutation(cols)[..p_col];
    let known = (0..rows * cols).map(|i| !chosen.contains(&(i % cols))).collect();
    Mask::new(rows, cols, known)
}

/// Missingness mechanism and its level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MaskSpec {
    Mcar(f64),
    Mar(usize),
}

impl MaskSpec {
    pub fn generate(&self, rows: usize, cols: usize, seed: u64) -> Result<Mask> {
        match *self {
            MaskSpec::Mcar(p) => gen_mcar_mask(rows, cols, p, seed),
            MaskSpec::Mar(n) => gen_mar_mask(rows, cols, n, seed),
        }
    }

    pub fn is_mar(&self) -> bool {
        matches!(self, MaskSpec::Mar(_))
    }

    /// MCAR 10%..90% in steps of 10, then MAR with 1..4 columns.
    pub fn default_grid() -> Vec<MaskSpec> {
        let mut g: Vec<MaskSpec> = (1..=9).map(|i| MaskSpec::Mcar(i as f64 / 10.0)).collect();
        g.extend((1..=4).map(MaskSpec::Mar));
        g
    }
}

impl fmt::Display for MaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskSpec::Mcar(p) => write!(f, "mcar={p}"),
            MaskSpec::Mar(n) => write!(f, "mar={n}"),
        }
    }
}

impl FromStr for MaskSpec {
    type Err = Error;

    /// `mcar=0.3` or `mar=2`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad mask spec {s:?} (expected mcar=P or mar=N)"));
        let (kind, value) = s.split_once('=').ok_or_else(bad)?;
        match kind.trim() {
            "mcar" => {
                let p: f64 = value.trim().parse().map_err(|_| bad())?;
                if !(p > 0.0 && p < 1.0) {
                    return Err(bad());
                }
                Ok(MaskSpec::Mcar(p))
            }
            "mar" => match value.trim().parse() {
                Ok(n) if n >= 1 => Ok(MaskSpec::Mar(n)),
                _ => Err(bad()),
            },
            _ => Err(bad()),
        }
    }
}
