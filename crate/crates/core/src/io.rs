//! Loading spaces from JSON or CSV and persisting results as versioned JSON.
//!
//! See `docs/formats.md` for the schemas.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mmspace::MmSpace;
use crate::robust::{Curve, RobustResult};
use crate::solver::SolveResult;
use crate::verify::CheckReport;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Format {
    Json,
    Csv,
}

/// How distances are obtained. Only point clouds use the non-precomputed ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Metric {
    Precomputed,
    Euclidean,
    L1,
    Linf,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "precomputed" => Ok(Metric::Precomputed),
            "euclidean" | "l2" => Ok(Metric::Euclidean),
            "l1" | "manhattan" => Ok(Metric::L1),
            "linf" | "chebyshev" => Ok(Metric::Linf),
            _ => Err(Error::Parameter(format!("unknown metric {s:?}; expected precomputed, euclidean, l1 or linf"))),
        }
    }
}

impl Metric {
    fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        let diffs = a.iter().zip(b).map(|(u, v)| (u - v).abs());
        match self {
            Metric::Euclidean => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            Metric::L1 => diffs.sum(),
            Metric::Linf => diffs.fold(0.0, f64::max),
            Metric::Precomputed => unreachable!("precomputed distances are not derived from points"),
        }
    }
}

/// A space on disk.
///
/// For CSV the main file is either a headerless square distance matrix
/// (`metric` absent or `PRECOMPUTED`) or one point per row. Weights come from
/// a separate single-column file and default to uniform.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceFile {
    pub format: Format,
    pub path: PathBuf,
    pub metric: Option<Metric>,
    pub weights_path: Option<PathBuf>,
}

impl SpaceFile {
    /// Infers the format from the extension; anything but `.csv` is JSON.
    pub fn new(path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        let csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        SpaceFile { format: if csv { Format::Csv } else { Format::Json }, path, metric: None, weights_path: None }
    }

    pub fn with_metric(mut self, metric: Metric) -> Self {
        self.metric = Some(metric);
        self
    }

    pub fn with_weights(mut self, path: impl Into<PathBuf>) -> Self {
        self.weights_path = Some(path.into());
        self
    }
}

/// JSON form of a space: exactly one of `distance_matrix` and `points`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema_version: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Metric>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

impl From<&MmSpace> for SpaceJson {
    fn from(s: &MmSpace) -> Self {
        let n = s.len();
        SpaceJson {
            schema_version: Some(SCHEMA_VERSION),
            distance_matrix: Some((0..n).map(|i| s.dist().row(i).iter().copied().collect()).collect()),
            points: None,
            metric: None,
            weights: Some(s.weights().iter().copied().collect()),
            labels: s.labels().map(<[String]>::to_vec),
        }
    }
}

impl SpaceJson {
    pub fn into_space(self, normalize: bool) -> Result<MmSpace> {
        let dist = match (self.distance_matrix, self.points) {
            (Some(_), Some(_)) => {
                return Err(Error::Format("give either distance_matrix or points, not both".into()));
            }
            (None, None) => return Err(Error::Format("missing distance_matrix or points".into())),
            (Some(d), None) => {
                if self.metric.is_some_and(|m| m != Metric::Precomputed) {
                    return Err(Error::Format("a distance_matrix requires metric PRECOMPUTED or none".into()));
                }
                square(&d)?
            }
            (None, Some(pts)) => {
                let metric = self.metric.ok_or_else(|| Error::Format("points require a metric".into()))?;
                point_distances(&pts, metric)?
            }
        };
        build(dist, self.weights, self.labels, normalize)
    }
}

fn square(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
        return Err(Error::Format(format!("distance matrix must be square: row {i} has {} entries, expected {n}", r.len())));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn point_distances(pts: &[Vec<f64>], metric: Metric) -> Result<DMatrix<f64>> {
    if metric == Metric::Precomputed {
        return Err(Error::Format("points need metric EUCLIDEAN, L1 or LINF".into()));
    }
    let dim = pts.first().map_or(0, Vec::len);
    if let Some((i, p)) = pts.iter().enumerate().find(|(_, p)| p.len() != dim) {
        return Err(Error::Format(format!("point {i} has dimension {}, expected {dim}", p.len())));
    }
    let n = pts.len();
    Ok(DMatrix::from_fn(n, n, |i, j| metric.distance(&pts[i], &pts[j])))
}

fn build(dist: DMatrix<f64>, weights: Option<Vec<f64>>, labels: Option<Vec<String>>, normalize: bool) -> Result<MmSpace> {
    let n = dist.nrows();
    if n == 0 {
        return Err(Error::Format("a space needs at least one point".into()));
    }
    let w = match weights {
        Some(w) if w.len() != n => {
            return Err(Error::Dimension(format!("{} weights for {n} points", w.len())));
        }
        Some(w) => DVector::from_vec(w),
        None => DVector::from_element(n, 1.0 / n as f64),
    };
    let w = if normalize {
        let s = w.sum();
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Parameter(format!("cannot normalize weights with sum {s}")));
        }
        w / s
    } else {
        w
    };
    let space = MmSpace::new(dist, w)?;
    match labels {
        Some(l) => space.with_labels(l),
        None => Ok(space),
    }
}

pub fn load_space(file: &SpaceFile, normalize: bool) -> Result<MmSpace> {
    match file.format {
        Format::Json => {
            let text = fs::read_to_string(&file.path)?;
            let mut parsed: SpaceJson = serde_json::from_str(&text)
                .map_err(|e| Error::Format(format!("{}: {e}", file.path.display())))?;
            if let Some(m) = file.metric {
                parsed.metric.get_or_insert(m);
            }
            if let Some(wp) = &file.weights_path {
                parsed.weights = Some(read_weights(wp)?);
            }
            parsed.into_space(normalize)
        }
        Format::Csv => {
            let rows = read_csv(&file.path)?;
            let dist = match file.metric {
                None | Some(Metric::Precomputed) => square(&rows)?,
                Some(m) => point_distances(&rows, m)?,
            };
            let weights = file.weights_path.as_deref().map(read_weights).transpose()?;
            build(dist, weights, None, normalize)
        }
    }
}

/// Headerless numeric CSV.
fn read_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, csv::Position::line);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let row = rec
            .iter()
            .enumerate()
            .map(|(c, f)| {
                parse_number(f).ok_or_else(|| {
                    Error::Format(format!("{}: line {line}, column {}: not a number: {f:?}", path.display(), c + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push(row);
    }
    Ok(out)
}

fn parse_number(s: &str) -> Option<f64> {
    match s.to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" => Some(f64::INFINITY),
        _ => s.parse().ok(),
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        Error::Io(e.into())
    } else {
        Error::Format(format!("{}: {e}", path.display()))
    }
}

fn read_weights(path: &Path) -> Result<Vec<f64>> {
    let rows = read_csv(path)?;
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| match r.as_slice() {
            [w] => Ok(*w),
            _ => Err(Error::Format(format!("{}: row {} must hold one weight, found {}", path.display(), i + 1, r.len()))),
        })
        .collect()
}

pub fn save_space(space: &MmSpace, path: &Path) -> Result<()> {
    write_json(path, &SpaceJson::from(space))
}

/// Result types that can be saved with [`save_result`].
pub trait Persist: Serialize + DeserializeOwned {
    const KIND: &'static str;
}

impl Persist for SolveResult {
    const KIND: &'static str = "solve_result";
}

impl Persist for RobustResult {
    const KIND: &'static str = "robust_result";
}

impl Persist for CheckReport {
    const KIND: &'static str = "check_report";
}

impl Persist for Vec<CheckReport> {
    const KIND: &'static str = "check_reports";
}

impl Persist for Curve {
    const KIND: &'static str = "curve";
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    schema_version: u32,
    kind: String,
    data: T,
}

pub fn to_json<T: Persist>(value: &T) -> Result<String> {
    let env = Envelope { schema_version: SCHEMA_VERSION, kind: T::KIND.to_string(), data: value };
    Ok(serde_json::to_string_pretty(&env)?)
}

pub fn from_json<T: Persist>(text: &str) -> Result<T> {
    let env: Envelope<T> = serde_json::from_str(text)?;
    if env.schema_version != SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            env.schema_version
        )));
    }
    if env.kind != T::KIND {
        return Err(Error::Format(format!("expected kind {:?}, found {:?}", T::KIND, env.kind)));
    }
    Ok(env.data)
}

pub fn save_result<T: Persist>(value: &T, path: &Path) -> Result<()> {
    let mut text = to_json(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_result<T: Persist>(path: &Path) -> Result<T> {
    from_json(&fs::read_to_string(path)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}
