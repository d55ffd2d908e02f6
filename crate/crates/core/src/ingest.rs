//! CSV loading, gap filling and detrending for real series.

use std::fs::File;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{QpgpError, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Detrend {
    #[default]
    None,
    Mean,
    Quadratic,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Impute {
    #[default]
    None,
    Linear,
}

impl FromStr for Detrend {
    type Err = QpgpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Detrend::None),
            "mean" => Ok(Detrend::Mean),
            "quadratic" => Ok(Detrend::Quadratic),
            _ => Err(QpgpError::InvalidParameter(format!("unknown detrend '{s}'"))),
        }
    }
}

impl FromStr for Impute {
    type Err = QpgpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Impute::None),
            "linear" => Ok(Impute::Linear),
            _ => Err(QpgpError::InvalidParameter(format!("unknown impute '{s}'"))),
        }
    }
}

/// Value column by header name or 0-based index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl FromStr for ColumnRef {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse() {
            Ok(i) => ColumnRef::Index(i),
            Err(_) => ColumnRef::Name(s.to_string()),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub detrend: Detrend,
    pub impute: Impute,
    /// Defaults to the only column, or the second of two (the first being time).
    pub column: Option<ColumnRef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Trend {
    None,
    Mean { mean: f64 },
    /// `a + b t + c t²` on t = 1..n.
    Quadratic { a: f64, b: f64, c: f64 },
}

impl Trend {
    /// Trend value at 1-based time `t`.
    pub fn at(&self, t: usize) -> f64 {
        let t = t as f64;
        match *self {
            Trend::None => 0.0,
            Trend::Mean { mean } => mean,
            Trend::Quadratic { a, b, c } => a + b * t + c * t * t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub rows: usize,
    pub missing: usize,
    /// Missing values before the first or after the last observation, filled
    /// with the nearest observed value.
    pub boundary_filled: usize,
    pub header: bool,
    pub column_index: usize,
    pub column_name: Option<String>,
    pub trend: Trend,
}

fn is_missing(field: &str) -> bool {
    let f = field.trim();
    f.is_empty() || f.eq_ignore_ascii_case("nan") || f.eq_ignore_ascii_case("na")
}

fn parse_field(field: &str, line: usize) -> Result<Option<f64>> {
    if is_missing(field) {
        return Ok(None);
    }
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| QpgpError::Parse { line, msg: format!("cannot parse '{}' as a number", field.trim()) })?;
    if !v.is_finite() {
        return Err(QpgpError::Parse { line, msg: format!("non-finite value '{}'", field.trim()) });
    }
    Ok(Some(v))
}

/// Reads `path` and applies `spec`.
pub fn load_csv(path: impl AsRef<Path>, spec: &PreprocessSpec) -> Result<(Vec<f64>, PreprocessReport)> {
    read_csv(File::open(path)?, spec)
}

/// As [`load_csv`] on any reader. Fields are split on commas (no quoting).
/// A first row with a non-numeric, non-missing field is taken as the header.
/// Blank lines are missing values in a one-column file; trailing blank lines
/// are ignored.
pub fn read_csv<R: Read>(mut input: R, spec: &PreprocessSpec) -> Result<(Vec<f64>, PreprocessReport)> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let mut records: Vec<(usize, Vec<&str>)> =
        text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r').split(',').collect())).collect();
    while records.last().is_some_and(|(_, r)| r.len() == 1 && r[0].trim().is_empty()) {
        records.pop();
    }
    if records.is_empty() {
        return Err(QpgpError::EmptySeries);
    }
    let first = &records[0].1;
    let header = first.iter().any(|f| !is_missing(f) && f.trim().parse::<f64>().is_err());
    let names: Option<Vec<String>> = header.then(|| first.iter().map(|f| f.trim().to_string()).collect());
    let width = first.len();

    let column_index = match &spec.column {
        Some(ColumnRef::Index(i)) if *i < width => *i,
        Some(ColumnRef::Index(i)) => {
            return Err(QpgpError::InvalidParameter(format!("column {i} out of range (width {width})")))
        }
        Some(ColumnRef::Name(name)) => names
            .as_ref()
            .and_then(|ns| ns.iter().position(|n| n == name))
            .ok_or_else(|| QpgpError::InvalidParameter(format!("no column named '{name}'")))?,
        None => match width {
            1 => 0,
            2 => 1,
            _ => return Err(QpgpError::InvalidParameter(format!("{width} columns; choose one explicitly"))),
        },
    };

    let body = &records[usize::from(header)..];
    let mut raw = Vec::with_capacity(body.len());
    for (line, rec) in body {
        if rec.len() != width {
            return Err(QpgpError::Parse { line: *line, msg: format!("expected {width} fields, found {}", rec.len()) });
        }
        raw.push(parse_field(rec[column_index], *line)?);
    }
    let missing = raw.iter().filter(|v| v.is_none()).count();
    if missing == raw.len() {
        return Err(QpgpError::EmptySeries);
    }

    let (mut values, boundary_filled) = match spec.impute {
        Impute::Linear => impute_linear(&raw),
        Impute::None if missing > 0 => {
            return Err(QpgpError::InvalidParameter(format!("{missing} missing values and impute = none")))
        }
        Impute::None => (raw.iter().map(|v| v.unwrap_or(f64::NAN)).collect(), 0),
    };

    let trend = match spec.detrend {
        Detrend::None => Trend::None,
        Detrend::Mean => {
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            values.iter_mut().for_each(|v| *v -= mean);
            Trend::Mean { mean }
        }
        Detrend::Quadratic => {
            let (resid, trend) = detrend_quadratic(&values)?;
            values = resid;
            trend
        }
    };

    let report = PreprocessReport {
        rows: body.len(),
        missing,
        boundary_filled,
        header,
        column_index,
        column_name: names.map(|ns| ns[column_index].clone()),
        trend,
    };
    Ok((values, report))
}

/// Linear interpolation between observed neighbours; leading and trailing
/// gaps take the nearest observed value. Returns the filled values and the
/// number of boundary fills. Needs at least one observed value.
pub fn impute_linear(raw: &[Option<f64>]) -> (Vec<f64>, usize) {
    let known: Vec<usize> = (0..raw.len()).filter(|&i| raw[i].is_some()).collect();
    let (first, last) = (known[0], known[known.len() - 1]);
    let mut out = vec![0.0; raw.len()];
    out[..first].fill(raw[first].unwrap());
    out[last..].fill(raw[last].unwrap());
    for w in known.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (ya, yb) = (raw[a].unwrap(), raw[b].unwrap());
        for (i, slot) in out.iter_mut().enumerate().take(b).skip(a) {
            *slot = ya + (yb - ya) * (i - a) as f64 / (b - a) as f64;
        }
    }
    (out, first + (raw.len() - 1 - last))
}

/// Least-squares fit of `a + b t + c t²` on t = 1..n, returning the residuals
/// and the coefficients. Solved by QR on a centred and scaled basis.
pub fn detrend_quadratic(values: &[f64]) -> Result<(Vec<f64>, Trend)> {
    let n = values.len();
    if n < 3 {
        return Err(QpgpError::InvalidParameter(format!("quadratic detrend needs n >= 3, got {n}")));
    }
    let mid = (n as f64 + 1.0) / 2.0;
    let half = ((n as f64 - 1.0) / 2.0).max(1.0);
    let u = |t: usize| (t as f64 - mid) / half;
    let x = DMatrix::from_fn(n, 3, |i, j| u(i + 1).powi(j as i32));
    let y = DVector::from_column_slice(values);
    let qr = x.clone().qr();
    let qty = qr.q().transpose() * &y;
    let g = qr
        .r()
        .solve_upper_triangular(&qty)
        .ok_or_else(|| QpgpError::InvalidParameter("rank-deficient quadratic design".into()))?;
    let fitted = &x * &g;
    let resid = (&y - fitted).iter().copied().collect();
    let (a0, a1, a2) = (g[0], g[1], g[2]);
    let c = a2 / (half * half);
    let b = a1 / half - 2.0 * a2 * mid / (half * half);
    let a = a0 - a1 * mid / half + a2 * mid * mid / (half * half);
    Ok((resid, Trend::Quadratic { a, b, c }))
}
