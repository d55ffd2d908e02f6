//! Naive-versus-structured timing on the simulation regime (p = 10,
//! MacKay(1, 1), ω = 0.5). Both paths run on the same generated series and
//! must agree before anything is timed.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{QpgpError, Result};
use crate::kernels::PeriodicKernel;
use crate::likelihood::{nll_block, nll_naive};
use crate::predictor::{predict_fast, predict_naive, PredictionTrace};
use crate::process::{generate_len, BlockSeries, QpgpModel};

pub const BENCH_PERIOD: usize = 10;
pub const BENCH_OMEGA: f64 = 0.5;
pub const AGREEMENT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchSuite {
    Likelihood,
    Prediction,
}

impl fmt::Display for BenchSuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchSuite::Likelihood => "likelihood",
            BenchSuite::Prediction => "prediction",
        })
    }
}

impl FromStr for BenchSuite {
    type Err = QpgpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "likelihood" => Ok(BenchSuite::Likelihood),
            "prediction" => Ok(BenchSuite::Prediction),
            _ => Err(QpgpError::InvalidParameter(format!("unknown bench suite '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub suite: BenchSuite,
    pub sizes: Vec<usize>,
    pub seed: u64,
    pub reps: usize,
    pub warmup: usize,
}

impl BenchConfig {
    pub fn new(suite: BenchSuite, sizes: Vec<usize>, seed: u64) -> Self {
        Self { suite, sizes, seed, reps: 7, warmup: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub suite: BenchSuite,
    pub n: usize,
    pub naive_ms: f64,
    pub structured_ms: f64,
    pub speedup: f64,
    /// Largest relative disagreement between the two paths.
    pub max_rel_diff: f64,
}

/// The benchmark model.
pub fn bench_model() -> QpgpModel {
    let kernel = PeriodicKernel::mackay(BENCH_PERIOD, 1.0, 1.0).expect("valid kernel");
    QpgpModel::new(BENCH_OMEGA, kernel).expect("valid model")
}

/// Rounds to three significant figures.
pub fn round_sig3(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let scale = 10f64.powi(2 - x.abs().log10().floor() as i32);
    (x * scale).round() / scale
}

fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn trace_diff(a: &PredictionTrace, b: &PredictionTrace) -> f64 {
    let pairs = [(&a.y_hat, &b.y_hat), (&a.var_hat, &b.var_hat), (&a.predictor_var, &b.predictor_var)];
    pairs
        .iter()
        .flat_map(|(x, y)| x.iter().zip(y.iter()).map(|(u, v)| rel_diff(*u, *v)))
        .fold(0.0, f64::max)
}

/// Median wall time in milliseconds of `reps` runs after `warmup` discarded runs.
pub fn median_ms<T>(warmup: usize, reps: usize, mut f: impl FnMut() -> T) -> f64 {
    for _ in 0..warmup {
        std::hint::black_box(f());
    }
    let mut times: Vec<f64> = (0..reps.max(1))
        .map(|_| {
            let start = Instant::now();
            std::hint::black_box(f());
            start.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    median(&mut times)
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len();
    if m % 2 == 1 {
        xs[m / 2]
    } else {
        0.5 * (xs[m / 2 - 1] + xs[m / 2])
    }
}

fn check(n: usize, diff: f64) -> Result<()> {
    if diff > AGREEMENT_TOL || diff.is_nan() {
        return Err(QpgpError::BenchMismatch(format!("n = {n}: relative difference {diff:.3e}")));
    }
    Ok(())
}

fn bench_one(suite: BenchSuite, model: &QpgpModel, series: &BlockSeries, warmup: usize, reps: usize) -> Result<BenchRow> {
    let n = series.len();
    let (diff, naive_ms, structured_ms) = match suite {
        BenchSuite::Likelihood => {
            let diff = rel_diff(nll_naive(series, model)?.value, nll_block(series, model)?.value);
            check(n, diff)?;
            let naive = median_ms(warmup, reps, || nll_naive(series, model));
            let fast = median_ms(warmup, reps, || nll_block(series, model));
            (diff, naive, fast)
        }
        BenchSuite::Prediction => {
            let diff = trace_diff(&predict_naive(series, model)?, &predict_fast(series, model)?);
            check(n, diff)?;
            let naive = median_ms(warmup, reps, || predict_naive(series, model));
            let fast = median_ms(warmup, reps, || predict_fast(series, model));
            (diff, naive, fast)
        }
    };
    Ok(BenchRow {
        suite,
        n,
        naive_ms: round_sig3(naive_ms),
        structured_ms: round_sig3(structured_ms),
        speedup: round_sig3(naive_ms / structured_ms),
        max_rel_diff: diff,
    })
}

/// Runs one suite over all sizes. Sizes must be positive multiples of the
/// period (the dense likelihood has no partial-block form).
pub fn run_bench(config: &BenchConfig) -> Result<Vec<BenchRow>> {
    if config.sizes.is_empty() {
        return Err(QpgpError::BadSearchSpec("no bench sizes given".into()));
    }
    if let Some(n) = config.sizes.iter().find(|&&n| n == 0 || n % BENCH_PERIOD != 0) {
        return Err(QpgpError::BadSearchSpec(format!("bench size {n} is not a positive multiple of {BENCH_PERIOD}")));
    }
    let model = bench_model();
    config
        .sizes
        .iter()
        .map(|&n| {
            let series = generate_len(&model, n, config.seed)?;
            let row = bench_one(config.suite, &model, &series, config.warmup, config.reps)?;
            log::info!("{} n={n}: naive {} ms, structured {} ms", config.suite, row.naive_ms, row.structured_ms);
            Ok(row)
        })
        .collect()
}

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["suite", "n", "naive_ms", "structured_ms", "speedup", "max_rel_diff"])?;
    for r in rows {
        w.write_record([
            r.suite.to_string(),
            r.n.to_string(),
            r.naive_ms.to_string(),
            r.structured_ms.to_string(),
            r.speedup.to_string(),
            format!("{:e}", r.max_rel_diff),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Fixed-width table for terminals.
pub fn format_bench_table(rows: &[BenchRow]) -> String {
    let mut s = format!("{:<11} {:>7} {:>12} {:>14} {:>9}\n", "suite", "n", "naive ms", "structured ms", "speedup");
    for r in rows {
        s.push_str(&format!(
            "{:<11} {:>7} {:>12} {:>14} {:>9}\n",
            r.suite.to_string(),
            r.n,
            r.naive_ms,
            r.structured_ms,
            r.speedup
        ));
    }
    s
}
