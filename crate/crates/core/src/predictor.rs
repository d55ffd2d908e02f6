//! One-step-ahead best linear prediction.
//!
//! Given the past, `Y_t` for `t > p` is `ω Y_{t-p}` plus the conditional mean
//! of the current innovation given its earlier entries in the same block. With
//! 𝒦 = L Lᵀ, the regression of innovation entry j on entries 0..j is row j of
//! L applied to the whitened prefix, so every step costs O(p).

use std::io::Write;

use crate::dense;
use crate::error::Result;
use crate::estimator::FitResult;
use crate::process::{BlockSeries, QpgpModel};

const Z95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTrace {
    /// Times 2..=n (1-based).
    pub t: Vec<usize>,
    pub y: Vec<f64>,
    pub y_hat: Vec<f64>,
    /// One-step predictive variance Var(Y_t - Ŷ_t); sets the intervals.
    pub var_hat: Vec<f64>,
    /// Variance of the predictor itself, Var(Ŷ_t).
    pub predictor_var: Vec<f64>,
    pub interval_lo: Vec<f64>,
    pub interval_hi: Vec<f64>,
    pub eipse: f64,
}

impl PredictionTrace {
    fn from_parts(series: &BlockSeries, y_hat: Vec<f64>, var_hat: Vec<f64>, predictor_var: Vec<f64>) -> Self {
        let n = series.len();
        let y = series.values()[1..].to_vec();
        let half: Vec<f64> = var_hat.iter().map(|v| Z95 * v.max(0.0).sqrt()).collect();
        let interval_lo = y_hat.iter().zip(&half).map(|(m, h)| m - h).collect();
        let interval_hi = y_hat.iter().zip(&half).map(|(m, h)| m + h).collect();
        let eipse = eipse(series.values(), &y_hat, 2);
        Self { t: (2..=n).collect(), y, y_hat, var_hat, predictor_var, interval_lo, interval_hi, eipse }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Fraction of observations inside their prediction interval.
    pub fn coverage(&self) -> f64 {
        let inside = self
            .y
            .iter()
            .zip(self.interval_lo.iter().zip(&self.interval_hi))
            .filter(|(y, (lo, hi))| *lo <= *y && *y <= *hi)
            .count();
        inside as f64 / self.len().max(1) as f64
    }

    /// CSV with columns t, y, y_hat, var_hat, lo95, hi95 and a trailing
    /// `# eipse=<value>` comment.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(["t", "y", "y_hat", "var_hat", "lo95", "hi95"])?;
            for i in 0..self.len() {
                w.write_record([
                    self.t[i].to_string(),
                    format!("{:e}", self.y[i]),
                    format!("{:e}", self.y_hat[i]),
                    format!("{:e}", self.var_hat[i]),
                    format!("{:e}", self.interval_lo[i]),
                    format!("{:e}", self.interval_hi[i]),
                ])?;
            }
            w.flush()?;
        }
        writeln!(out, "# eipse={:e}", self.eipse)?;
        Ok(())
    }
}

/// `(1/n) Σ_{t=from}^{n} (y_t - ŷ_t)²` with `y_hat[0]` predicting `y_2`. The
/// divisor stays n even though fewer terms are summed.
pub fn eipse(y: &[f64], y_hat: &[f64], from: usize) -> f64 {
    let n = y.len();
    let from = from.max(2);
    if n < from {
        return 0.0;
    }
    let sum: f64 = (from..=n).map(|t| (y[t - 1] - y_hat[t - 2]).powi(2)).sum();
    sum / n as f64
}

/// Block-structured predictor, O(p) per step after one p×p factorization.
pub fn predict_fast(series: &BlockSeries, model: &QpgpModel) -> Result<PredictionTrace> {
    model.require_standard()?;
    model.check_period(series)?;
    let p = model.period();
    let n = series.len();
    let w = model.omega();
    let stat = 1.0 / (1.0 - w * w);
    let cov = model.block_cov();
    let f = cov.factor();
    let k = cov.matrix();
    let y = series.values();

    let mut y_hat = Vec::with_capacity(n.saturating_sub(1));
    let mut var_hat = Vec::with_capacity(n.saturating_sub(1));
    let mut pred_var = Vec::with_capacity(n.saturating_sub(1));
    let mut white = vec![0.0; p];
    for start in (0..n).step_by(p) {
        let first = start == 0;
        for j in 0..p.min(n - start) {
            let t = start + j;
            let base = if first { 0.0 } else { w * y[t - p] };
            let row = f.row(j);
            let cond: f64 = row[..j].iter().zip(&white[..j]).map(|(a, b)| a * b).sum();
            let z = y[t] - base;
            white[j] = (z - cond) / row[j];
            if t == 0 {
                continue;
            }
            let err = row[j] * row[j];
            let (err, total) = if first { (err * stat, k[(j, j)] * stat) } else { (err, k[(j, j)] * stat) };
            y_hat.push(base + cond);
            var_hat.push(err);
            pred_var.push((total - err).max(0.0));
        }
    }
    Ok(PredictionTrace::from_parts(series, y_hat, var_hat, pred_var))
}

/// Dense baseline: conditional means and variances from one Cholesky
/// factorization of the full n×n covariance.
pub fn predict_naive(series: &BlockSeries, model: &QpgpModel) -> Result<PredictionTrace> {
    model.require_standard()?;
    model.check_period(series)?;
    let n = series.len();
    let llt = dense::standard_cov_factor(model, n)?;
    let l = llt.L();
    let u = dense::forward_solve(l, series.values());

    let mut mean = vec![0.0; n];
    let mut pvar = vec![0.0; n];
    for j in 0..n {
        let uj = u[j];
        for i in j + 1..n {
            let v = l[(i, j)];
            mean[i] += v * uj;
            pvar[i] += v * v;
        }
    }
    let var_hat = (1..n).map(|i| l[(i, i)] * l[(i, i)]).collect();
    Ok(PredictionTrace::from_parts(series, mean[1..].to_vec(), var_hat, pvar[1..].to_vec()))
}

/// Plug-in prediction at a fitted model. General (tabulated) fits leave the
/// first block out of the EIPSE sum.
pub fn predict_plugin(series: &BlockSeries, fit: &FitResult) -> Result<PredictionTrace> {
    if !fit.converged {
        log::warn!("plug-in prediction from a fit that did not converge");
    }
    predict_model(series, &fit.model()?)
}

/// [`predict_fast`] with the plug-in EIPSE convention: a tabulated kernel
/// leaves the first block out of the sum.
pub fn predict_model(series: &BlockSeries, model: &QpgpModel) -> Result<PredictionTrace> {
    let mut trace = predict_fast(series, model)?;
    if model.kernel().is_tabulated() {
        trace.eipse = eipse(series.values(), &trace.y_hat, series.period() + 1);
    }
    Ok(trace)
}
