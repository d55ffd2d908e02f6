//! Model-based residual bootstrap: resample the block innovations of a fitted
//! model, rebuild series from the original first block, refit.

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{QpgpError, Result};
use crate::estimator::{fit, FitConfig, FitResult};
use crate::process::BlockSeries;
use crate::rng;

/// Rebuilds a series from the original first block and innovations drawn
/// with replacement from `y_i - ω y_{i-1}`, i = 2..k. Any partial tail is
/// dropped.
pub fn resample_with_omega(series: &BlockSeries, omega: f64, seed: u64) -> Result<BlockSeries> {
    let k = series.complete_blocks();
    if k < 3 {
        return Err(QpgpError::InsufficientBlocksForBootstrap(k));
    }
    let p = series.period();
    let resid: Vec<Vec<f64>> = (1..k)
        .map(|i| series.block(i).iter().zip(series.block(i - 1)).map(|(c, b)| c - omega * b).collect())
        .collect();
    let mut rng = rng::seeded(seed);
    let mut values = Vec::with_capacity(k * p);
    values.extend_from_slice(series.block(0));
    for i in 1..k {
        let z = &resid[rng.random_range(0..resid.len())];
        for j in 0..p {
            let prev = values[(i - 1) * p + j];
            values.push(omega * prev + z[j]);
        }
    }
    BlockSeries::new(values, p)
}

/// Bootstrap series for a fit (uses ω̂).
pub fn resample(series: &BlockSeries, fit: &FitResult, seed: u64) -> Result<BlockSeries> {
    resample_with_omega(series, fit.omega_hat, seed)
}

/// Standard error and percentile interval of one parameter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub ci: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapSummary {
    #[serde(rename = "M")]
    pub m: usize,
    pub alpha: f64,
    pub omega: ParamSummary,
    /// (θ, σ²) for parametric fits, otherwise one entry per lag of κ̂.
    pub kernel: Vec<ParamSummary>,
    pub failures: usize,
    pub nonconverged: usize,
    /// More than 5% of the resample fits failed.
    pub flagged: bool,
    /// Per successful resample: ω̂* followed by the kernel parameters.
    #[serde(skip)]
    pub all_estimates: Vec<Vec<f64>>,
}

/// Parameter vector recorded for each fit.
pub fn estimate_vector(fit: &FitResult) -> Vec<f64> {
    let mut v = vec![fit.omega_hat];
    match fit.kernel_hat.parametric_params() {
        Some((theta, sigma2)) => v.extend([theta, sigma2]),
        None => v.extend(fit.kernel_hat.lag_values()),
    }
    v
}

fn param_names(fit: &FitResult) -> Vec<String> {
    match fit.kernel_hat.parametric_params() {
        Some(_) => vec!["theta".into(), "sigma2".into()],
        None => (0..fit.period()).map(|t| format!("kappa[{t}]")).collect(),
    }
}

/// Sample standard deviation with divisor M - 1.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 || xs.iter().all(|x| *x == xs[0]) {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Empirical quantile `x_(⌈M q⌉)` of sorted data (1-based order statistic,
/// clamped to the sample).
pub fn order_statistic(sorted: &[f64], q: f64) -> f64 {
    let m = sorted.len();
    let idx = ((m as f64 * q).ceil() as usize).clamp(1, m);
    sorted[idx - 1]
}

fn summarize(name: String, estimate: f64, xs: &[f64], alpha: f64) -> ParamSummary {
    if xs.is_empty() {
        return ParamSummary { name, estimate, se: f64::NAN, ci: (f64::NAN, f64::NAN) };
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let ci = (order_statistic(&sorted, alpha / 2.0), order_statistic(&sorted, 1.0 - alpha / 2.0));
    ParamSummary { name, estimate, se: std_dev(xs), ci }
}

/// Runs `m` resample-and-refit cycles in parallel. Replicate `i` draws from
/// stream `i` of `seed`, and results are gathered in index order, so the
/// summary does not depend on scheduling.
pub fn bootstrap_summary(
    series: &BlockSeries,
    fit_result: &FitResult,
    m: usize,
    alpha: f64,
    config: &FitConfig,
    seed: u64,
) -> Result<BootstrapSummary> {
    if m < 50 {
        return Err(QpgpError::InvalidParameter(format!("bootstrap needs M >= 50, got {m}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(QpgpError::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if m < 500 {
        warn!("bootstrap with M = {m} < 500 resamples");
    }
    let base = series.complete_only();
    if base.complete_blocks() < 3 {
        return Err(QpgpError::InsufficientBlocksForBootstrap(base.complete_blocks()));
    }

    let outcomes: Vec<Option<(Vec<f64>, bool)>> = (0..m as u64)
        .into_par_iter()
        .map(|i| {
            let s = resample(&base, fit_result, rng::derive_seed(seed, i)).ok()?;
            let f = fit(&s, config).ok()?;
            Some((estimate_vector(&f), f.converged))
        })
        .collect();

    let failures = outcomes.iter().filter(|o| o.is_none()).count();
    let nonconverged = outcomes.iter().flatten().filter(|(_, c)| !c).count();
    let all_estimates: Vec<Vec<f64>> = outcomes.into_iter().flatten().map(|(v, _)| v).collect();
    let flagged = failures as f64 > 0.05 * m as f64;
    if flagged {
        warn!("{failures} of {m} bootstrap fits failed");
    }

    let point = estimate_vector(fit_result);
    let column = |c: usize| -> Vec<f64> { all_estimates.iter().map(|v| v[c]).collect() };
    let omega = summarize("omega".into(), point[0], &column(0), alpha);
    let kernel = param_names(fit_result)
        .into_iter()
        .enumerate()
        .map(|(c, name)| summarize(name, point[c + 1], &column(c + 1), alpha))
        .collect();
    Ok(BootstrapSummary { m, alpha, omega, kernel, failures, nonconverged, flagged, all_estimates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{ParametricFamily, PeriodicKernel};
    use crate::process::{generate_len, QpgpModel};

    fn mackay_series(n: usize, seed: u64) -> BlockSeries {
        let m = QpgpModel::new(0.5, PeriodicKernel::mackay(5, 1.0, 1.0).unwrap()).unwrap();
        generate_len(&m, n, seed).unwrap()
    }

    #[test]
    fn first_block_is_kept() {
        let s = mackay_series(50, 1);
        let r = resample_with_omega(&s, 0.4, 9).unwrap();
        assert_eq!(r.block(0), s.block(0));
        assert_eq!(r.len(), s.len());
        assert_eq!(r, resample_with_omega(&s, 0.4, 9).unwrap());
    }

    #[test]
    fn zero_omega_shuffles_residual_blocks() {
        let s = mackay_series(40, 2);
        let r = resample_with_omega(&s, 0.0, 3).unwrap();
        for i in 1..r.complete_blocks() {
            assert!((1..s.complete_blocks()).any(|j| s.block(j) == r.block(i)));
        }
    }

    #[test]
    fn tail_is_dropped_and_short_series_rejected() {
        let s = mackay_series(23, 4);
        assert_eq!(resample_with_omega(&s, 0.2, 1).unwrap().len(), 20);
        let short = mackay_series(14, 4);
        assert_eq!(resample_with_omega(&short, 0.2, 1).unwrap_err().code(), "insufficient-blocks-for-bootstrap");
    }

    #[test]
    fn order_statistics() {
        let xs: Vec<f64> = (1..=200).map(f64::from).collect();
        assert_eq!(order_statistic(&xs, 0.025), 5.0);
        assert_eq!(order_statistic(&xs, 0.975), 195.0);
        assert_eq!(order_statistic(&xs, 0.0), 1.0);
        assert_eq!(std_dev(&[2.0; 10]), 0.0);
        assert!((std_dev(&[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identical_residuals_give_zero_se() {
        // Repeating the same block makes every residual identical for any ω̂.
        let v: Vec<f64> = [1.0, 0.2, -0.4].repeat(12);
        let s = BlockSeries::new(v, 3).unwrap();
        let f = fit(&s, &FitConfig::default()).unwrap();
        let b = bootstrap_summary(&s, &f, 50, 0.05, &FitConfig::default(), 1).unwrap();
        assert_eq!(b.omega.se, 0.0);
        assert_eq!(b.failures, 0);
    }

    #[test]
    fn summary_is_deterministic_and_nested() {
        let s = mackay_series(300, 5);
        let cfg = FitConfig::with_family(ParametricFamily::MacKay);
        let f = fit(&s, &cfg).unwrap();
        let a = bootstrap_summary(&s, &f, 60, 0.1, &cfg, 7).unwrap();
        let b = bootstrap_summary(&s, &f, 60, 0.1, &cfg, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.all_estimates, b.all_estimates);
        assert_eq!(a.kernel.len(), 2);
        let wide = bootstrap_summary(&s, &f, 60, 0.02, &cfg, 7).unwrap();
        assert!(wide.omega.ci.0 <= a.omega.ci.0 && wide.omega.ci.1 >= a.omega.ci.1);
        assert!(a.omega.ci.0 <= a.omega.ci.1 && a.omega.se > 0.0);
        let json = serde_json::to_value(&a).unwrap();
        assert!(json.get("M").is_some() && json.get("all_estimates").is_none());
    }

    #[test]
    fn too_few_resamples_rejected() {
        let s = mackay_series(100, 1);
        let f = fit(&s, &FitConfig::default()).unwrap();
        assert!(bootstrap_summary(&s, &f, 49, 0.05, &FitConfig::default(), 1).is_err());
    }
}
