//! Two-stage estimation. Stage I alternates exact minimizations of the
//! reduced likelihood over ω and an unconstrained 𝒦; Stage II projects the
//! Stage-I matrix onto valid periodic kernels and re-solves for ω.
//!
//! A partial trailing block is handled by re-parameterizing 𝒦 through its
//! leading l×l block 𝒦_l, the regression matrix 𝒦_{p-l,l}𝒦_l⁻¹ and the Schur
//! complement 𝒦_{(p-l)·l}, each updated in closed form.

use log::{debug, warn};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{QpgpError, Result};
use crate::kernels::{
    block_cov, frobenius_project_with, spectral_project, BlockCov, KernelSpec, ParametricFamily, PeriodicKernel,
    ThetaSearch,
};
use crate::likelihood::{nll_block_with_cov, ReducedMoments};
use crate::linalg::{max_abs, symmetrize};
use crate::process::{BlockSeries, QpgpModel, OMEGA_MAX};

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Stage-I stopping threshold on max(|∂ℓ̃/∂ω|, ‖∂ℓ̃/∂𝒦‖_∞).
    pub delta: f64,
    pub max_iters: usize,
    /// Bound applied to ω after every update.
    pub omega_max: f64,
    /// Parametric family for Stage II; `None` selects the general kernel.
    pub family: Option<ParametricFamily>,
    pub theta_search: ThetaSearch,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            delta: 1e-6,
            max_iters: 500,
            omega_max: OMEGA_MAX,
            family: None,
            theta_search: ThetaSearch::default(),
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn with_family(family: ParametricFamily) -> Self {
        Self { family: Some(family), ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(QpgpError::InvalidParameter(format!("delta must be positive, got {}", self.delta)));
        }
        if self.max_iters == 0 {
            return Err(QpgpError::InvalidParameter("max_iters must be at least 1".into()));
        }
        if !(self.omega_max > 0.0 && self.omega_max <= OMEGA_MAX) {
            return Err(QpgpError::InvalidParameter(format!(
                "omega_max must lie in (0, {OMEGA_MAX}], got {}",
                self.omega_max
            )));
        }
        Ok(())
    }
}

/// Output of Stage I.
#[derive(Debug, Clone)]
pub struct Stage1Result {
    pub omega: f64,
    pub k_matrix: DMatrix<f64>,
    pub iters: usize,
    pub converged: bool,
    pub grad_omega: f64,
    pub grad_k_max: f64,
    /// ℓ̃ after each full sweep.
    pub history: Vec<f64>,
    /// Largest diagonal jitter needed to factor an iterate.
    pub jitter: f64,
}

impl Stage1Result {
    pub fn grad_norm(&self) -> f64 {
        self.grad_omega.abs().max(self.grad_k_max)
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub omega_hat: f64,
    pub kernel_hat: PeriodicKernel,
    pub stage1_omega: f64,
    pub stage1_k: DMatrix<f64>,
    pub iters: usize,
    pub converged: bool,
    pub final_grad_norm: f64,
    /// ℓ̃ at (ω̂, 𝒦̂).
    pub reduced_nll: f64,
    /// ℓ̃ at the last Stage-I iterate (the unconstrained minimum). `None`
    /// when Stage I was not run.
    pub stage1_nll: Option<f64>,
    pub jitter_applied: f64,
    pub n: usize,
    pub k: usize,
    pub l: usize,
    /// Set when there are fewer than p + 1 transitions or only two blocks,
    /// so Stage I has to lean on jitter or a single residual.
    pub wide_uncertainty: bool,
    pub eipse: Option<f64>,
}

impl FitResult {
    pub fn period(&self) -> usize {
        self.kernel_hat.period()
    }

    /// The fitted Standard model.
    pub fn model(&self) -> Result<QpgpModel> {
        QpgpModel::new(self.omega_hat, self.kernel_hat.clone())
    }

    pub fn summary(&self) -> FitSummary {
        FitSummary {
            omega_hat: self.omega_hat,
            kernel: self.kernel_hat.clone().into(),
            iters: self.iters,
            converged: self.converged,
            grad_norm: self.final_grad_norm,
            reduced_nll: self.reduced_nll,
            stage1_nll: self.stage1_nll,
            eipse: self.eipse,
            stage1_omega: self.stage1_omega,
            jitter: self.jitter_applied,
            n: self.n,
            k: self.k,
            l: self.l,
            wide_uncertainty: self.wide_uncertainty,
        }
    }
}

/// JSON form of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub omega_hat: f64,
    pub kernel: KernelSpec,
    pub iters: usize,
    pub converged: bool,
    pub grad_norm: f64,
    pub reduced_nll: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stage1_nll: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eipse: Option<f64>,
    pub stage1_omega: f64,
    pub jitter: f64,
    pub n: usize,
    pub k: usize,
    pub l: usize,
    pub wide_uncertainty: bool,
}

impl FitSummary {
    pub fn model(&self) -> Result<QpgpModel> {
        QpgpModel::new(self.omega_hat, PeriodicKernel::try_from(self.kernel.clone())?)
    }
}

fn factor(matrix: DMatrix<f64>) -> Result<BlockCov> {
    BlockCov::from_matrix(symmetrize(&matrix))
}

/// One Stage-I sweep from `cov`: the ω-update followed by the 𝒦-update.
/// Returns the clamped ω and the new unfactored 𝒦.
pub fn stage1_sweep(moments: &ReducedMoments, cov: &BlockCov, omega_max: f64) -> Result<(f64, DMatrix<f64>)> {
    let omega = moments.omega_ratio(cov);
    let omega = if omega.is_finite() { omega.clamp(-omega_max, omega_max) } else { 0.0 };
    Ok((omega, k_update(moments, omega)?))
}

/// Closed-form minimizer of ℓ̃ over 𝒦 for fixed ω. Without a tail this is the
/// residual scatter; with a tail of length l the leading block, regression
/// matrix and Schur complement are updated in that order.
fn k_update(moments: &ReducedMoments, omega: f64) -> Result<DMatrix<f64>> {
    let s = moments.scatter(omega);
    let l = moments.tail_len();
    if l == 0 {
        return Ok(s);
    }
    let p = moments.period();
    let k = moments.complete_blocks() as f64;
    let m = p - l;
    let r = moments.tail_residual(omega);

    let s11 = s.view((0, 0), (l, l)).into_owned();
    let s21 = s.view((l, 0), (m, l)).into_owned();
    let s22 = s.view((l, l), (m, m)).into_owned();

    let rr = DMatrix::from_fn(l, l, |i, j| r[i] * r[j]);
    let k_l = (&s11 * (k - 1.0) + rr) / k;

    // Pseudo-inverse: with fewer residual blocks than l the scatter block is
    // singular, but S21 still lies in its range.
    let trace = s11.trace();
    let s11_inv = s11
        .pseudo_inverse(1e-12 * trace.max(f64::MIN_POSITIVE))
        .map_err(|e| QpgpError::KernelNotPositiveDefinite(format!("partial-block scatter: {e}")))?;
    let reg = &s21 * &s11_inv;
    let schur = symmetrize(&(&s22 - &reg * s21.transpose()));

    let off = &reg * &k_l;
    let lower = schur + &off * reg.transpose();
    let mut out = DMatrix::zeros(p, p);
    out.view_mut((0, 0), (l, l)).copy_from(&k_l);
    out.view_mut((l, 0), (m, l)).copy_from(&off);
    out.view_mut((0, l), (l, m)).copy_from(&off.transpose());
    out.view_mut((l, l), (m, m)).copy_from(&lower);
    Ok(out)
}

/// Stage I from 𝒦 = I.
pub fn stage1(series: &BlockSeries, config: &FitConfig) -> Result<Stage1Result> {
    config.validate()?;
    let moments = ReducedMoments::from_series(series)?;
    stage1_from_moments(&moments, config)
}

fn stage1_from_moments(moments: &ReducedMoments, config: &FitConfig) -> Result<Stage1Result> {
    let p = moments.period();
    let mut cov = BlockCov::from_matrix(DMatrix::identity(p, p))?;
    let mut omega = 0.0;
    let mut k_matrix = DMatrix::identity(p, p);
    let mut history = Vec::new();
    let mut jitter: f64 = 0.0;
    let (mut g_omega, mut g_k) = (f64::INFINITY, f64::INFINITY);
    let mut converged = false;
    let mut iters = 0;

    while iters < config.max_iters {
        iters += 1;
        let (w, k_new) = stage1_sweep(moments, &cov, config.omega_max)?;
        omega = w;
        cov = factor(k_new)?;
        k_matrix = cov.matrix().clone();
        jitter = jitter.max(cov.jitter());
        let lv = moments.evaluate(omega, &cov, true);
        history.push(lv.value);
        g_omega = lv.gradient_omega.unwrap_or(0.0);
        g_k = lv.gradient_k.as_ref().map(max_abs).unwrap_or(0.0);
        // A clamped ω sits at a boundary minimum; only its K-gradient must vanish.
        let at_clamp = omega.abs() >= config.omega_max;
        let g_eff = if at_clamp { g_k } else { g_omega.abs().max(g_k) };
        if g_eff < config.delta {
            converged = true;
            break;
        }
    }
    debug!("stage I: {iters} sweeps, omega {omega:.6}, grad ({g_omega:.3e}, {g_k:.3e})");
    Ok(Stage1Result { omega, k_matrix, iters, converged, grad_omega: g_omega, grad_k_max: g_k, history, jitter })
}

/// κ̃(t) = mean of the t-th diagonal of a p×p matrix.
pub fn toeplitz_average(m: &DMatrix<f64>) -> Vec<f64> {
    let p = m.nrows();
    (0..p)
        .map(|t| (0..p - t).map(|j| 0.5 * (m[(j, j + t)] + m[(j + t, j)])).sum::<f64>() / (p - t) as f64)
        .collect()
}

/// Projects a Stage-I matrix onto the kernel class and returns the
/// Stage-II kernel with its refitted ω.
fn project(moments: &ReducedMoments, k_tilde: &DMatrix<f64>, config: &FitConfig) -> Result<(PeriodicKernel, f64)> {
    let p = moments.period();
    if k_tilde.nrows() != p || k_tilde.ncols() != p {
        return Err(QpgpError::PeriodMismatch { model: k_tilde.nrows(), other: p });
    }
    let kernel = match &config.family {
        None => spectral_project(&toeplitz_average(k_tilde))?,
        Some(family) => {
            let est = frobenius_project_with(&symmetrize(k_tilde), family, &config.theta_search)?;
            family.kernel(p, est.theta, est.sigma2)?
        }
    };
    let cov = block_cov(&kernel)?;
    let omega = moments.omega_ratio(&cov);
    let omega = if omega.is_finite() { omega.clamp(-config.omega_max, config.omega_max) } else { 0.0 };
    Ok((kernel, omega))
}

/// Stage II on a given Stage-I matrix. The returned result carries no
/// Stage-I diagnostics beyond `stage1_k`.
pub fn stage2(k_tilde: &DMatrix<f64>, series: &BlockSeries, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let moments = ReducedMoments::from_series(series)?;
    let (kernel, omega) = project(&moments, k_tilde, config)?;
    let cov = block_cov(&kernel)?;
    let s1 = Stage1Result {
        omega: f64::NAN,
        k_matrix: k_tilde.clone(),
        iters: 0,
        converged: true,
        grad_omega: 0.0,
        grad_k_max: 0.0,
        history: Vec::new(),
        jitter: 0.0,
    };
    Ok(assemble(series, &moments, s1, kernel, omega, &cov))
}

fn assemble(
    series: &BlockSeries,
    moments: &ReducedMoments,
    s1: Stage1Result,
    kernel: PeriodicKernel,
    omega: f64,
    cov: &BlockCov,
) -> FitResult {
    let k = series.complete_blocks();
    let p = series.period();
    let reduced_nll = moments.evaluate(omega, cov, false).value;
    FitResult {
        omega_hat: omega,
        kernel_hat: kernel,
        stage1_omega: s1.omega,
        iters: s1.iters,
        converged: s1.converged,
        final_grad_norm: s1.grad_norm(),
        reduced_nll,
        stage1_nll: s1.history.last().copied(),
        jitter_applied: s1.jitter.max(cov.jitter()),
        n: series.len(),
        k,
        l: series.tail_len(),
        wide_uncertainty: k == 2 || k - 1 < p,
        eipse: None,
        stage1_k: s1.k_matrix,
    }
}

/// Full two-stage fit. A partial tail is used automatically.
pub fn fit(series: &BlockSeries, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let moments = ReducedMoments::from_series(series)?;
    let s1 = stage1_from_moments(&moments, config)?;
    if !s1.converged {
        warn!("stage I stopped after {} sweeps with gradient {:.3e}", s1.iters, s1.grad_norm());
    }
    let (kernel, omega) = project(&moments, &s1.k_matrix, config)?;
    let cov = block_cov(&kernel)?;
    Ok(assemble(series, &moments, s1, kernel, omega, &cov))
}

/// Inclusive range `lo, lo + step, ..., ≤ hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRange {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl GridRange {
    pub fn new(lo: f64, hi: f64, step: f64) -> Self {
        Self { lo, hi, step }
    }

    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.step > 0.0 && self.hi >= self.lo) {
            return Err(QpgpError::BadSearchSpec(format!(
                "invalid grid [{}, {}] step {}",
                self.lo, self.hi, self.step
            )));
        }
        let count = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1;
        Ok((0..count).map(|i| self.lo + self.step * i as f64).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleGrid {
    pub omega: GridRange,
    pub theta: GridRange,
    pub sigma2: GridRange,
}

impl Default for MleGrid {
    /// ω ∈ [0, 0.99], θ ∈ [0.5, 1.5], σ² ∈ [0.5, 1.5], all with step 0.01.
    fn default() -> Self {
        Self {
            omega: GridRange::new(0.0, 0.99, 0.01),
            theta: GridRange::new(0.5, 1.5, 0.01),
            sigma2: GridRange::new(0.5, 1.5, 0.01),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleEstimate {
    pub omega: f64,
    pub theta: f64,
    pub sigma2: f64,
    pub nll: f64,
}

/// Exhaustive minimization of the block likelihood over a Cartesian grid.
/// Each (θ, σ²) pair is factored once; every ω is a full likelihood pass.
pub fn mle_grid(series: &BlockSeries, grids: &MleGrid, family: &ParametricFamily) -> Result<MleEstimate> {
    if series.tail_len() != 0 {
        return Err(QpgpError::InvalidParameter("grid search requires complete blocks".into()));
    }
    let omegas = grids.omega.points()?;
    let thetas = grids.theta.points()?;
    let sigmas = grids.sigma2.points()?;
    if omegas.iter().any(|w| w.abs() >= 1.0) {
        return Err(QpgpError::BadSearchSpec("omega grid must lie inside (-1, 1)".into()));
    }
    let p = series.period();
    let mut best = MleEstimate { omega: f64::NAN, theta: f64::NAN, sigma2: f64::NAN, nll: f64::INFINITY };
    for &theta in &thetas {
        for &sigma2 in &sigmas {
            let cov = block_cov(&family.kernel(p, theta, sigma2)?)?;
            for &omega in &omegas {
                let v = nll_block_with_cov(series, omega, &cov)?;
                if v < best.nll {
                    best = MleEstimate { omega, theta, sigma2, nll: v };
                }
            }
        }
    }
    Ok(best)
}
