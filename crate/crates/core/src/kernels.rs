//! Periodic covariance kernels, the p×p block covariance they induce, and the
//! two projections used to turn an unconstrained matrix estimate back into a
//! valid kernel: spectral clipping (general kernels) and a Frobenius fit onto
//! a parametric family.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{QpgpError, Result};
use crate::linalg::{jittered_cholesky_with_floor, LowerFactor, KERNEL_PIVOT_FLOOR, PIVOT_FLOOR};

const SUPPORTED_NU: [f64; 3] = [0.5, 1.5, 2.5];

/// Parameterization of a periodic kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelForm {
    /// `sigma2 * exp(-theta^2 sin^2(pi |t| / p))`
    MacKay { theta: f64, sigma2: f64 },
    /// Periodic Matérn with half-integer smoothness, warped through
    /// `phi(t) = (2 / theta) sqrt(2 nu sin^2(pi t / p))`.
    Matern { nu: f64, theta: f64, sigma2: f64 },
    /// `sigma2 * cos(2 pi iota |t| / p)`
    Cosine { iota: u32, sigma2: f64 },
    /// Free-form kernel given by its values at lags `0..p`.
    Tabulated { values: Vec<f64> },
}

/// An even periodic covariance kernel with integer period `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelSpec", into = "KernelSpec")]
pub struct PeriodicKernel {
    period: usize,
    form: KernelForm,
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(QpgpError::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
    }
}

fn check_period(p: usize) -> Result<()> {
    if p == 0 {
        return Err(QpgpError::InvalidParameter("period must be at least 1".into()));
    }
    Ok(())
}

impl PeriodicKernel {
    pub fn mackay(p: usize, theta: f64, sigma2: f64) -> Result<Self> {
        check_period(p)?;
        check_positive("theta", theta)?;
        check_positive("sigma2", sigma2)?;
        Ok(Self { period: p, form: KernelForm::MacKay { theta, sigma2 } })
    }

    pub fn matern(p: usize, nu: f64, theta: f64, sigma2: f64) -> Result<Self> {
        check_period(p)?;
        if !SUPPORTED_NU.iter().any(|s| (s - nu).abs() < 1e-12) {
            return Err(QpgpError::MaternNuUnsupported(nu));
        }
        check_positive("theta", theta)?;
        check_positive("sigma2", sigma2)?;
        Ok(Self { period: p, form: KernelForm::Matern { nu, theta, sigma2 } })
    }

    pub fn cosine(p: usize, iota: u32, sigma2: f64) -> Result<Self> {
        check_period(p)?;
        if iota == 0 {
            return Err(QpgpError::InvalidParameter("iota must be a positive integer".into()));
        }
        check_positive("sigma2", sigma2)?;
        Ok(Self { period: p, form: KernelForm::Cosine { iota, sigma2 } })
    }

    /// A tabulated kernel from its values at lags `0..p`. The lag spectrum
    /// must be non-negative on the spectral grid (relative tolerance 1e-10).
    pub fn tabulated(values: Vec<f64>) -> Result<Self> {
        let kernel = Self::tabulated_unchecked(values)?;
        let KernelForm::Tabulated { values } = &kernel.form else { unreachable!() };
        let scale = values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let min = lag_spectrum(values).into_iter().fold(f64::INFINITY, f64::min);
        if min < -1e-10 * scale {
            return Err(QpgpError::KernelNotPositiveDefinite(format!(
                "tabulated kernel has negative spectrum (min {min:.3e})"
            )));
        }
        Ok(kernel)
    }

    pub(crate) fn tabulated_unchecked(values: Vec<f64>) -> Result<Self> {
        check_period(values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(QpgpError::InvalidParameter("tabulated values must be finite".into()));
        }
        if values[0] < 0.0 {
            return Err(QpgpError::InvalidParameter("tabulated variance must be non-negative".into()));
        }
        Ok(Self { period: values.len(), form: KernelForm::Tabulated { values } })
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn form(&self) -> &KernelForm {
        &self.form
    }

    pub fn is_tabulated(&self) -> bool {
        matches!(self.form, KernelForm::Tabulated { .. })
    }

    /// Returns `(theta, sigma2)` for parametric forms. For the cosine form the
    /// frequency `iota` is reported as theta.
    pub fn parametric_params(&self) -> Option<(f64, f64)> {
        match self.form {
            KernelForm::MacKay { theta, sigma2 } => Some((theta, sigma2)),
            KernelForm::Matern { theta, sigma2, .. } => Some((theta, sigma2)),
            KernelForm::Cosine { iota, sigma2 } => Some((iota as f64, sigma2)),
            KernelForm::Tabulated { .. } => None,
        }
    }

    /// The family this kernel belongs to, or `None` for tabulated kernels.
    pub fn family(&self) -> Option<ParametricFamily> {
        match self.form {
            KernelForm::MacKay { .. } => Some(ParametricFamily::MacKay),
            KernelForm::Matern { nu, .. } => Some(ParametricFamily::Matern { nu }),
            KernelForm::Cosine { iota, .. } => Some(ParametricFamily::Cosine { iota }),
            KernelForm::Tabulated { .. } => None,
        }
    }

    /// κ_p(t) for any integer lag.
    ///
    /// Parametric forms are exactly even and p-periodic. Tabulated kernels
    /// return `values[|t| mod p]`, so lags inside a block (`|t| < p`) read the
    /// table directly; the extension to `|t| >= p` is p-periodic only when the
    /// table satisfies `values[t] == values[p - t]`.
    pub fn evaluate(&self, t: i64) -> f64 {
        let p = self.period as i64;
        match &self.form {
            KernelForm::Tabulated { values } => values[(t.unsigned_abs() % p as u64) as usize],
            form => {
                let r = t.rem_euclid(p);
                let r = r.min(p - r) as f64;
                eval_parametric(form, r, self.period as f64)
            }
        }
    }

    /// Kernel values at lags `0..p`.
    pub fn lag_values(&self) -> Vec<f64> {
        (0..self.period as i64).map(|t| self.evaluate(t)).collect()
    }

    /// Variance κ_p(0).
    pub fn variance(&self) -> f64 {
        self.evaluate(0)
    }
}

fn eval_parametric(form: &KernelForm, r: f64, p: f64) -> f64 {
    match *form {
        KernelForm::MacKay { theta, sigma2 } => {
            let s = (PI * r / p).sin();
            sigma2 * (-theta * theta * s * s).exp()
        }
        KernelForm::Matern { nu, theta, sigma2 } => {
            let phi = 2.0 / theta * (2.0 * nu).sqrt() * (PI * r / p).sin().abs();
            let poly = if nu < 1.0 {
                1.0
            } else if nu < 2.0 {
                1.0 + phi
            } else {
                1.0 + phi + phi * phi / 3.0
            };
            sigma2 * poly * (-phi).exp()
        }
        KernelForm::Cosine { iota, sigma2 } => sigma2 * (2.0 * PI * iota as f64 * r / p).cos(),
        KernelForm::Tabulated { .. } => unreachable!(),
    }
}

/// JSON form of a kernel: `{"form": "mackay"|"matern"|"cosine"|"tabulated", "p": int, ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelSpec {
    Mackay { p: usize, theta: f64, sigma2: f64 },
    Matern { p: usize, nu: f64, theta: f64, sigma2: f64 },
    Cosine { p: usize, iota: u32, sigma2: f64 },
    Tabulated { p: usize, values: Vec<f64> },
}

impl TryFrom<KernelSpec> for PeriodicKernel {
    type Error = QpgpError;

    fn try_from(spec: KernelSpec) -> Result<Self> {
        match spec {
            KernelSpec::Mackay { p, theta, sigma2 } => PeriodicKernel::mackay(p, theta, sigma2),
            KernelSpec::Matern { p, nu, theta, sigma2 } => PeriodicKernel::matern(p, nu, theta, sigma2),
            KernelSpec::Cosine { p, iota, sigma2 } => PeriodicKernel::cosine(p, iota, sigma2),
            KernelSpec::Tabulated { p, values } => {
                if values.len() != p {
                    return Err(QpgpError::InvalidParameter(format!(
                        "tabulated kernel declares p = {p} but has {} values",
                        values.len()
                    )));
                }
                PeriodicKernel::tabulated(values)
            }
        }
    }
}

impl From<PeriodicKernel> for KernelSpec {
    fn from(k: PeriodicKernel) -> Self {
        let p = k.period;
        match k.form {
            KernelForm::MacKay { theta, sigma2 } => KernelSpec::Mackay { p, theta, sigma2 },
            KernelForm::Matern { nu, theta, sigma2 } => KernelSpec::Matern { p, nu, theta, sigma2 },
            KernelForm::Cosine { iota, sigma2 } => KernelSpec::Cosine { p, iota, sigma2 },
            KernelForm::Tabulated { values } => KernelSpec::Tabulated { p, values },
        }
    }
}

/// The p×p symmetric Toeplitz block covariance 𝒦 with entries κ_p(i - j),
/// with its Cholesky factor and log-determinant computed up front.
#[derive(Debug, Clone)]
pub struct BlockCov {
    matrix: DMatrix<f64>,
    factor: LowerFactor,
    logdet: f64,
    jitter: f64,
}

/// Raw Toeplitz matrix (κ_p(i - j)) without any jitter.
pub fn toeplitz_matrix(kernel: &PeriodicKernel) -> DMatrix<f64> {
    let lags = kernel.lag_values();
    toeplitz_from_lags(&lags)
}

pub(crate) fn toeplitz_from_lags(lags: &[f64]) -> DMatrix<f64> {
    let p = lags.len();
    DMatrix::from_fn(p, p, |i, j| lags[i.abs_diff(j)])
}

/// Builds the block covariance of a kernel, applying the jitter policy when
/// the raw matrix is numerically singular. Kernel matrices use the stricter
/// pivot floor because they also feed the dense n×n covariance.
pub fn block_cov(kernel: &PeriodicKernel) -> Result<BlockCov> {
    BlockCov::factor_with_floor(toeplitz_matrix(kernel), KERNEL_PIVOT_FLOOR)
}

impl BlockCov {
    /// Factors an arbitrary symmetric matrix under the jitter policy.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        Self::factor_with_floor(matrix, PIVOT_FLOOR)
    }

    fn factor_with_floor(matrix: DMatrix<f64>, floor: f64) -> Result<Self> {
        let jf = jittered_cholesky_with_floor(&matrix, floor).ok_or_else(|| {
            QpgpError::KernelNotPositiveDefinite(format!(
                "{}x{} matrix is not positive definite after maximum jitter",
                matrix.nrows(),
                matrix.ncols()
            ))
        })?;
        let mut matrix = matrix;
        for i in 0..matrix.nrows() {
            matrix[(i, i)] += jf.jitter;
        }
        let logdet = jf.factor.logdet_leading(matrix.nrows());
        Ok(Self { matrix, factor: jf.factor, logdet, jitter: jf.jitter })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// The factored matrix (including any jitter).
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn factor(&self) -> &LowerFactor {
        &self.factor
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    /// Absolute diagonal jitter added before factoring.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.factor.inverse_leading(self.dim())
    }
}

/// Number of points in the spectral evaluation grid on [-π, π).
pub fn spectral_grid_size(p: usize) -> usize {
    4096.max(8 * p)
}

struct SpectralGrid {
    m: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl SpectralGrid {
    fn new(p: usize) -> Self {
        let m = spectral_grid_size(p);
        let step = 2.0 * PI / m as f64;
        let cos = (0..m).map(|i| (step * i as f64).cos()).collect();
        let sin = (0..m).map(|i| (step * i as f64).sin()).collect();
        Self { m, cos, sin }
    }

    /// cos(t λ_j) with λ_j = -π + 2πj/M.
    #[inline]
    fn cos_at(&self, t: usize, j: usize) -> f64 {
        let c = self.cos[(t * j) % self.m];
        if t.is_multiple_of(2) {
            c
        } else {
            -c
        }
    }

    #[inline]
    fn sin_at(&self, t: usize, j: usize) -> f64 {
        let s = self.sin[(t * j) % self.m];
        if t.is_multiple_of(2) {
            s
        } else {
            -s
        }
    }

    fn spectrum(&self, values: &[f64]) -> Vec<f64> {
        (0..self.m)
            .map(|j| {
                values[0]
                    + 2.0 * values.iter().enumerate().skip(1).map(|(t, v)| v * self.cos_at(t, j)).sum::<f64>()
            })
            .collect()
    }
}

/// `2π f(λ_j) = Σ_{|t|<p} κ(t) e^{-itλ_j}` for an even sequence given by its
/// values at lags `0..p`, on the uniform grid of [`spectral_grid_size`] points.
pub fn lag_spectrum(values: &[f64]) -> Vec<f64> {
    SpectralGrid::new(values.len()).spectrum(values)
}

/// Clip-and-invert passes before the remaining deficit is closed at lag 0.
pub const MAX_CLIP_PASSES: usize = 100;

/// Projects an even lag sequence κ̃(|t| < p) onto sequences whose spectrum is
/// non-negative on the grid.
///
/// One pass clips the spectrum at zero and inverts it by periodic trapezoid
/// quadrature. Truncating the clipped spectrum back to `|t| < p` can leave
/// negative lobes, so passes repeat until the truncated spectrum is
/// non-negative, for at most [`MAX_CLIP_PASSES`]; whatever deficit is left is
/// added to lag 0. Inputs whose spectrum is already non-negative are returned
/// unchanged, so the projection is idempotent.
pub fn spectral_project(values: &[f64]) -> Result<PeriodicKernel> {
    let p = values.len();
    check_period(p)?;
    let grid = SpectralGrid::new(p);
    let m = grid.m;
    let scale = values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let cos: Vec<Vec<f64>> = (0..p).map(|t| (0..m).map(|j| grid.cos_at(t, j)).collect()).collect();
    let spectrum = |v: &[f64]| -> Vec<f64> {
        let mut s = vec![v[0]; m];
        for (t, row) in cos.iter().enumerate().skip(1) {
            let c = 2.0 * v[t];
            s.iter_mut().zip(row).for_each(|(x, r)| *x += c * r);
        }
        s
    };

    let mut out = values.to_vec();
    for pass in 0..=MAX_CLIP_PASSES {
        let spec = spectrum(&out);
        let min = spec.iter().copied().fold(f64::INFINITY, f64::min);
        if min >= -tol {
            break;
        }
        if pass == MAX_CLIP_PASSES {
            out[0] -= min;
            break;
        }
        if pass == 0 {
            let im: f64 = (1..p)
                .map(|t| spec.iter().enumerate().map(|(j, f)| grid.sin_at(t, j) * f.max(0.0)).sum::<f64>().abs())
                .fold(0.0, f64::max);
            debug_assert!(im / m as f64 <= 1e-8 * scale.max(1.0), "imaginary residue {im}");
        }
        for (o, row) in out.iter_mut().zip(&cos) {
            *o = row.iter().zip(&spec).map(|(c, f)| c * f.max(0.0)).sum::<f64>() / m as f64;
        }
    }
    PeriodicKernel::tabulated_unchecked(out)
}

/// A parametric kernel family for Frobenius fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ParametricFamily {
    #[serde(rename = "mackay")]
    MacKay,
    Matern { nu: f64 },
    /// Cosine kernels keep their integer frequency fixed; only sigma2 is fitted.
    Cosine { iota: u32 },
}

impl ParametricFamily {
    pub fn name(&self) -> String {
        match self {
            ParametricFamily::MacKay => "mackay".into(),
            ParametricFamily::Matern { nu } => format!("matern(nu={nu})"),
            ParametricFamily::Cosine { iota } => format!("cosine(iota={iota})"),
        }
    }

    pub fn kernel(&self, p: usize, theta: f64, sigma2: f64) -> Result<PeriodicKernel> {
        match *self {
            ParametricFamily::MacKay => PeriodicKernel::mackay(p, theta, sigma2),
            ParametricFamily::Matern { nu } => PeriodicKernel::matern(p, nu, theta, sigma2),
            ParametricFamily::Cosine { iota } => PeriodicKernel::cosine(p, iota, sigma2),
        }
    }

    fn has_theta(&self) -> bool {
        !matches!(self, ParametricFamily::Cosine { .. })
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ParametricFamily::Matern { nu } if !SUPPORTED_NU.iter().any(|s| (s - nu).abs() < 1e-12) => {
                Err(QpgpError::MaternNuUnsupported(nu))
            }
            ParametricFamily::Cosine { iota: 0 } => {
                Err(QpgpError::InvalidParameter("iota must be a positive integer".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Search over theta for [`frobenius_project`]: a log-spaced coarse grid on
/// `[lo, hi]` followed by golden-section refinement passes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaSearch {
    pub lo: f64,
    pub hi: f64,
    pub coarse_points: usize,
    pub refine_passes: usize,
}

impl Default for ThetaSearch {
    fn default() -> Self {
        Self { lo: 0.05, hi: 10.0, coarse_points: 64, refine_passes: 2 }
    }
}

impl ThetaSearch {
    fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo > 0.0 && self.hi > self.lo) {
            return Err(QpgpError::BadSearchSpec(format!("invalid theta range [{}, {}]", self.lo, self.hi)));
        }
        if self.coarse_points < 2 {
            return Err(QpgpError::BadSearchSpec("theta grid needs at least 2 points".into()));
        }
        Ok(())
    }
}

/// Outcome of a parametric Frobenius fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParametricEstimate {
    pub theta: f64,
    pub sigma2: f64,
    /// ‖target − 𝒦(θ̂, σ̂²)‖_F
    pub residual: f64,
}

const MIN_SIGMA2: f64 = 1e-12;

/// Target matrix with its diagonal sums `diag_sum[t] = Σ_{|i-j|=t} T(i,j)`.
struct FrobeniusTarget<'a> {
    target: &'a DMatrix<f64>,
    diag_sum: Vec<f64>,
}

impl<'a> FrobeniusTarget<'a> {
    fn new(target: &'a DMatrix<f64>) -> Self {
        let p = target.nrows();
        let mut diag_sum = vec![0.0; p];
        for i in 0..p {
            for j in 0..p {
                diag_sum[i.abs_diff(j)] += target[(i, j)];
            }
        }
        Self { target, diag_sum }
    }

    /// Best sigma2 and squared residual for a unit-variance lag profile. The
    /// residual is summed entrywise rather than expanded, so exact fits give
    /// an exact zero and the θ search can resolve the minimum sharply.
    fn fit(&self, unit: &[f64]) -> (f64, f64) {
        let p = unit.len();
        let mut cross = 0.0;
        let mut bb = 0.0;
        for (t, (u, d)) in unit.iter().zip(&self.diag_sum).enumerate() {
            let count = if t == 0 { p } else { 2 * (p - t) } as f64;
            cross += u * d;
            bb += u * u * count;
        }
        let sigma2 = if bb > 0.0 { (cross / bb).max(MIN_SIGMA2) } else { MIN_SIGMA2 };
        let mut resid2 = 0.0;
        for i in 0..p {
            for j in 0..p {
                let d = self.target[(i, j)] - sigma2 * unit[i.abs_diff(j)];
                resid2 += d * d;
            }
        }
        (sigma2, resid2)
    }
}

/// Fits `(theta, sigma2)` of a parametric family to a symmetric target by
/// minimizing ‖target − 𝒦(θ, σ²)‖_F with the default theta search.
pub fn frobenius_project(target: &DMatrix<f64>, family: &ParametricFamily) -> Result<ParametricEstimate> {
    frobenius_project_with(target, family, &ThetaSearch::default())
}

pub fn frobenius_project_with(
    target: &DMatrix<f64>,
    family: &ParametricFamily,
    search: &ThetaSearch,
) -> Result<ParametricEstimate> {
    family.validate()?;
    search.validate()?;
    let p = target.nrows();
    if p == 0 || target.ncols() != p {
        return Err(QpgpError::BadSearchSpec("target must be a non-empty square matrix".into()));
    }
    let tgt = FrobeniusTarget::new(target);
    let objective = |theta: f64| -> (f64, f64) {
        let unit = family.kernel(p, theta, 1.0).expect("validated family").lag_values();
        tgt.fit(&unit)
    };

    if !family.has_theta() {
        let ParametricFamily::Cosine { iota } = *family else { unreachable!() };
        let (sigma2, r2) = objective(iota as f64);
        return Ok(ParametricEstimate { theta: iota as f64, sigma2, residual: r2.sqrt() });
    }

    let (log_lo, log_hi) = (search.lo.ln(), search.hi.ln());
    let n = search.coarse_points;
    let grid: Vec<f64> = (0..n).map(|i| log_lo + (log_hi - log_lo) * i as f64 / (n - 1) as f64).collect();
    let (best_idx, _) = grid
        .iter()
        .enumerate()
        .map(|(i, &lt)| (i, objective(lt.exp()).1))
        .fold((0, f64::INFINITY), |acc, (i, r)| if r < acc.1 { (i, r) } else { acc });

    let step = (log_hi - log_lo) / (n - 1) as f64;
    let mut center = grid[best_idx];
    let mut half_width = step;
    for _ in 0..search.refine_passes {
        let a = (center - half_width).max(log_lo);
        let b = (center + half_width).min(log_hi);
        center = golden_section(|lt| objective(lt.exp()).1, a, b, 1e-10);
        half_width *= 0.25;
    }
    // Keep the coarse winner if refinement wandered onto a worse point.
    let refined = objective(center.exp());
    let coarse = objective(grid[best_idx].exp());
    let (log_theta, (sigma2, r2)) =
        if refined.1 <= coarse.1 { (center, refined) } else { (grid[best_idx], coarse) };
    Ok(ParametricEstimate { theta: log_theta.exp(), sigma2, residual: r2.sqrt() })
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn mackay_examples() {
        let k = PeriodicKernel::mackay(10, 1.0, 1.0).unwrap();
        assert_eq!(k.evaluate(0), 1.0);
        assert_close(k.evaluate(5), (-1.0f64).exp(), 1e-15);
        assert_eq!(k.evaluate(13), k.evaluate(3));
    }

    #[test]
    fn cosine_quarter_period_is_zero() {
        let k = PeriodicKernel::cosine(8, 1, 2.0).unwrap();
        assert_close(k.evaluate(2), 0.0, 1e-15);
        assert_eq!(k.evaluate(0), 2.0);
    }

    #[test]
    fn matern_closed_forms() {
        let p = 12;
        for (nu, poly) in [
            (0.5, Box::new(|_: f64| 1.0) as Box<dyn Fn(f64) -> f64>),
            (1.5, Box::new(|phi: f64| 1.0 + phi)),
            (2.5, Box::new(|phi: f64| 1.0 + phi + phi * phi / 3.0)),
        ] {
            let k = PeriodicKernel::matern(p, nu, 0.8, 1.7).unwrap();
            assert_eq!(k.variance(), 1.7);
            let phi = 2.0 / 0.8 * (2.0 * nu * (PI * 3.0 / 12.0).sin().powi(2)).sqrt();
            assert_close(k.evaluate(3), 1.7 * poly(phi) * (-phi).exp(), 1e-14);
        }
        let err = PeriodicKernel::matern(p, 1.0, 1.0, 1.0).unwrap_err();
        assert_eq!(err.code(), "matern-nu-unsupported");
    }

    #[test]
    fn block_cov_identity_for_white_table() {
        let k = PeriodicKernel::tabulated(vec![1.0, 0.0]).unwrap();
        let c = block_cov(&k).unwrap();
        assert_eq!(c.matrix(), &DMatrix::<f64>::identity(2, 2));
        assert_eq!(c.logdet(), 0.0);
        assert_eq!(c.jitter(), 0.0);
    }

    #[test]
    fn block_cov_entries_match_evaluate() {
        let k = PeriodicKernel::mackay(3, 1.0, 1.0).unwrap();
        let c = block_cov(&k).unwrap();
        assert_eq!(c.jitter(), 0.0);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(c.matrix()[(i, j)], k.evaluate(i as i64 - j as i64));
            }
        }
        let off = (-(PI / 3.0).sin().powi(2)).exp();
        assert_close(c.matrix()[(0, 1)], off, 1e-15);
    }

    #[test]
    fn cosine_block_cov_needs_jitter() {
        let k = PeriodicKernel::cosine(4, 1, 1.0).unwrap();
        let raw = toeplitz_matrix(&k);
        // Eigenvalue oracle: rank 2 before jitter.
        let eig = raw.clone().symmetric_eigen().eigenvalues;
        let positive = eig.iter().filter(|e| **e > 1e-12).count();
        assert_eq!(positive, 2);
        let c = block_cov(&k).unwrap();
        assert!(c.jitter() > 0.0);
        assert!(c.logdet().is_finite());
    }

    #[test]
    fn chol_reproduces_matrix() {
        let k = PeriodicKernel::matern(7, 1.5, 1.2, 2.0).unwrap();
        let c = block_cov(&k).unwrap();
        let p = c.dim();
        let l = DMatrix::from_fn(p, p, |i, j| if j <= i { c.factor().row(i)[j] } else { 0.0 });
        let err = (&l * l.transpose() - c.matrix()).norm() / c.matrix().norm();
        assert!(err < 1e-10);
    }

    #[test]
    fn indefinite_table_rejected() {
        let err = PeriodicKernel::tabulated(vec![1.0, 1.0]).unwrap_err();
        assert_eq!(err.code(), "kernel-not-positive-definite");
        let err = block_cov(&PeriodicKernel::tabulated_unchecked(vec![1.0, 2.0]).unwrap()).unwrap_err();
        assert_eq!(err.code(), "kernel-not-positive-definite");
    }

    #[test]
    fn white_sequence_unchanged_by_projection() {
        let v = vec![1.0, 0.0, 0.0, 0.0, 0.0];
        let out = spectral_project(&v).unwrap().lag_values();
        for (a, b) in out.iter().zip(&v) {
            assert_close(*a, *b, 1e-12);
        }
    }

    /// Independent dense-grid oracle: evaluates the spectrum at 1e5 points,
    /// clips, integrates each Fourier coefficient by the trapezoid rule on
    /// [-π, π], repeats for the same number of passes and closes the deficit
    /// measured on that grid at lag 0.
    fn dense_oracle(values: &[f64]) -> Vec<f64> {
        let n = 100_000usize;
        let h = 2.0 * PI / n as f64;
        let lams: Vec<f64> = (0..=n).map(|i| -PI + h * i as f64).collect();
        let spec = |v: &[f64]| -> Vec<f64> {
            lams.iter()
                .map(|lam| v[0] + 2.0 * v.iter().enumerate().skip(1).map(|(t, x)| x * (t as f64 * lam).cos()).sum::<f64>())
                .collect()
        };
        let mut out = values.to_vec();
        for pass in 0..=MAX_CLIP_PASSES {
            let s = spec(&out);
            let min = s.iter().copied().fold(f64::INFINITY, f64::min);
            if min >= 0.0 {
                break;
            }
            if pass == MAX_CLIP_PASSES {
                out[0] -= min;
                break;
            }
            let fv: Vec<f64> = s.iter().map(|x| (x / (2.0 * PI)).max(0.0)).collect();
            out = (0..values.len())
                .map(|t| {
                    let g = |i: usize| (t as f64 * lams[i]).cos() * fv[i];
                    h * (0.5 * g(0) + (1..n).map(g).sum::<f64>() + 0.5 * g(n))
                })
                .collect();
        }
        out
    }

    #[test]
    fn clipped_projection_matches_dense_oracle() {
        let v = [1.0, 1.0];
        let got = spectral_project(&v).unwrap().lag_values();
        let want = dense_oracle(&v);
        for (a, b) in got.iter().zip(&want) {
            assert_close(*a, *b, 1e-6);
        }
        // Spectrum of the input is negative near π, so the output must differ.
        assert!((got[1] - 1.0).abs() > 0.1);
        // p = 2: non-negative spectrum ⇔ κ(0) ≥ 2|κ(1)|.
        assert!(got[0] >= 2.0 * got[1].abs() - 1e-9);
    }

    #[test]
    fn projection_is_idempotent_and_nonnegative() {
        let v = [2.5, 2.0, -0.3, 0.4];
        let once = spectral_project(&v).unwrap().lag_values();
        let scale = once.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        assert!(lag_spectrum(&once).iter().all(|s| *s >= -1e-9 * scale));
        let twice = spectral_project(&once).unwrap().lag_values();
        for (a, b) in once.iter().zip(&twice) {
            assert_close(*a, *b, 1e-8);
        }
        assert!(PeriodicKernel::tabulated(once).is_ok());
    }

    #[test]
    fn frobenius_exact_recovery() {
        let k = PeriodicKernel::mackay(10, 1.0, 1.0).unwrap();
        let target = toeplitz_matrix(&k);
        let est = frobenius_project(&target, &ParametricFamily::MacKay).unwrap();
        assert_close(est.theta, 1.0, 1e-5);
        assert_close(est.sigma2, 1.0, 1e-6);
        let est2 = frobenius_project(&(target * 2.0), &ParametricFamily::MacKay).unwrap();
        assert_close(est2.theta, 1.0, 1e-5);
        assert_close(est2.sigma2, 2.0, 1e-6);
    }

    #[test]
    fn frobenius_noisy_recovery_matches_fine_grid_oracle() {
        use rand::{Rng, SeedableRng};
        let p = 10;
        let truth = toeplitz_matrix(&PeriodicKernel::mackay(p, 1.3, 0.7).unwrap());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut noise = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1e-3..1e-3));
        noise = (&noise + noise.transpose()) * 0.5;
        let target = truth + noise;

        // Exhaustive oracle over theta with a brute-force sigma2 least squares.
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=1000 {
            let theta = 0.5 + 0.001 * i as f64;
            let b = toeplitz_matrix(&PeriodicKernel::mackay(p, theta, 1.0).unwrap());
            let s2 = target.dot(&b) / b.dot(&b);
            let r = (&target - &b * s2).norm();
            if r < best.0 {
                best = (r, theta, s2);
            }
        }
        let est = frobenius_project(&target, &ParametricFamily::MacKay).unwrap();
        assert_close(est.theta, 1.3, 0.02);
        assert_close(est.sigma2, 0.7, 0.02);
        assert_close(est.theta, best.1, 1e-3);
        assert!(est.residual <= best.0 + 1e-12);
    }

    #[test]
    fn frobenius_bad_search_spec() {
        let t = DMatrix::<f64>::identity(3, 3);
        let bad = ThetaSearch { lo: 1.0, hi: 0.5, ..Default::default() };
        let err = frobenius_project_with(&t, &ParametricFamily::MacKay, &bad).unwrap_err();
        assert_eq!(err.code(), "bad-search-spec");
        let bad = ThetaSearch { coarse_points: 0, ..Default::default() };
        assert_eq!(
            frobenius_project_with(&t, &ParametricFamily::MacKay, &bad).unwrap_err().code(),
            "bad-search-spec"
        );
    }

    #[test]
    fn frobenius_grid_optimality_on_random_targets() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let p = rng.random_range(3..12);
            let theta = rng.random_range(0.3..3.0);
            let sigma2 = rng.random_range(0.2..3.0);
            let base = toeplitz_matrix(&PeriodicKernel::mackay(p, theta, sigma2).unwrap());
            let mut noise = DMatrix::from_fn(p, p, |_, _| rng.random_range(-0.05..0.05));
            noise = (&noise + noise.transpose()) * 0.5;
            let target = base + noise;
            let est = frobenius_project(&target, &ParametricFamily::MacKay).unwrap();
            for i in 0..200 {
                let th = 0.05 * (200.0f64).powf(i as f64 / 199.0);
                let b = toeplitz_matrix(&PeriodicKernel::mackay(p, th, 1.0).unwrap());
                let s2 = (target.dot(&b) / b.dot(&b)).max(MIN_SIGMA2);
                let r = (&target - &b * s2).norm();
                assert!(est.residual <= r + 1e-9, "grid point {th} beats estimate");
            }
        }
    }

    #[test]
    fn spec_json_round_trip() {
        let json = r#"{"form":"tabulated","p":1,"values":[1]}"#;
        let k: PeriodicKernel = serde_json::from_str(json).unwrap();
        assert_eq!(k.period(), 1);
        let k = PeriodicKernel::matern(11, 1.5, 0.76, 2568.0).unwrap();
        let s = serde_json::to_string(&k).unwrap();
        assert!(s.contains(r#""form":"matern""#));
        let back: PeriodicKernel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, k);
        assert!(serde_json::from_str::<PeriodicKernel>(r#"{"form":"mackay","p":0,"theta":1,"sigma2":1}"#).is_err());
    }

    proptest! {
        #[test]
        fn parametric_kernels_even_and_periodic(
            p in 1usize..40,
            theta in 0.05f64..5.0,
            sigma2 in 0.01f64..10.0,
            t in -500i64..500,
            which in 0usize..5,
        ) {
            let k = match which {
                0 => PeriodicKernel::mackay(p, theta, sigma2).unwrap(),
                1 => PeriodicKernel::matern(p, 0.5, theta, sigma2).unwrap(),
                2 => PeriodicKernel::matern(p, 1.5, theta, sigma2).unwrap(),
                3 => PeriodicKernel::matern(p, 2.5, theta, sigma2).unwrap(),
                _ => PeriodicKernel::cosine(p, 1 + (theta as u32 % 3), sigma2).unwrap(),
            };
            let v = k.evaluate(t);
            prop_assert_eq!(v, k.evaluate(-t));
            prop_assert_eq!(v, k.evaluate(t + p as i64));
            prop_assert_eq!(v, k.evaluate(t.rem_euclid(p as i64)));
            prop_assert_eq!(k.evaluate(0), sigma2);
        }

        #[test]
        fn projection_output_spectrum_nonnegative(values in proptest::collection::vec(-1.0f64..1.0, 1..16)) {
            let mut v = values;
            v[0] = v[0].abs() + 0.1;
            let out = spectral_project(&v).unwrap().lag_values();
            let scale = out.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
            prop_assert!(lag_spectrum(&out).iter().all(|s| *s >= -1e-9 * scale));
            let again = spectral_project(&out).unwrap().lag_values();
            for (a, b) in out.iter().zip(&again) {
                prop_assert!((a - b).abs() <= 1e-8 * scale.max(1.0));
            }
        }
    }
}
