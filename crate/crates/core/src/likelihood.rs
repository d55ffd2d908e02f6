//! Negative log-likelihoods: the dense baseline, the block-recursive form, and
//! the reduced Stage-I objective (with its partial-tail extension).

use nalgebra::DMatrix;

use crate::dense;
use crate::error::{QpgpError, Result};
use crate::kernels::BlockCov;
use crate::linalg::dot;
use crate::process::{BlockSeries, QpgpModel};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodValue {
    pub value: f64,
    pub gradient_omega: Option<f64>,
    pub gradient_k: Option<DMatrix<f64>>,
}

impl LikelihoodValue {
    fn plain(value: f64) -> Self {
        Self { value, gradient_omega: None, gradient_k: None }
    }
}

/// Negative log-likelihood through the dense n×n covariance (O(n³)).
pub fn nll_naive(series: &BlockSeries, model: &QpgpModel) -> Result<LikelihoodValue> {
    model.require_standard()?;
    model.check_period(series)?;
    if series.tail_len() != 0 {
        return Err(QpgpError::PartialBlockUnsupportedNaive(series.tail_len()));
    }
    let n = series.len();
    let llt = dense::standard_cov_factor(model, n)?;
    let l = llt.L();
    let logdet: f64 = 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
    let u = dense::forward_solve(l, series.values());
    let quad = dot(&u, &u);
    Ok(LikelihoodValue::plain(0.5 * logdet + 0.5 * quad + 0.5 * n as f64 * LN_2PI))
}

/// Negative log-likelihood through the block recursion, O(k p²) given the
/// cached factor of 𝒦. A partial tail contributes through the leading l×l
/// block of 𝒦.
pub fn nll_block(series: &BlockSeries, model: &QpgpModel) -> Result<LikelihoodValue> {
    model.require_standard()?;
    model.check_period(series)?;
    nll_block_with_cov(series, model.omega(), model.block_cov()).map(LikelihoodValue::plain)
}

pub(crate) fn nll_block_with_cov(series: &BlockSeries, omega: f64, cov: &BlockCov) -> Result<f64> {
    let k = series.complete_blocks();
    if k == 0 {
        return Err(QpgpError::InsufficientBlocks { needed: 1, have: 0 });
    }
    let p = series.period();
    let f = cov.factor();
    let logdet = cov.logdet();
    let w2 = omega * omega;
    let mut scratch = Vec::with_capacity(p);
    let mut resid = vec![0.0; p];

    let mut quad = 0.0;
    for i in 1..k {
        let (prev, cur) = (series.block(i - 1), series.block(i));
        for j in 0..p {
            resid[j] = cur[j] - omega * prev[j];
        }
        quad += f.quad_form(&resid, &mut scratch);
    }
    let first = f.quad_form(series.block(0), &mut scratch);
    let mut value = 0.5 * (k - 1) as f64 * logdet
        + 0.5 * quad
        + 0.5 * (logdet - p as f64 * (1.0 - w2).ln())
        + 0.5 * (1.0 - w2) * first;

    let tail = series.tail();
    if !tail.is_empty() {
        let l = tail.len();
        let prev = &series.block(k - 1)[..l];
        let r: Vec<f64> = tail.iter().zip(prev).map(|(b, a)| b - omega * a).collect();
        value += 0.5 * f.logdet_leading(l) + 0.5 * f.quad_form(&r, &mut scratch);
    }
    Ok(value + 0.5 * series.len() as f64 * LN_2PI)
}

/// Second-moment summaries of a series that make every evaluation of the
/// reduced likelihood O(p³) regardless of the number of blocks.
///
/// With `y_i` the complete blocks, `A = Σ y_{i+1} y_{i+1}ᵀ`,
/// `B = Σ y_{i+1} y_iᵀ` and `C = Σ y_i y_iᵀ` over `i = 1..k-1`, so that the
/// residual scatter is `S(ω) = (A - ω(B + Bᵀ) + ω² C) / (k - 1)`.
#[derive(Debug, Clone)]
pub struct ReducedMoments {
    p: usize,
    k: usize,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    /// First `l` entries of the last complete block.
    tail_prev: Vec<f64>,
    tail: Vec<f64>,
}

impl ReducedMoments {
    pub fn from_series(series: &BlockSeries) -> Result<Self> {
        let k = series.complete_blocks();
        if k < 2 {
            return Err(QpgpError::InsufficientBlocks { needed: 2, have: k });
        }
        let p = series.period();
        let mut a = DMatrix::zeros(p, p);
        let mut b = DMatrix::zeros(p, p);
        let mut c = DMatrix::zeros(p, p);
        for i in 1..k {
            let (prev, cur) = (series.block(i - 1), series.block(i));
            for r in 0..p {
                for s in 0..p {
                    a[(r, s)] += cur[r] * cur[s];
                    b[(r, s)] += cur[r] * prev[s];
                    c[(r, s)] += prev[r] * prev[s];
                }
            }
        }
        let l = series.tail_len();
        Ok(Self {
            p,
            k,
            a,
            b,
            c,
            tail_prev: series.block(k - 1)[..l].to_vec(),
            tail: series.tail().to_vec(),
        })
    }

    pub fn period(&self) -> usize {
        self.p
    }

    pub fn complete_blocks(&self) -> usize {
        self.k
    }

    pub fn tail_len(&self) -> usize {
        self.tail.len()
    }

    /// Residual scatter `S(ω)`, averaged over the k-1 transitions.
    pub fn scatter(&self, omega: f64) -> DMatrix<f64> {
        let bs = &self.b + self.b.transpose();
        (&self.a - bs * omega + &self.c * (omega * omega)) / (self.k - 1) as f64
    }

    /// Tail residual `y_{k+1}^{(l)} - ω y_k^{(l)}`.
    pub fn tail_residual(&self, omega: f64) -> Vec<f64> {
        self.tail.iter().zip(&self.tail_prev).map(|(b, a)| b - omega * a).collect()
    }

    /// Unconstrained minimizer in ω for fixed 𝒦: the ratio of cross to
    /// lagged quadratic forms, including the tail terms through 𝒦_l.
    pub fn omega_ratio(&self, cov: &BlockCov) -> f64 {
        let kinv = cov.inverse();
        let (tn, td) = self.tail_terms(cov);
        (kinv.dot(&self.b) + tn) / (kinv.dot(&self.c) + td)
    }

    /// `(y_k^{(l)}ᵀ 𝒦_l⁻¹ y_{k+1}^{(l)}, y_k^{(l)}ᵀ 𝒦_l⁻¹ y_k^{(l)})`.
    fn tail_terms(&self, cov: &BlockCov) -> (f64, f64) {
        if self.tail.is_empty() {
            return (0.0, 0.0);
        }
        let f = cov.factor();
        let mut u = self.tail_prev.clone();
        f.forward_solve_in_place(&mut u);
        let mut v = self.tail.clone();
        f.forward_solve_in_place(&mut v);
        (dot(&u, &v), dot(&u, &u))
    }

    /// `ℓ̃ = log|𝒦| + tr(𝒦⁻¹ S(ω)) + (log|𝒦_l| + rᵀ𝒦_l⁻¹r) / (k-1)`, with
    /// optional gradients in ω and in the entries of 𝒦.
    pub fn evaluate(&self, omega: f64, cov: &BlockCov, gradients: bool) -> LikelihoodValue {
        let scale = 1.0 / (self.k - 1) as f64;
        let kinv = cov.inverse();
        let s = self.scatter(omega);
        let mut value = cov.logdet() + kinv.dot(&s);

        let l = self.tail.len();
        let f = cov.factor();
        let r = self.tail_residual(omega);
        let mut w = r.clone();
        if l > 0 {
            f.forward_solve_in_place(&mut w);
            value += scale * (f.logdet_leading(l) + dot(&w, &w));
        }
        if !gradients {
            return LikelihoodValue::plain(value);
        }

        let (tn, td) = self.tail_terms(cov);
        let g_omega =
            scale * (-2.0 * kinv.dot(&self.b) + 2.0 * omega * kinv.dot(&self.c)) + scale * (-2.0 * tn + 2.0 * omega * td);

        let mut g_k = &kinv - &kinv * &s * &kinv;
        if l > 0 {
            let kl_inv = f.inverse_leading(l);
            f.backward_solve_in_place(&mut w);
            for i in 0..l {
                for j in 0..l {
                    g_k[(i, j)] += scale * (kl_inv[(i, j)] - w[i] * w[j]);
                }
            }
        }
        LikelihoodValue { value, gradient_omega: Some(g_omega), gradient_k: Some(g_k) }
    }
}

/// Reduced negative log-likelihood ℓ̃ at (ω, 𝒦). A partial tail switches to
/// the extended form automatically.
pub fn nll_reduced(series: &BlockSeries, omega: f64, cov: &BlockCov, gradients: bool) -> Result<LikelihoodValue> {
    if cov.dim() != series.period() {
        return Err(QpgpError::PeriodMismatch { model: cov.dim(), other: series.period() });
    }
    Ok(ReducedMoments::from_series(series)?.evaluate(omega, cov, gradients))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{block_cov, PeriodicKernel};
    use crate::process::generate_len;

    fn white(p: usize) -> BlockCov {
        BlockCov::from_matrix(DMatrix::identity(p, p)).unwrap()
    }

    fn iid_model() -> QpgpModel {
        QpgpModel::new(0.0, PeriodicKernel::tabulated(vec![1.0]).unwrap()).unwrap()
    }

    #[test]
    fn standard_normal_examples() {
        let m = iid_model();
        let zeros = BlockSeries::new(vec![0.0; 3], 1).unwrap();
        let want = 1.5 * LN_2PI;
        assert!((nll_naive(&zeros, &m).unwrap().value - want).abs() < 1e-12);
        assert!((nll_block(&zeros, &m).unwrap().value - want).abs() < 1e-12);

        let pm = BlockSeries::new(vec![1.0, -1.0], 1).unwrap();
        let want = 1.0 + LN_2PI;
        assert!((nll_naive(&pm, &m).unwrap().value - want).abs() < 1e-12);
        assert!((nll_block(&pm, &m).unwrap().value - want).abs() < 1e-12);
    }

    #[test]
    fn naive_rejects_partial_tail() {
        let s = BlockSeries::new(vec![0.1, 0.2, 0.3], 2).unwrap();
        let m = QpgpModel::new(0.3, PeriodicKernel::mackay(2, 1.0, 1.0).unwrap()).unwrap();
        assert_eq!(nll_naive(&s, &m).unwrap_err().code(), "partial-block-unsupported-naive");
    }

    #[test]
    fn single_block_is_marginal_term() {
        let m = QpgpModel::new(0.4, PeriodicKernel::mackay(4, 1.5, 2.0).unwrap()).unwrap();
        let s = BlockSeries::new(vec![0.3, -1.0, 0.2, 0.8], 4).unwrap();
        let c = m.block_cov();
        let mut scratch = Vec::new();
        let q = c.factor().quad_form(s.values(), &mut scratch);
        let want = 0.5 * (c.logdet() - 4.0 * (1.0 - 0.16f64).ln()) + 0.5 * 0.84 * q + 2.0 * LN_2PI;
        assert!((nll_block(&s, &m).unwrap().value - want).abs() < 1e-12);
    }

    #[test]
    fn block_matches_naive_on_draw() {
        let m = QpgpModel::new(0.5, PeriodicKernel::mackay(10, 1.0, 1.0).unwrap()).unwrap();
        let s = generate_len(&m, 600, 9).unwrap();
        let a = nll_naive(&s, &m).unwrap().value;
        let b = nll_block(&s, &m).unwrap().value;
        assert!(((a - b) / a).abs() < 1e-8, "{a} vs {b}");
    }

    #[test]
    fn partial_tail_block_matches_dense() {
        let m = QpgpModel::new(-0.6, PeriodicKernel::matern(5, 1.5, 1.1, 0.7).unwrap()).unwrap();
        let s = generate_len(&m, 33, 2).unwrap();
        let n = s.len();
        let llt = dense::standard_cov_factor(&m, n).unwrap();
        let l = llt.L();
        let logdet: f64 = 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
        let u = dense::forward_solve(l, s.values());
        let want = 0.5 * logdet + 0.5 * dot(&u, &u) + 0.5 * n as f64 * LN_2PI;
        let got = nll_block(&s, &m).unwrap().value;
        assert!(((want - got) / want).abs() < 1e-10);
    }

    #[test]
    fn reduced_scalar_example() {
        let s = BlockSeries::new(vec![1.3, -0.4], 1).unwrap();
        for omega in [-0.7, 0.0, 0.25, 0.9] {
            let v = nll_reduced(&s, omega, &white(1), false).unwrap().value;
            assert!((v - (-0.4 - omega * 1.3f64).powi(2)).abs() < 1e-14);
        }
    }

    #[test]
    fn reduced_needs_two_blocks() {
        let s = BlockSeries::new(vec![1.0, 2.0, 3.0], 2).unwrap();
        assert_eq!(nll_reduced(&s, 0.0, &white(2), false).unwrap_err().code(), "insufficient-blocks");
    }

    /// Direct evaluation by summing per-block quadratic forms.
    fn reduced_direct(s: &BlockSeries, omega: f64, cov: &BlockCov) -> f64 {
        let k = s.complete_blocks();
        let p = s.period();
        let kinv = cov.matrix().clone().try_inverse().unwrap();
        let mut sum = 0.0;
        for i in 1..k {
            let z = nalgebra::DVector::from_fn(p, |j, _| s.block(i)[j] - omega * s.block(i - 1)[j]);
            sum += (z.transpose() * &kinv * &z)[(0, 0)];
        }
        let mut v = cov.matrix().determinant().ln() + sum / (k - 1) as f64;
        let l = s.tail_len();
        if l > 0 {
            let kl = cov.matrix().view((0, 0), (l, l)).into_owned();
            let r = nalgebra::DVector::from_fn(l, |j, _| s.tail()[j] - omega * s.block(k - 1)[j]);
            let q = (r.transpose() * kl.clone().try_inverse().unwrap() * &r)[(0, 0)];
            v += (kl.determinant().ln() + q) / (k - 1) as f64;
        }
        v
    }

    #[test]
    fn moments_match_direct_sum() {
        let m = QpgpModel::new(0.3, PeriodicKernel::mackay(6, 0.9, 1.4).unwrap()).unwrap();
        for n in [60, 64] {
            let s = generate_len(&m, n, 4).unwrap();
            let cov = block_cov(&PeriodicKernel::matern(6, 2.5, 0.8, 1.1).unwrap()).unwrap();
            let got = nll_reduced(&s, 0.37, &cov, false).unwrap().value;
            let want = reduced_direct(&s, 0.37, &cov);
            assert!((got - want).abs() < 1e-10 * want.abs().max(1.0), "{got} vs {want}");
        }
    }

    #[test]
    fn omega_gradient_vanishes_at_ratio() {
        let m = QpgpModel::new(0.6, PeriodicKernel::mackay(4, 1.0, 1.0).unwrap()).unwrap();
        for n in [80, 83] {
            let s = generate_len(&m, n, 12).unwrap();
            let cov = block_cov(m.kernel()).unwrap();
            let mo = ReducedMoments::from_series(&s).unwrap();
            let w = mo.omega_ratio(&cov);
            let g = mo.evaluate(w, &cov, true).gradient_omega.unwrap();
            assert!(g.abs() < 1e-10, "{g}");
        }
    }

    fn fd_check(n: usize) {
        let m = QpgpModel::new(-0.4, PeriodicKernel::mackay(3, 1.2, 0.9).unwrap()).unwrap();
        let s = generate_len(&m, n, 21).unwrap();
        let mo = ReducedMoments::from_series(&s).unwrap();
        let base = DMatrix::from_row_slice(3, 3, &[1.2, 0.3, -0.1, 0.3, 0.9, 0.2, -0.1, 0.2, 1.5]);
        let cov = BlockCov::from_matrix(base.clone()).unwrap();
        let omega = 0.21;
        let lv = mo.evaluate(omega, &cov, true);

        let h = 1e-6;
        let fd = (mo.evaluate(omega + h, &cov, false).value - mo.evaluate(omega - h, &cov, false).value) / (2.0 * h);
        let g = lv.gradient_omega.unwrap();
        assert!((fd - g).abs() <= 1e-5 * g.abs().max(1e-3), "omega: {fd} vs {g}");

        let gk = lv.gradient_k.unwrap();
        let h = 1e-5;
        for i in 0..3 {
            for j in i..3 {
                let bump = |d: f64| {
                    let mut k = base.clone();
                    k[(i, j)] += d;
                    if i != j {
                        k[(j, i)] += d;
                    }
                    mo.evaluate(omega, &BlockCov::from_matrix(k).unwrap(), false).value
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                let want = if i == j { gk[(i, i)] } else { gk[(i, j)] + gk[(j, i)] };
                assert!((fd - want).abs() < 1e-4, "K[{i},{j}]: {fd} vs {want}");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        fd_check(30);
    }

    #[test]
    fn gradients_match_finite_differences_with_tail() {
        fd_check(32);
    }
}
