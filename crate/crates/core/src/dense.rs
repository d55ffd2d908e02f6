//! Dense n×n covariance of a Standard model, used only by the naive
//! baselines.

use faer::linalg::solvers::Llt;
use faer::{Mat, MatRef, Par, Side};

use crate::error::{QpgpError, Result};
use crate::process::QpgpModel;

/// Σ_n with entries ω^{|i(t)-i(s)|} 𝒦(l(t), l(s)) / (1 - ω²).
pub(crate) fn standard_cov(model: &QpgpModel, n: usize) -> Mat<f64> {
    let p = model.period();
    let w = model.omega();
    let k = model.block_cov().matrix();
    let scale = 1.0 / (1.0 - w * w);
    let blocks = n.div_ceil(p);
    let mut pow = Vec::with_capacity(blocks);
    let mut acc = scale;
    for _ in 0..blocks {
        pow.push(acc);
        acc *= w;
    }
    Mat::from_fn(n, n, |i, j| {
        let (bi, li) = (i / p, i % p);
        let (bj, lj) = (j / p, j % p);
        pow[bi.abs_diff(bj)] * k[(li, lj)]
    })
}

/// Lower Cholesky factor of Σ_n.
pub(crate) fn standard_cov_factor(model: &QpgpModel, n: usize) -> Result<Llt<f64>> {
    let sigma = standard_cov(model, n);
    let llt = Llt::new(sigma.as_ref(), Side::Lower).map_err(|_| QpgpError::DenseCovNotPd(n))?;
    drop(sigma);
    let l = llt.L();
    for i in 0..n {
        let d = l[(i, i)];
        if !(d.is_finite() && d > 0.0) {
            return Err(QpgpError::DenseCovNotPd(n));
        }
    }
    Ok(llt)
}

/// Solves `L u = y`.
pub(crate) fn forward_solve(l: MatRef<'_, f64>, y: &[f64]) -> Vec<f64> {
    let mut rhs = Mat::from_fn(y.len(), 1, |i, _| y[i]);
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l, rhs.as_mut(), Par::Seq);
    (0..y.len()).map(|i| rhs[(i, 0)]).collect()
}
