//! Small dense helpers for the p×p matrices that appear throughout the
//! estimator. Hot loops work on a packed row-major lower-triangular factor so
//! that per-block solves stay allocation free.

use nalgebra::{Cholesky, DMatrix, Dyn};

/// Relative floor on squared Cholesky pivots. A factorization whose smallest
/// pivot falls below `PIVOT_FLOOR * trace / p` is treated as failed.
pub(crate) const PIVOT_FLOOR: f64 = 1e-13;

/// Stricter floor for kernel matrices. These also enter the dense n×n
/// covariance, whose Cholesky loses about eps·cond digits; with this floor
/// the cosine kernel (rank ≤ 2) and very smooth MacKay kernels stay within
/// the 1e-8 agreement between the dense and block paths.
pub(crate) const KERNEL_PIVOT_FLOOR: f64 = 1e-7;

/// Diagonal jitter schedule, as multiples of `trace / p`.
pub(crate) const JITTER_STEPS: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Lower-triangular Cholesky factor stored row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerFactor {
    n: usize,
    packed: Vec<f64>,
}

impl LowerFactor {
    fn from_dense(l: &DMatrix<f64>) -> Self {
        let n = l.nrows();
        let mut packed = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in 0..=i {
                packed.push(l[(i, j)]);
            }
        }
        Self { n, packed }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Row `i` of the factor, entries `0..=i`.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let start = i * (i + 1) / 2;
        &self.packed[start..start + i + 1]
    }

    #[inline]
    pub fn diag(&self, i: usize) -> f64 {
        self.packed[i * (i + 1) / 2 + i]
    }

    /// Solves `L_m w = v` in place, where `m = v.len()` and `L_m` is the
    /// leading m×m block of the factor (itself the Cholesky factor of the
    /// leading principal submatrix).
    #[inline]
    pub fn forward_solve_in_place(&self, v: &mut [f64]) {
        debug_assert!(v.len() <= self.n);
        for i in 0..v.len() {
            let row = self.row(i);
            let mut acc = v[i];
            for j in 0..i {
                acc -= row[j] * v[j];
            }
            v[i] = acc / row[i];
        }
    }

    /// Solves `L_mᵀ x = w` in place.
    pub fn backward_solve_in_place(&self, w: &mut [f64]) {
        let m = w.len();
        for i in (0..m).rev() {
            let mut acc = w[i];
            for (j, wj) in w.iter().enumerate().skip(i + 1) {
                acc -= self.row(j)[i] * wj;
            }
            w[i] = acc / self.diag(i);
        }
    }

    /// `vᵀ M_m⁻¹ v` for the leading m×m principal submatrix `M_m`.
    pub fn quad_form(&self, v: &[f64], scratch: &mut Vec<f64>) -> f64 {
        scratch.clear();
        scratch.extend_from_slice(v);
        self.forward_solve_in_place(scratch);
        scratch.iter().map(|w| w * w).sum()
    }

    /// log-determinant of the leading m×m principal submatrix.
    pub fn logdet_leading(&self, m: usize) -> f64 {
        (0..m).map(|i| self.diag(i).ln()).sum::<f64>() * 2.0
    }

    /// Inverse of the leading m×m principal submatrix.
    pub fn inverse_leading(&self, m: usize) -> DMatrix<f64> {
        let mut inv = DMatrix::zeros(m, m);
        let mut col = vec![0.0; m];
        for c in 0..m {
            col.iter_mut().for_each(|x| *x = 0.0);
            col[c] = 1.0;
            self.forward_solve_in_place(&mut col);
            self.backward_solve_in_place(&mut col);
            for r in 0..m {
                inv[(r, c)] = col[r];
            }
        }
        // Symmetrize away round-off.
        let t = inv.transpose();
        (inv + t) * 0.5
    }

    /// `L x` for the full factor.
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.n) {
            *o = self.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
}

/// Result of a jittered factorization.
#[derive(Debug, Clone)]
pub struct JitteredFactor {
    pub factor: LowerFactor,
    /// Absolute amount added to the diagonal (0 when none was needed).
    pub jitter: f64,
}

fn try_factor(m: &DMatrix<f64>, floor: f64) -> Option<LowerFactor> {
    let chol = Cholesky::<f64, Dyn>::new(m.clone())?;
    let l = chol.l();
    if (0..l.nrows()).any(|i| {
        let d = l[(i, i)];
        !d.is_finite() || d * d <= floor
    }) {
        return None;
    }
    Some(LowerFactor::from_dense(&l))
}

/// Cholesky with the escalating diagonal jitter policy: if the plain
/// factorization fails, `eps * trace / p` is added to the diagonal for
/// `eps` in 1e-10, 1e-9, ..., 1e-6. Returns `None` when every step fails.
pub fn jittered_cholesky(m: &DMatrix<f64>) -> Option<JitteredFactor> {
    jittered_cholesky_with_floor(m, PIVOT_FLOOR)
}

/// As [`jittered_cholesky`], treating squared pivots below
/// `pivot_floor * trace / p` as failures.
pub fn jittered_cholesky_with_floor(m: &DMatrix<f64>, pivot_floor: f64) -> Option<JitteredFactor> {
    let p = m.nrows();
    if p == 0 {
        return Some(JitteredFactor { factor: LowerFactor { n: 0, packed: Vec::new() }, jitter: 0.0 });
    }
    let trace: f64 = (0..p).map(|i| m[(i, i)]).sum();
    let scale = if trace.is_finite() && trace > 0.0 { trace / p as f64 } else { 1.0 };
    let floor = pivot_floor * scale;
    if let Some(factor) = try_factor(m, floor) {
        return Some(JitteredFactor { factor, jitter: 0.0 });
    }
    for eps in JITTER_STEPS {
        let jitter = eps * scale;
        let mut shifted = m.clone();
        for i in 0..p {
            shifted[(i, i)] += jitter;
        }
        if let Some(factor) = try_factor(&shifted, floor) {
            return Some(JitteredFactor { factor, jitter });
        }
    }
    None
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub(crate) fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
