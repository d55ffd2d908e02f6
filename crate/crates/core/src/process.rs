//! The quasi-periodic process: blocks of length p evolve as
//! `Y_{i+1} = ω Y_i + Z_{i+1}` with i.i.d. innovations `Z ~ N(0, 𝒦)`.
//!
//! Time indices are 1-based. A time `t` sits at position `l(t) = ((t-1) mod p) + 1`
//! of block `i(t) = (t - l(t)) / p` (0-based block number).

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{QpgpError, Result};
use crate::kernels::{block_cov, BlockCov, PeriodicKernel};
use crate::linalg::{jittered_cholesky, LowerFactor};
use crate::rng;

/// Largest admissible |ω|.
pub const OMEGA_MAX: f64 = 1.0 - 1e-6;

/// Distribution of the first block.
#[derive(Debug, Clone)]
pub enum InitCov {
    /// `Y_1 ~ N(0, 𝒦 / (1 - ω²))`, which makes the process stationary.
    Standard,
    /// `Y_1 ~ N(0, C0)` for a user-supplied p×p covariance.
    Custom(DMatrix<f64>),
}

#[derive(Debug, Clone)]
pub struct QpgpModel {
    omega: f64,
    kernel: PeriodicKernel,
    init: InitCov,
    cov: BlockCov,
    init_factor: Option<LowerFactor>,
}

/// Validates ω: non-finite or |ω| ≥ 1 is rejected, values in
/// (ω_max, 1) are clamped to ±ω_max.
pub fn clamp_omega(omega: f64) -> Result<f64> {
    if !omega.is_finite() || omega.abs() >= 1.0 {
        return Err(QpgpError::InvalidParameter(format!("|omega| must be < 1, got {omega}")));
    }
    Ok(omega.clamp(-OMEGA_MAX, OMEGA_MAX))
}

impl QpgpModel {
    /// A Standard (stationary) model.
    pub fn new(omega: f64, kernel: PeriodicKernel) -> Result<Self> {
        let omega = clamp_omega(omega)?;
        let cov = block_cov(&kernel)?;
        Ok(Self { omega, kernel, init: InitCov::Standard, cov, init_factor: None })
    }

    pub fn with_init(omega: f64, kernel: PeriodicKernel, init: InitCov) -> Result<Self> {
        let mut model = Self::new(omega, kernel)?;
        if let InitCov::Custom(c0) = &init {
            let p = model.period();
            if c0.nrows() != p || c0.ncols() != p {
                return Err(QpgpError::InvalidParameter(format!(
                    "initial covariance must be {p}x{p}, got {}x{}",
                    c0.nrows(),
                    c0.ncols()
                )));
            }
            let jf = jittered_cholesky(c0).ok_or_else(|| {
                QpgpError::KernelNotPositiveDefinite("initial covariance is not positive definite".into())
            })?;
            model.init_factor = Some(jf.factor);
        }
        model.init = init;
        Ok(model)
    }

    pub fn period(&self) -> usize {
        self.kernel.period()
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn kernel(&self) -> &PeriodicKernel {
        &self.kernel
    }

    pub fn init(&self) -> &InitCov {
        &self.init
    }

    pub fn is_standard(&self) -> bool {
        matches!(self.init, InitCov::Standard)
    }

    /// The factored block covariance 𝒦 (with any jitter applied).
    pub fn block_cov(&self) -> &BlockCov {
        &self.cov
    }

    pub(crate) fn require_standard(&self) -> Result<()> {
        if self.is_standard() {
            Ok(())
        } else {
            Err(QpgpError::InvalidParameter("operation requires a Standard-init model".into()))
        }
    }

    pub(crate) fn check_period(&self, series: &BlockSeries) -> Result<()> {
        if series.period() != self.period() {
            return Err(QpgpError::PeriodMismatch { model: self.period(), other: series.period() });
        }
        Ok(())
    }
}

/// 1-based position within the block, `l(t) ∈ 1..=p`.
#[inline]
pub fn block_position(t: usize, p: usize) -> usize {
    (t - 1) % p + 1
}

/// 0-based block number of time `t`.
#[inline]
pub fn block_index(t: usize, p: usize) -> usize {
    (t - block_position(t, p)) / p
}

/// An observed series split into `k` complete blocks of length `p` and a
/// partial tail of length `l < p`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSeries {
    values: Vec<f64>,
    period: usize,
}

impl BlockSeries {
    pub fn new(values: Vec<f64>, period: usize) -> Result<Self> {
        if period == 0 {
            return Err(QpgpError::InvalidParameter("period must be at least 1".into()));
        }
        if values.is_empty() {
            return Err(QpgpError::EmptySeries);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(QpgpError::InvalidParameter(format!("non-finite value at index {}", i + 1)));
        }
        Ok(Self { values, period })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn period(&self) -> usize {
        self.period
    }

    /// Number of complete blocks `k`.
    pub fn complete_blocks(&self) -> usize {
        self.values.len() / self.period
    }

    /// Length `l` of the partial tail.
    pub fn tail_len(&self) -> usize {
        self.values.len() % self.period
    }

    /// Complete block `i` (0-based).
    pub fn block(&self, i: usize) -> &[f64] {
        &self.values[i * self.period..(i + 1) * self.period]
    }

    /// The partial tail `y_{k+1}^{(l)}` (empty when `l = 0`).
    pub fn tail(&self) -> &[f64] {
        &self.values[self.complete_blocks() * self.period..]
    }

    /// The same values without the partial tail.
    pub fn complete_only(&self) -> Self {
        let n = self.complete_blocks() * self.period;
        Self { values: self.values[..n].to_vec(), period: self.period }
    }

    /// The same values re-partitioned with another period.
    pub fn with_period(&self, period: usize) -> Result<Self> {
        Self::new(self.values.clone(), period)
    }

    /// Writes a two-column `t,value` CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "value"])?;
        for (i, v) in self.values.iter().enumerate() {
            w.write_record([(i + 1).to_string(), format!("{v:e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn normal_vec<R: Rng>(rng: &mut R, p: usize) -> Vec<f64> {
    (0..p).map(|_| rng.sample(StandardNormal)).collect()
}

/// Draws `n_blocks` complete blocks from the model.
pub fn generate(model: &QpgpModel, n_blocks: usize, seed: u64) -> Result<BlockSeries> {
    if n_blocks == 0 {
        return Err(QpgpError::InvalidParameter("n_blocks must be at least 1".into()));
    }
    generate_len(model, n_blocks * model.period(), seed)
}

/// Draws the first `n` values of a path (the last block may be partial).
pub fn generate_len(model: &QpgpModel, n: usize, seed: u64) -> Result<BlockSeries> {
    if n == 0 {
        return Err(QpgpError::EmptySeries);
    }
    let p = model.period();
    let omega = model.omega;
    let mut rng = rng::seeded(seed);
    let blocks = n.div_ceil(p);
    let mut values = Vec::with_capacity(blocks * p);
    let mut block = vec![0.0; p];

    let z = normal_vec(&mut rng, p);
    match &model.init_factor {
        Some(f) => f.mul_vec(&z, &mut block),
        None => {
            model.cov.factor().mul_vec(&z, &mut block);
            let s = 1.0 / (1.0 - omega * omega).sqrt();
            block.iter_mut().for_each(|v| *v *= s);
        }
    }
    values.extend_from_slice(&block);

    let mut innov = vec![0.0; p];
    for _ in 1..blocks {
        let z = normal_vec(&mut rng, p);
        model.cov.factor().mul_vec(&z, &mut innov);
        for (b, e) in block.iter_mut().zip(&innov) {
            *b = omega * *b + e;
        }
        values.extend_from_slice(&block);
    }
    values.truncate(n);
    BlockSeries::new(values, p)
}

/// Exact covariance Cov(Y_t, Y_s) for 1-based times.
///
/// Within-block offsets use positions `l(t) - l(s)`, so tabulated kernels are
/// only ever read at lags `|t| < p`.
pub fn cov_oracle(model: &QpgpModel, t: usize, s: usize) -> f64 {
    assert!(t >= 1 && s >= 1, "times are 1-based");
    let p = model.period();
    let (early, late) = if s <= t { (s, t) } else { (t, s) };
    let (le, ll) = (block_position(early, p), block_position(late, p));
    let (ie, il) = (block_index(early, p), block_index(late, p));
    let w = model.omega;
    let w2 = w * w;
    let decay = w.powi((il - ie) as i32);
    let kappa = model.cov.matrix()[(ll - 1, le - 1)];
    match &model.init {
        InitCov::Standard => decay * kappa / (1.0 - w2),
        InitCov::Custom(c0) => {
            let a = w2.powi(ie as i32);
            decay * (kappa * (1.0 - a) / (1.0 - w2) + a * c0[(ll - 1, le - 1)])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mackay_model(omega: f64) -> QpgpModel {
        QpgpModel::new(omega, PeriodicKernel::mackay(10, 1.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn index_convention_at_block_edges() {
        assert_eq!(block_position(10, 10), 10);
        assert_eq!(block_index(10, 10), 0);
        assert_eq!(block_position(11, 10), 1);
        assert_eq!(block_index(11, 10), 1);
        assert_eq!(block_position(1, 1), 1);
        assert_eq!(block_index(5, 1), 4);
    }

    #[test]
    fn omega_validation() {
        let k = PeriodicKernel::mackay(3, 1.0, 1.0).unwrap();
        assert!(QpgpModel::new(1.0, k.clone()).is_err());
        assert!(QpgpModel::new(f64::NAN, k.clone()).is_err());
        let m = QpgpModel::new(0.9999999, k).unwrap();
        assert_eq!(m.omega(), OMEGA_MAX);
    }

    #[test]
    fn series_partition() {
        let s = BlockSeries::new((1..=23).map(f64::from).collect(), 5).unwrap();
        assert_eq!(s.complete_blocks(), 4);
        assert_eq!(s.tail_len(), 3);
        assert_eq!(s.block(1), &[6.0, 7.0, 8.0, 9.0, 10.0]);
        assert_eq!(s.tail(), &[21.0, 22.0, 23.0]);
        assert_eq!(s.complete_only().len(), 20);
        assert!(BlockSeries::new(vec![], 3).is_err());
        assert!(BlockSeries::new(vec![1.0, f64::NAN], 1).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let m = mackay_model(0.5);
        let a = generate(&m, 7, 42).unwrap();
        let b = generate(&m, 7, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate(&m, 7, 43).unwrap());
        assert_eq!(generate_len(&m, 65, 42).unwrap().values(), &a.values()[..65]);
        assert!(generate(&m, 0, 1).is_err());
    }

    #[test]
    fn oracle_examples() {
        let m = mackay_model(0.5);
        assert!((cov_oracle(&m, 4, 4) - 1.0 / 0.75).abs() < 1e-15);
        let want = 0.5 * (-(std::f64::consts::PI / 10.0).sin().powi(2)).exp() / 0.75;
        assert!((cov_oracle(&m, 3, 14) - want).abs() < 1e-15);
        assert_eq!(cov_oracle(&m, 3, 14), cov_oracle(&m, 14, 3));
    }

    #[test]
    fn custom_init_at_stationary_covariance_matches_standard() {
        let m = mackay_model(0.5);
        let c0 = m.block_cov().matrix() / 0.75;
        let custom = QpgpModel::with_init(0.5, m.kernel().clone(), InitCov::Custom(c0)).unwrap();
        for t in 1..=30 {
            for s in 1..=30 {
                assert!((cov_oracle(&m, t, s) - cov_oracle(&custom, t, s)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn custom_init_term_decays_geometrically() {
        let m = mackay_model(0.6);
        let c0 = m.block_cov().matrix() * 25.0;
        let custom = QpgpModel::with_init(0.6, m.kernel().clone(), InitCov::Custom(c0)).unwrap();
        let bound = 25.0 + 1.0 / (1.0 - 0.36);
        for t in 1..=80 {
            for s in 1..=t {
                let gap = (cov_oracle(&custom, t, s) - cov_oracle(&m, t, s)).abs();
                let decay = 0.36f64.powi(block_index(s, 10) as i32);
                assert!(gap <= bound * decay + 1e-12, "t={t} s={s}");
            }
        }
    }

    #[test]
    fn scalar_ar1_stationary_variance() {
        let k = PeriodicKernel::tabulated(vec![1.0]).unwrap();
        let m = QpgpModel::new(0.5, k).unwrap();
        assert!((cov_oracle(&m, 9, 9) - 4.0 / 3.0).abs() < 1e-15);
        let s = generate(&m, 200_000, 3).unwrap();
        let var = s.values().iter().map(|v| v * v).sum::<f64>() / s.len() as f64;
        assert!((var - 4.0 / 3.0).abs() < 0.03, "{var}");
    }

    #[test]
    fn csv_output_has_header_and_rows() {
        let s = BlockSeries::new(vec![1.5, -2.0], 1).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,value\n1,1.5e0\n2,-2e0"));
    }
}
