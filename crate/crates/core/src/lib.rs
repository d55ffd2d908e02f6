//! Structural-equation quasi-periodic Gaussian processes.
//!
//! A series is cut into blocks of one period `p`; successive blocks follow
//! `Y_{i+1} = ω Y_i + Z_{i+1}` with `Z ~ N(0, 𝒦)` and 𝒦 the Toeplitz matrix of
//! a periodic kernel. Everything that would naively need the n×n covariance
//! (likelihood, estimation, one-step prediction) works on p×p blocks instead.

mod dense;
pub mod bench;
pub mod bootstrap;
pub mod error;
pub mod estimator;
pub mod ingest;
pub mod kernels;
pub mod likelihood;
pub mod modelselect;
pub mod linalg;
pub mod predictor;
pub mod process;
pub mod rng;

pub use error::{QpgpError, Result};
pub use kernels::{
    block_cov, frobenius_project, frobenius_project_with, lag_spectrum, spectral_grid_size, spectral_project,
    toeplitz_matrix, BlockCov, KernelForm, KernelSpec, ParametricEstimate, ParametricFamily, PeriodicKernel,
    ThetaSearch,
};
pub use likelihood::{nll_block, nll_naive, nll_reduced, LikelihoodValue, ReducedMoments};
pub use process::{cov_oracle, generate, generate_len, BlockSeries, InitCov, QpgpModel, OMEGA_MAX};
pub use estimator::{
    fit, mle_grid, stage1, stage1_sweep, stage2, toeplitz_average, FitConfig, FitResult, FitSummary, GridRange,
    MleEstimate, MleGrid, Stage1Result,
};
pub use predictor::{eipse, predict_fast, predict_naive, predict_model, predict_plugin, PredictionTrace};
pub use bootstrap::{bootstrap_summary, resample, BootstrapSummary, ParamSummary};
pub use modelselect::{select_kernel, select_period, Candidate, Criterion, KernelChoice, SelectionReport};
pub use ingest::{detrend_quadratic, load_csv, read_csv, ColumnRef, Detrend, Impute, PreprocessReport, PreprocessSpec, Trend};
pub use bench::{run_bench, BenchConfig, BenchRow, BenchSuite};
