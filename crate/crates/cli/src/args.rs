use std::path::PathBuf;

use clap::Args;
use qpgp::{BenchSuite, ColumnRef, Detrend, Impute, KernelChoice, PreprocessSpec};

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Period p.
    #[arg(long)]
    pub p: usize,
    /// Between-block correlation ω, |ω| < 1.
    #[arg(long, allow_hyphen_values = true)]
    pub omega: f64,
    /// Kernel spec as JSON, or @path to a JSON file.
    #[arg(long)]
    pub kernel: String,
    /// Number of complete blocks (n = blocks · p).
    #[arg(long)]
    pub blocks: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV (t,value).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Input CSV.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Value column, by header name or 0-based index.
    #[arg(long)]
    pub column: Option<String>,
    #[arg(long, default_value = "none", value_parser = parse_detrend)]
    pub detrend: Detrend,
    #[arg(long, default_value = "none", value_parser = parse_impute)]
    pub impute: Impute,
}

impl InputArgs {
    pub fn spec(&self) -> PreprocessSpec {
        PreprocessSpec {
            detrend: self.detrend,
            impute: self.impute,
            column: self.column.as_ref().map(|c| c.parse::<ColumnRef>().unwrap_or_else(|e| match e {})),
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Period p. When omitted, --select-p picks it first.
    #[arg(long, required_unless_present = "select_p", conflicts_with = "select_p")]
    pub p: Option<usize>,
    /// Candidate periods, "a..b" (inclusive) or a comma list.
    #[arg(long, value_parser = parse_periods)]
    pub select_p: Option<Periods>,
    /// general, mackay, matern:<nu> or cosine:<iota>.
    #[arg(long, default_value = "general", value_parser = parse_kernel)]
    pub kernel_family: KernelChoice,
    /// Number of bootstrap resamples (at least 50); no bootstrap when omitted.
    #[arg(long, value_name = "M")]
    pub bootstrap: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output JSON; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Fit JSON (or any JSON with omega/omega_hat and kernel).
    #[arg(long)]
    pub model: PathBuf,
    /// Expected period; rejected when it differs from the model's.
    #[arg(long)]
    pub p: Option<usize>,
    /// Output trace CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub p: usize,
    #[arg(long, default_value = "general", value_parser = parse_kernel)]
    pub kernel_family: KernelChoice,
    /// Number of resamples (at least 50).
    #[arg(short = 'M', long = "resamples", default_value_t = 1000)]
    pub resamples: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Candidate periods for period selection, "a..b" or a comma list.
    #[arg(long, value_parser = parse_periods, required_unless_present = "kernels", conflicts_with = "kernels")]
    pub select_p: Option<Periods>,
    /// Comma-separated kernel choices for kernel selection (needs --p).
    #[arg(long, value_delimiter = ',', value_parser = parse_kernel, requires = "p")]
    pub kernels: Option<Vec<KernelChoice>>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output JSON report; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the ranked candidates as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_parser = parse_suite)]
    pub suite: BenchSuite,
    /// Series lengths, multiples of 10.
    #[arg(long, value_delimiter = ',', default_value = "600,3000,10000")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 7)]
    pub reps: usize,
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
    /// Output CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_detrend(s: &str) -> Result<Detrend, String> {
    s.parse().map_err(|e: qpgp::QpgpError| e.to_string())
}

fn parse_impute(s: &str) -> Result<Impute, String> {
    s.parse().map_err(|e: qpgp::QpgpError| e.to_string())
}

fn parse_kernel(s: &str) -> Result<KernelChoice, String> {
    s.parse().map_err(|e: qpgp::QpgpError| e.to_string())
}

fn parse_suite(s: &str) -> Result<BenchSuite, String> {
    s.parse().map_err(|e: qpgp::QpgpError| e.to_string())
}

/// Candidate period set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Periods(pub Vec<usize>);

/// `a..b` (inclusive) or `a,b,c`.
pub fn parse_periods(s: &str) -> Result<Periods, String> {
    let num = |x: &str| x.trim().parse::<usize>().map_err(|_| format!("bad period '{}'", x.trim()));
    let periods = match s.split_once("..") {
        Some((a, b)) => {
            let b = b.strip_prefix('=').unwrap_or(b);
            let (a, b) = (num(a)?, num(b)?);
            if a > b {
                return Err(format!("empty period range {a}..{b}"));
            }
            (a..=b).collect()
        }
        None => s.split(',').map(num).collect::<Result<Vec<_>, _>>()?,
    };
    Ok(Periods(periods))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn period_ranges_are_inclusive() {
        assert_eq!(parse_periods("2..5").unwrap().0, vec![2, 3, 4, 5]);
        assert_eq!(parse_periods("2..=3").unwrap().0, vec![2, 3]);
        assert_eq!(parse_periods("12, 7").unwrap().0, vec![12, 7]);
        assert!(parse_periods("5..2").is_err());
        assert!(parse_periods("x").is_err());
    }
}
