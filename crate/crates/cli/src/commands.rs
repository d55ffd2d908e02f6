use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use qpgp::bench::{format_bench_table, write_bench_csv};
use qpgp::*;
use serde::{Deserialize, Serialize};

use crate::args::{BenchArgs, BootstrapArgs, FitArgs, GenerateArgs, InputArgs, PredictArgs, SelectArgs};
use crate::Status;

/// Model JSON accepted by `predict`: a fit output, or the spec printed by
/// `generate`.
#[derive(Debug, Deserialize)]
struct ModelFile {
    #[serde(alias = "omega")]
    omega_hat: f64,
    kernel: KernelSpec,
}

#[derive(Debug, Serialize)]
struct GeneratedModel {
    omega: f64,
    kernel: KernelSpec,
    n: usize,
    seed: u64,
}

#[derive(Debug, Serialize)]
struct FitOutput<'a> {
    #[serde(flatten)]
    fit: FitSummary,
    kernel_family: KernelChoice,
    preprocess: &'a PreprocessReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    bootstrap: Option<BootstrapSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    period_selection: Option<SelectionReport>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = create(p)?;
            serde_json::to_writer_pretty(&mut w, value)?;
            writeln!(w)?;
            w.flush()?;
        }
        None => {
            let mut out = io::stdout().lock();
            serde_json::to_writer_pretty(&mut out, value)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

fn read_kernel(arg: &str) -> Result<PeriodicKernel> {
    let text = match arg.strip_prefix('@') {
        Some(path) => fs::read_to_string(path).with_context(|| format!("cannot read kernel file {path}"))?,
        None => arg.to_string(),
    };
    let spec: KernelSpec = serde_json::from_str(&text).context("invalid kernel spec")?;
    Ok(PeriodicKernel::try_from(spec)?)
}

fn load(input: &InputArgs) -> Result<(Vec<f64>, PreprocessReport)> {
    load_csv(&input.input, &input.spec()).with_context(|| format!("cannot load {}", input.input.display()))
}

pub fn generate(args: &GenerateArgs) -> Result<Status> {
    let kernel = read_kernel(&args.kernel)?;
    if kernel.period() != args.p {
        return Err(QpgpError::PeriodMismatch { model: kernel.period(), other: args.p }.into());
    }
    let model = QpgpModel::new(args.omega, kernel.clone())?;
    let series = qpgp::generate(&model, args.blocks, args.seed)?;
    let mut w = create(&args.out)?;
    series.write_csv(&mut w)?;
    w.flush()?;
    let spec = GeneratedModel { omega: model.omega(), kernel: kernel.into(), n: series.len(), seed: args.seed };
    write_json(None, &spec)?;
    Ok(Status::Ok)
}

struct FitRequest<'a> {
    input: &'a InputArgs,
    p: Option<usize>,
    select_p: Option<&'a [usize]>,
    family: KernelChoice,
    bootstrap: Option<usize>,
    alpha: f64,
    seed: u64,
    out: Option<&'a Path>,
}

fn run_fit(req: FitRequest<'_>) -> Result<Status> {
    let (values, report) = load(req.input)?;
    let base = FitConfig { seed: req.seed, ..FitConfig::default() };
    let (p, selection) = match (req.p, req.select_p) {
        (Some(p), _) => (p, None),
        (None, Some(candidates)) => {
            let sel = select_period(&values, candidates, &base)?;
            log::info!("selected period {}", sel.chosen.period);
            (sel.chosen.period, Some(sel))
        }
        (None, None) => bail!("either --p or --select-p is required"),
    };
    let series = BlockSeries::new(values, p)?;
    let config = req.family.config(&base);
    let mut result = qpgp::fit(&series, &config)?;
    result.eipse = Some(predict_plugin(&series, &result)?.eipse);
    let boot = match req.bootstrap {
        Some(m) => Some(bootstrap_summary(&series, &result, m, req.alpha, &config, req.seed)?),
        None => None,
    };
    let output = FitOutput {
        fit: result.summary(),
        kernel_family: req.family,
        preprocess: &report,
        bootstrap: boot,
        period_selection: selection,
    };
    write_json(req.out, &output)?;
    Ok(if result.converged { Status::Ok } else { Status::NotConverged })
}

pub fn fit(args: &FitArgs) -> Result<Status> {
    run_fit(FitRequest {
        input: &args.input,
        p: args.p,
        select_p: args.select_p.as_ref().map(|p| p.0.as_slice()),
        family: args.kernel_family,
        bootstrap: args.bootstrap,
        alpha: args.alpha,
        seed: args.seed,
        out: args.out.as_deref(),
    })
}

pub fn bootstrap(args: &BootstrapArgs) -> Result<Status> {
    run_fit(FitRequest {
        input: &args.input,
        p: Some(args.p),
        select_p: None,
        family: args.kernel_family,
        bootstrap: Some(args.resamples),
        alpha: args.alpha,
        seed: args.seed,
        out: args.out.as_deref(),
    })
}

pub fn predict(args: &PredictArgs) -> Result<Status> {
    let text = fs::read_to_string(&args.model).with_context(|| format!("cannot read {}", args.model.display()))?;
    let spec: ModelFile = serde_json::from_str(&text).context("invalid model file")?;
    let model = QpgpModel::new(spec.omega_hat, PeriodicKernel::try_from(spec.kernel)?)?;
    if let Some(p) = args.p.filter(|&p| p != model.period()) {
        return Err(QpgpError::PeriodMismatch { model: model.period(), other: p }.into());
    }
    let (values, _) = load(&args.input)?;
    let series = BlockSeries::new(values, model.period())?;
    let trace = predict_model(&series, &model)?;
    match &args.out {
        Some(path) => {
            let mut w = create(path)?;
            trace.write_csv(&mut w)?;
            w.flush()?;
            println!("eipse={:e}", trace.eipse);
        }
        None => trace.write_csv(io::stdout().lock())?,
    }
    Ok(Status::Ok)
}

pub fn select(args: &SelectArgs) -> Result<Status> {
    let (values, _) = load(&args.input)?;
    let config = FitConfig { seed: args.seed, ..FitConfig::default() };
    let report = match (&args.kernels, &args.select_p, args.p) {
        (Some(kernels), _, Some(p)) => select_kernel(&BlockSeries::new(values, p)?, kernels, &config)?,
        (None, Some(periods), _) => select_period(&values, &periods.0, &config)?,
        _ => bail!("give --select-p, or --kernels with --p"),
    };
    if let Some(path) = &args.csv {
        let mut w = create(path)?;
        report.write_csv(&mut w)?;
        w.flush()?;
    }
    write_json(args.out.as_deref(), &report)?;
    Ok(Status::Ok)
}

pub fn bench(args: &BenchArgs) -> Result<Status> {
    let config = BenchConfig { reps: args.reps, warmup: args.warmup, ..BenchConfig::new(args.suite, args.sizes.clone(), args.seed) };
    let rows = run_bench(&config)?;
    print!("{}", format_bench_table(&rows));
    if let Some(path) = &args.out {
        let mut w = create(path)?;
        write_bench_csv(&rows, &mut w)?;
        w.flush()?;
    }
    Ok(Status::Ok)
}
