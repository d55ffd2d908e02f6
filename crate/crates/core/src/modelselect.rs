//! Period search by reduced likelihood and kernel comparison by EIPSE.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QpgpError, Result};
use crate::estimator::{fit, FitConfig, FitResult, FitSummary};
use crate::kernels::ParametricFamily;
use crate::predictor::predict_plugin;
use crate::process::BlockSeries;

/// Kernel used in Stage II: the general (tabulated) path or a parametric
/// family. Parses from `general`, `mackay`, `matern:<nu>`, `cosine:<iota>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum KernelChoice {
    General,
    Parametric(ParametricFamily),
}

impl fmt::Display for KernelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelChoice::General => write!(f, "general"),
            KernelChoice::Parametric(ParametricFamily::MacKay) => write!(f, "mackay"),
            KernelChoice::Parametric(ParametricFamily::Matern { nu }) => write!(f, "matern:{nu}"),
            KernelChoice::Parametric(ParametricFamily::Cosine { iota }) => write!(f, "cosine:{iota}"),
        }
    }
}

impl FromStr for KernelChoice {
    type Err = QpgpError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (name, arg) = match s.split_once(':') {
            Some((a, b)) => (a, Some(b)),
            None => (s.as_str(), None),
        };
        let bad = || QpgpError::InvalidParameter(format!("unknown kernel family '{s}'"));
        let family = match (name, arg) {
            ("general" | "tabulated", None) => return Ok(KernelChoice::General),
            ("mackay", None) => ParametricFamily::MacKay,
            ("matern", Some(nu)) => {
                let nu: f64 = nu.parse().map_err(|_| bad())?;
                if ![0.5, 1.5, 2.5].contains(&nu) {
                    return Err(QpgpError::MaternNuUnsupported(nu));
                }
                ParametricFamily::Matern { nu }
            }
            ("cosine", Some(iota)) => ParametricFamily::Cosine { iota: iota.parse().map_err(|_| bad())? },
            _ => return Err(bad()),
        };
        Ok(KernelChoice::Parametric(family))
    }
}

impl From<KernelChoice> for String {
    fn from(c: KernelChoice) -> String {
        c.to_string()
    }
}

impl TryFrom<String> for KernelChoice {
    type Error = QpgpError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl KernelChoice {
    pub fn config(&self, base: &FitConfig) -> FitConfig {
        let family = match self {
            KernelChoice::General => None,
            KernelChoice::Parametric(f) => Some(*f),
        };
        FitConfig { family, ..base.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    ReducedNll,
    Eipse,
}

/// One evaluated candidate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub period: usize,
    pub kernel: KernelChoice,
    pub criterion: f64,
    pub n: usize,
    pub k: usize,
    pub l: usize,
    pub fit: FitSummary,
}

impl Candidate {
    pub fn label(&self) -> String {
        format!("p={} {}", self.period, self.kernel)
    }
}

/// Candidates sorted by criterion (stable, so ties keep input order); the
/// head is the chosen one. `fits[i]` belongs to `candidates[i]`.
#[derive(Debug, Clone, Serialize)]
pub struct SelectionReport {
    pub criterion: Criterion,
    pub candidates: Vec<Candidate>,
    pub chosen: Candidate,
    pub note: Option<String>,
    #[serde(skip)]
    pub fits: Vec<FitResult>,
}

impl SelectionReport {
    fn assemble(criterion: Criterion, mut rows: Vec<(Candidate, FitResult)>, note: Option<String>) -> Self {
        rows.sort_by(|a, b| a.0.criterion.total_cmp(&b.0.criterion));
        let (candidates, fits): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
        Self { criterion, chosen: candidates[0].clone(), candidates, note, fits }
    }

    pub fn chosen_fit(&self) -> &FitResult {
        &self.fits[0]
    }

    /// `candidate,criterion` rows in ranked order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["candidate", "criterion"])?;
        for c in &self.candidates {
            let name = match self.criterion {
                Criterion::ReducedNll => c.period.to_string(),
                Criterion::Eipse => c.kernel.to_string(),
            };
            w.write_record([name, format!("{:e}", c.criterion)])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn candidate(fit_result: &FitResult, kernel: KernelChoice, criterion: f64) -> Candidate {
    Candidate {
        period: fit_result.period(),
        kernel,
        criterion,
        n: fit_result.n,
        k: fit_result.k,
        l: fit_result.l,
        fit: fit_result.summary(),
    }
}

/// Fits the general kernel at every candidate period and picks the smallest
/// reduced negative log-likelihood, taken at the Stage-I minimum (the value
/// after Stage II is kept in each candidate's fit summary). Candidates are
/// deduplicated and ordered ascending, so ties go to the smaller period.
pub fn select_period(values: &[f64], candidates: &[usize], config: &FitConfig) -> Result<SelectionReport> {
    if candidates.is_empty() {
        return Err(QpgpError::BadSearchSpec("empty period candidate set".into()));
    }
    let n = values.len();
    let mut periods = candidates.to_vec();
    periods.sort_unstable();
    periods.dedup();
    if let Some(p) = periods.iter().find(|&&p| p < 2 || 3 * p > n) {
        return Err(QpgpError::BadSearchSpec(format!("period {p} outside [2, n/3] for n = {n}")));
    }
    let cfg = KernelChoice::General.config(config);
    let rows = periods
        .par_iter()
        .map(|&p| {
            let series = BlockSeries::new(values.to_vec(), p)?;
            let f = fit(&series, &cfg)?;
            let nll = f.stage1_nll.unwrap_or(f.reduced_nll);
            Ok((candidate(&f, KernelChoice::General, nll), f))
        })
        .collect::<Result<Vec<_>>>()?;
    let note = "reduced likelihoods at different periods use different block partitions; n, k and l are \
                recorded per candidate";
    Ok(SelectionReport::assemble(Criterion::ReducedNll, rows, Some(note.into())))
}

/// Fits every kernel choice at the series' period and ranks by plug-in EIPSE.
/// Ties go to the first listed choice.
pub fn select_kernel(series: &BlockSeries, choices: &[KernelChoice], config: &FitConfig) -> Result<SelectionReport> {
    if choices.is_empty() {
        return Err(QpgpError::BadSearchSpec("empty kernel candidate set".into()));
    }
    let rows = choices
        .par_iter()
        .map(|choice| {
            let mut f = fit(series, &choice.config(config))?;
            let e = predict_plugin(series, &f)?.eipse;
            f.eipse = Some(e);
            Ok((candidate(&f, *choice, e), f))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SelectionReport::assemble(Criterion::Eipse, rows, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::PeriodicKernel;
    use crate::process::{generate_len, QpgpModel};

    fn series(p: usize, n: usize, seed: u64) -> BlockSeries {
        let m = QpgpModel::new(0.5, PeriodicKernel::mackay(p, 1.0, 1.0).unwrap()).unwrap();
        generate_len(&m, n, seed).unwrap()
    }

    #[test]
    fn kernel_choice_parsing() {
        for s in ["general", "mackay", "matern:1.5", "cosine:2"] {
            let c: KernelChoice = s.parse().unwrap();
            assert_eq!(c.to_string(), s);
        }
        assert_eq!("matern:1".parse::<KernelChoice>().unwrap_err().code(), "matern-nu-unsupported");
        assert!("rbf".parse::<KernelChoice>().is_err());
        assert!("matern".parse::<KernelChoice>().is_err());
    }

    #[test]
    fn singleton_period_is_chosen() {
        let s = series(6, 240, 1);
        let r = select_period(s.values(), &[6], &FitConfig::default()).unwrap();
        assert_eq!(r.chosen.period, 6);
        assert_eq!(r.candidates.len(), 1);
        assert_eq!(r.chosen.n, 240);
    }

    #[test]
    fn period_search_validates_candidates() {
        let s = series(4, 60, 2);
        let cfg = FitConfig::default();
        assert_eq!(select_period(s.values(), &[], &cfg).unwrap_err().code(), "bad-search-spec");
        assert_eq!(select_period(s.values(), &[1, 4], &cfg).unwrap_err().code(), "bad-search-spec");
        assert_eq!(select_period(s.values(), &[21], &cfg).unwrap_err().code(), "bad-search-spec");
        assert!(select_period(s.values(), &[20], &cfg).is_ok());
    }

    #[test]
    fn report_is_sorted_and_records_partition() {
        let s = series(5, 203, 3);
        let r = select_period(s.values(), &[7, 3, 5, 4, 5], &FitConfig::default()).unwrap();
        assert_eq!(r.candidates.len(), 4);
        assert!(r.candidates.windows(2).all(|w| w[0].criterion <= w[1].criterion));
        assert_eq!(r.chosen, r.candidates[0]);
        for c in &r.candidates {
            assert_eq!((c.k, c.l), (203 / c.period, 203 % c.period));
        }
        assert_eq!(r.fits.len(), 4);
        assert_eq!(r.chosen_fit().period(), r.chosen.period);
    }

    #[test]
    fn ties_keep_input_order() {
        let f = fit(&series(3, 60, 4), &FitConfig::default()).unwrap();
        let g = fit(&series(4, 60, 4), &FitConfig::default()).unwrap();
        let rows = vec![(candidate(&f, KernelChoice::General, 1.0), f), (candidate(&g, KernelChoice::General, 1.0), g)];
        let r = SelectionReport::assemble(Criterion::ReducedNll, rows, None);
        assert_eq!(r.chosen.period, 3);
    }

    #[test]
    fn single_kernel_returns_its_eipse() {
        let s = series(6, 300, 5);
        let r = select_kernel(&s, &[KernelChoice::Parametric(ParametricFamily::MacKay)], &FitConfig::default()).unwrap();
        let f = fit(&s, &FitConfig::with_family(ParametricFamily::MacKay)).unwrap();
        assert_eq!(r.chosen.criterion, predict_plugin(&s, &f).unwrap().eipse);
        assert_eq!(r.chosen_fit().eipse, Some(r.chosen.criterion));
    }

    #[test]
    fn kernel_report_is_reproducible_and_serializes() {
        let s = series(6, 300, 6);
        let choices: Vec<KernelChoice> =
            ["general", "mackay", "matern:2.5", "cosine:1"].iter().map(|c| c.parse().unwrap()).collect();
        let a = select_kernel(&s, &choices, &FitConfig::default()).unwrap();
        let b = select_kernel(&s, &choices, &FitConfig::default()).unwrap();
        assert_eq!(a.candidates, b.candidates);
        let json = serde_json::to_value(&a).unwrap();
        assert_eq!(json["criterion"], "eipse");
        assert!(json["candidates"][0]["kernel"].is_string());
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }
}
