//! Maximum-likelihood fitting of patch crossing-time distributions.
//!
//! Three fitters share the [`FitReport`] output shape:
//!
//! * [`fit_erlang`] scans the integer shape, using the closed-form rate MLE
//!   `λ*(k) = k / mean(x)` at each candidate.
//! * [`fit_erlang_plus_c`] runs steepest ascent on `(λ, c)` with a
//!   grid-bracketed golden-section line search, wrapped in the same shape
//!   scan.
//! * [`fit_hyper_erlang`] runs expectation-maximisation per candidate shape
//!   vector with deterministic quantile-block initialisation.

mod em;
mod shifted;

pub use em::{em_fit, EmOutcome};
pub use shifted::{fit_erlang_plus_c, initial_shifted_params, shifted_gradient};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{ErlangParams, PatchDistribution};
use crate::exec::{map_indexed, Execution};

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("cannot fit an empty sample")]
    EmptySample,
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { got: usize, need: usize },
    #[error("samples must be positive, found {0}")]
    NonPositiveSample(f64),
    #[error("malformed hyper-Erlang table row {row}: {reason}")]
    BadTableRow { row: usize, reason: String },
    #[error("invalid fit options: {0}")]
    BadOptions(String),
}

/// Knobs for the iterative fitters. The line search defaults to an
/// `l = 7` grid with ten golden-section refinement steps; the caps and
/// tolerances are project choices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOptions {
    /// Subdivision count `l` of the line-search grid on `[-1, 1]`
    /// (`2l + 1` probe points).
    pub section_subdivisions: usize,
    /// Golden-section contractions applied to the bracketed interval.
    pub line_search_steps: usize,
    /// Outer steepest-ascent iteration cap per shape.
    pub max_iterations: usize,
    /// Relative parameter-change threshold declaring ascent convergence.
    pub tol: f64,
    /// Largest shape the scans will consider.
    pub shape_cap: u32,
    pub em_max_iterations: usize,
    /// Absolute log-likelihood gain below which EM stops.
    pub em_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            section_subdivisions: 7,
            line_search_steps: 10,
            max_iterations: 1000,
            tol: 1e-8,
            shape_cap: 500,
            em_max_iterations: 500,
            em_tol: 1e-9,
        }
    }
}

impl FitOptions {
    pub(crate) fn check(&self) -> Result<(), FitError> {
        if self.section_subdivisions < 2 {
            return Err(FitError::BadOptions(format!(
                "section_subdivisions must be at least 2, got {}",
                self.section_subdivisions
            )));
        }
        if self.tol.is_nan() || self.tol <= 0.0 || self.em_tol.is_nan() || self.em_tol <= 0.0 {
            return Err(FitError::BadOptions(
                "tolerances must be positive".to_string(),
            ));
        }
        if self.shape_cap < 1 {
            return Err(FitError::BadOptions(
                "shape_cap must be at least 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// Outcome of one fit: the distribution, its fit quality, and bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub dist: PatchDistribution,
    pub log_likelihood: f64,
    /// Sample count the fit was computed on.
    pub n: usize,
    pub expected_phases: f64,
    /// Iterations of the winning inner optimisation (shape-scan candidates
    /// for the Erlang fit, ascent steps or EM sweeps otherwise).
    pub iterations: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Total log-likelihood `Σ_i log f(x_i)` of the sample under `dist`.
///
/// Returns `-inf` when any observation falls outside the support; errors
/// only on an empty sample.
pub fn log_likelihood(dist: &PatchDistribution, x: &[f64]) -> Result<f64, FitError> {
    if x.is_empty() {
        return Err(FitError::EmptySample);
    }
    Ok(x.iter().map(|&xi| dist.log_pdf(xi)).sum())
}

fn check_sample(x: &[f64], need: usize) -> Result<(), FitError> {
    if x.len() < need {
        return Err(FitError::TooFewSamples { got: x.len(), need });
    }
    if let Some(&bad) = x.iter().find(|&&v| v.is_nan() || v <= 0.0) {
        return Err(FitError::NonPositiveSample(bad));
    }
    Ok(())
}

/// Fit a plain Erlang by scanning the shape upward from 1.
///
/// For each candidate shape the rate MLE is `k / mean(x)`; the scan stops at
/// the first shape whose log-likelihood decreases. A sample with no spread
/// drives the likelihood up indefinitely, so hitting the shape cap reports
/// `converged = false`.
pub fn fit_erlang(x: &[f64], opts: &FitOptions) -> Result<FitReport, FitError> {
    opts.check()?;
    check_sample(x, 2)?;
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let mut best: Option<(ErlangParams, f64)> = None;
    let mut candidates = 0usize;
    let mut converged = false;
    for k in 1..=opts.shape_cap {
        let params = ErlangParams {
            shape: k,
            rate: f64::from(k) / mean,
        };
        let ll = log_likelihood(&PatchDistribution::Erlang(params), x)?;
        candidates += 1;
        match best {
            Some((_, best_ll)) if ll <= best_ll => {
                converged = true;
                break;
            }
            _ => best = Some((params, ll)),
        }
    }
    let (params, ll) = best.expect("at least one candidate evaluated");
    let dist = PatchDistribution::Erlang(params);
    Ok(FitReport {
        expected_phases: dist.expected_phases(),
        dist,
        log_likelihood: ll,
        n: x.len(),
        iterations: candidates,
        converged,
        warnings: if converged {
            Vec::new()
        } else {
            vec![format!("shape scan hit the cap of {}", opts.shape_cap)]
        },
    })
}

/// Fit a hyper-Erlang with `branches` mixture components.
///
/// Shapes are chosen by a single coordinate sweep: for each branch in turn
/// the shape grows from 1 while the EM-converged log-likelihood improves.
/// Every EM run restarts from the deterministic quantile-block
/// initialisation, so the whole fit is a pure function of the sample.
/// A branch whose weight collapses below `1e-6` triggers a refit with one
/// branch fewer, noted in the report's warnings.
pub fn fit_hyper_erlang(
    x: &[f64],
    branches: usize,
    opts: &FitOptions,
) -> Result<FitReport, FitError> {
    em::fit_hyper_erlang(x, branches, opts)
}

/// Distribution family selector for fits and model building.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum FitFamily {
    Erlang,
    HyperErlang { branches: usize },
    ErlangPlusC,
}

impl FitFamily {
    /// The four families compared in the selection table.
    pub fn standard_set() -> Vec<FitFamily> {
        vec![
            FitFamily::Erlang,
            FitFamily::HyperErlang { branches: 2 },
            FitFamily::HyperErlang { branches: 3 },
            FitFamily::ErlangPlusC,
        ]
    }

    pub fn fit(&self, x: &[f64], opts: &FitOptions) -> Result<FitReport, FitError> {
        match self {
            FitFamily::Erlang => fit_erlang(x, opts),
            FitFamily::HyperErlang { branches } => fit_hyper_erlang(x, *branches, opts),
            FitFamily::ErlangPlusC => fit_erlang_plus_c(x, opts),
        }
    }
}

impl fmt::Display for FitFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FitFamily::Erlang => write!(f, "erlang"),
            FitFamily::HyperErlang { branches } => write!(f, "hyper_erlang_{branches}"),
            FitFamily::ErlangPlusC => write!(f, "erlang_plus_c"),
        }
    }
}

impl FromStr for FitFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "erlang" => Ok(FitFamily::Erlang),
            "erlang_plus_c" => Ok(FitFamily::ErlangPlusC),
            other => match other.strip_prefix("hyper_erlang_") {
                Some(n) => n
                    .parse::<usize>()
                    .ok()
                    .filter(|&b| b >= 1)
                    .map(|branches| FitFamily::HyperErlang { branches })
                    .ok_or_else(|| format!("bad branch count in family `{other}`")),
                None => Err(format!(
                    "unknown family `{other}` (expected erlang, hyper_erlang_<m>, erlang_plus_c)"
                )),
            },
        }
    }
}

impl From<FitFamily> for String {
    fn from(f: FitFamily) -> String {
        f.to_string()
    }
}

impl TryFrom<String> for FitFamily {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

/// One selection-table cell: a fit or the error that prevented it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FitCell {
    Ok(FitReport),
    Failed { error: String },
}

impl FitCell {
    pub fn report(&self) -> Option<&FitReport> {
        match self {
            FitCell::Ok(r) => Some(r),
            FitCell::Failed { .. } => None,
        }
    }
}

/// Per-patch fits across the requested families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchFits {
    pub patch_index: usize,
    pub cells: BTreeMap<FitFamily, FitCell>,
}

/// Fit every requested family to every patch sample.
///
/// Individual fit failures become [`FitCell::Failed`] entries rather than
/// aborting the table. Fits are independent, so they run through the
/// execution strategy in parallel when enabled.
pub fn model_selection_table(
    samples_per_patch: &[(usize, Vec<f64>)],
    families: &[FitFamily],
    opts: &FitOptions,
    exec: Execution,
) -> Vec<PatchFits> {
    let jobs: Vec<(usize, FitFamily)> = samples_per_patch
        .iter()
        .flat_map(|(patch, _)| families.iter().map(move |f| (*patch, *f)))
        .collect();
    let cells = map_indexed(exec, jobs.len(), |j| {
        let (patch, family) = jobs[j];
        let x = &samples_per_patch
            .iter()
            .find(|(p, _)| *p == patch)
            .expect("job patch exists")
            .1;
        match family.fit(x, opts) {
            Ok(report) => FitCell::Ok(report),
            Err(e) => FitCell::Failed {
                error: e.to_string(),
            },
        }
    });
    let mut out: Vec<PatchFits> = samples_per_patch
        .iter()
        .map(|(patch, _)| PatchFits {
            patch_index: *patch,
            cells: BTreeMap::new(),
        })
        .collect();
    for ((patch, family), cell) in jobs.into_iter().zip(cells) {
        let row = out
            .iter_mut()
            .find(|r| r.patch_index == patch)
            .expect("row exists");
        row.cells.insert(family, cell);
    }
    out
}

/// Render expected phases the way the selection table displays them:
/// integers stay integers, mixtures get one decimal.
pub fn display_phases(phases: f64) -> String {
    if (phases - phases.round()).abs() < 1e-9 {
        format!("{}", phases.round() as i64)
    } else {
        format!("{phases:.1}")
    }
}

/// Write the selection table as CSV, log-likelihoods rounded to integers
/// for display (full precision stays in the fits file).
pub fn write_fit_table_csv<W: std::io::Write>(
    out: W,
    table: &[PatchFits],
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "patch_index",
        "family",
        "log_likelihood",
        "expected_phases",
        "converged",
    ])?;
    for row in table {
        for (family, cell) in &row.cells {
            match cell {
                FitCell::Ok(r) => w.write_record([
                    row.patch_index.to_string(),
                    family.to_string(),
                    format!("{}", r.log_likelihood.round() as i64),
                    display_phases(r.expected_phases),
                    r.converged.to_string(),
                ])?,
                FitCell::Failed { error } => w.write_record([
                    row.patch_index.to_string(),
                    family.to_string(),
                    String::from("failed"),
                    String::from(""),
                    error.clone(),
                ])?,
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Parse an externally produced hyper-Erlang parameter table.
///
/// One branch per row: `alpha k lambda`, whitespace- or comma-separated.
/// Blank lines and `#` comments are skipped.
pub fn parse_hyper_erlang_table(text: &str) -> Result<crate::dist::HyperErlangParams, FitError> {
    let mut branches = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|ch: char| ch == ',' || ch.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        let row = idx + 1;
        if fields.len() != 3 {
            return Err(FitError::BadTableRow {
                row,
                reason: format!("expected 3 fields (alpha k lambda), got {}", fields.len()),
            });
        }
        let weight: f64 = fields[0].parse().map_err(|_| FitError::BadTableRow {
            row,
            reason: format!("bad alpha `{}`", fields[0]),
        })?;
        let shape: u32 = fields[1].parse().map_err(|_| FitError::BadTableRow {
            row,
            reason: format!("bad shape `{}`", fields[1]),
        })?;
        let rate: f64 = fields[2].parse().map_err(|_| FitError::BadTableRow {
            row,
            reason: format!("bad rate `{}`", fields[2]),
        })?;
        branches.push(crate::dist::HyperErlangBranch {
            weight,
            shape,
            rate,
        });
    }
    crate::dist::HyperErlangParams::new(branches).map_err(|e| FitError::BadTableRow {
        row: 0,
        reason: e.to_string(),
    })
}
