//! Merges completed online runs into plot-data tables.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifacts::{read_json, ProblemManifest};
use crate::error::{PipelineError, Result};
use crate::online::{read_constants, read_errors};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportErrorRow {
    pub run: String,
    pub m: usize,
    pub method: String,
    pub k: usize,
    pub mean: f64,
    pub max: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConstantsRow {
    pub run: String,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub eps_n: f64,
    pub beta_n: f64,
    pub mu_n: f64,
    pub eps_mu: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub errors: Vec<ReportErrorRow>,
    pub constants: Vec<ReportConstantsRow>,
}

fn run_label(dir: &Path) -> String {
    dir.file_name()
        .and_then(|s| s.to_str())
        .map_or_else(|| dir.display().to_string(), str::to_string)
}

/// Collects the error-vs-K and constants tables of `run_dirs`, which must
/// share one problem manifest, and writes them to `out_dir`.
pub fn report(run_dirs: &[&Path], out_dir: &Path) -> Result<Report> {
    if run_dirs.is_empty() {
        return Err(PipelineError::Config("report needs at least one run directory".into()));
    }
    let mut reference: Option<ProblemManifest> = None;
    let mut rep = Report::default();
    for dir in run_dirs {
        let problem: ProblemManifest = read_json(&dir.join("problem.json"))?;
        match &reference {
            None => reference = Some(problem),
            Some(p) if *p != problem => {
                return Err(PipelineError::artifact(
                    &dir.join("problem.json"),
                    "problem differs from the first run; refusing to merge",
                ))
            }
            Some(_) => {}
        }
        let label = run_label(dir);
        let errors = read_errors(dir)?;
        let m = errors.first().map_or(0, |r| r.m);
        rep.errors.extend(errors.into_iter().map(|r| ReportErrorRow {
            run: label.clone(),
            m: r.m,
            method: r.method,
            k: r.k,
            mean: r.mean,
            max: r.max,
            n: r.n,
        }));
        rep.constants.extend(read_constants(dir)?.into_iter().map(|c| ReportConstantsRow {
            run: label.clone(),
            m,
            k: c.k,
            n: c.n,
            eps_n: c.eps_n,
            beta_n: c.beta_n,
            mu_n: c.mu_n,
            eps_mu: c.eps_mu,
        }));
    }
    rep.errors.sort_by(|a, b| (a.m, &a.method, a.k, &a.run).cmp(&(b.m, &b.method, b.k, &b.run)));
    rep.constants.sort_by(|a, b| (a.m, a.k, &a.run, a.n).cmp(&(b.m, b.k, &b.run, b.n)));
    fs::create_dir_all(out_dir).map_err(|e| PipelineError::artifact(out_dir, e))?;
    write(&out_dir.join("error_vs_k.csv"), &rep.errors)?;
    write(&out_dir.join("constants.csv"), &rep.constants)?;
    Ok(rep)
}

fn write<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| PipelineError::artifact(path, e))?;
    for r in rows {
        wtr.serialize(r).map_err(|e| PipelineError::artifact(path, e))?;
    }
    wtr.flush().map_err(|e| PipelineError::artifact(path, e))
}
