//! Online stage: recovery of a seeded test set with each comparator.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use pbdw_core::dictionary::{
    dict_recover, dict_recover_by, dict_recover_exact, DictRecovery, Dictionary, LarsCaps,
    PathDebugRow,
};
use pbdw_core::estimator::{constants_from_cross, pbdw_reduced, select_space, ObservationSpace, SketchedOffline};
use pbdw_core::linalg::io::{read_dense, write_dense};
use pbdw_core::linalg::{BasisMatrix, InnerProductSpace};
use pbdw_core::model::AffineModel;
use pbdw_core::problems::sample_parameters;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::RunDir;
use crate::config::Comparator;
use crate::error::{PipelineError, Result};

pub const ONLINE_DIR: &str = "online";
pub const NO_TRUTH_DIR: &str = "online_no_truth";

#[derive(Debug, Clone, Default)]
pub struct OnlineOptions {
    /// Test-set seed; the config value when absent.
    pub seed: Option<u64>,
    /// Worker threads; rayon's default when absent.
    pub workers: Option<usize>,
    pub emit_path_debug: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub method: String,
    pub k: usize,
    pub m: usize,
    pub mean: f64,
    pub max: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleError {
    pub sample: usize,
    pub method: String,
    pub k: usize,
    pub m: usize,
    pub error: f64,
}

/// Relative U-errors `|u - A(w)|_U / |u|_U` per sample, with their mean and
/// max per (method, K, m).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ErrorTable {
    pub rows: Vec<ErrorRow>,
    pub samples: Vec<SampleError>,
}

impl ErrorTable {
    /// Aggregates samples in (method, K, m) order; means are summed in
    /// sample order.
    pub fn from_samples(mut samples: Vec<SampleError>) -> Self {
        samples.sort_by(|a, b| {
            (&a.method, a.k, a.m, a.sample).cmp(&(&b.method, b.k, b.m, b.sample))
        });
        let mut rows: Vec<ErrorRow> = Vec::new();
        let mut sums: Vec<f64> = Vec::new();
        for s in &samples {
            match rows.last_mut() {
                Some(r) if r.method == s.method && r.k == s.k && r.m == s.m => {
                    *sums.last_mut().expect("paired") += s.error;
                    r.max = r.max.max(s.error);
                    r.n += 1;
                }
                _ => {
                    rows.push(ErrorRow {
                        method: s.method.clone(),
                        k: s.k,
                        m: s.m,
                        mean: 0.0,
                        max: s.error,
                        n: 1,
                    });
                    sums.push(s.error);
                }
            }
        }
        for (r, s) in rows.iter_mut().zip(sums) {
            r.mean = s / r.n as f64;
        }
        Self { rows, samples }
    }

    pub fn row(&self, method: Comparator, k: usize) -> Option<&ErrorRow> {
        self.rows.iter().find(|r| r.method == method.as_str() && r.k == k)
    }

    /// Per-sample errors of one method at one size, in sample order.
    pub fn errors(&self, method: Comparator, k: usize) -> Vec<f64> {
        self.samples
            .iter()
            .filter(|s| s.method == method.as_str() && s.k == k)
            .map(|s| s.error)
            .collect()
    }
}

/// `eps_n = max_test |u - P_{V_n} u|_U` with the stability constants of
/// the nested POD spaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsRow {
    pub k: usize,
    pub n: usize,
    pub eps_n: f64,
    pub beta_n: f64,
    pub mu_n: f64,
    pub eps_mu: f64,
}

/// One dictionary recovery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub sample: usize,
    pub k: usize,
    /// Selected support, `;`-separated atom indices.
    pub support: String,
    pub alpha: Option<f64>,
    pub surrogate: Option<f64>,
    pub beta: f64,
    pub termination: String,
    pub fallback: bool,
    pub candidates: usize,
    pub skipped: usize,
}

impl RecoveryRow {
    fn new(sample: usize, k: usize, rec: &DictRecovery) -> Self {
        let s = &rec.selected;
        Self {
            sample,
            k,
            support: s.support.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";"),
            alpha: s.alpha,
            surrogate: s.surrogate_value,
            beta: s.beta,
            termination: rec.termination.as_str().to_string(),
            fallback: rec.fallback,
            candidates: rec.candidates.len(),
            skipped: rec.skipped.len(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OnlineOutput {
    pub table: ErrorTable,
    pub constants: Vec<ConstantsRow>,
    pub recoveries: Vec<RecoveryRow>,
    /// Observation coordinates, one column per test sample.
    pub observations: DMatrix<f64>,
    pub path_debug: Vec<(usize, usize, Vec<PathDebugRow>)>,
}

struct PodSpace {
    k: usize,
    modes: BasisMatrix,
    cross: DMatrix<f64>,
}

struct Level {
    k: usize,
    dict: Dictionary,
    caps: LarsCaps,
}

/// Read-only state shared by the workers.
struct Engine {
    space: Arc<InnerProductSpace>,
    model: AffineModel,
    obs: ObservationSpace,
    levels: Vec<Level>,
    pods: Vec<PodSpace>,
    sketched: Option<SketchedOffline>,
    comparators: Vec<Comparator>,
    m: usize,
    ill_posed_tol: f64,
    emit_path_debug: bool,
}

struct SampleOutcome {
    errors: Vec<SampleError>,
    /// Absolute projection errors per POD space, per `n`.
    projections: Vec<Vec<f64>>,
    recoveries: Vec<RecoveryRow>,
    w: DVector<f64>,
    debug: Vec<(usize, usize, Vec<PathDebugRow>)>,
}

fn levels(run: &RunDir, dict: &Dictionary) -> Result<Vec<Level>> {
    let m = dict.m();
    run.config
        .dictionary
        .sizes
        .iter()
        .map(|&k| {
            Ok(Level {
                k,
                dict: dict.prefix(k)?,
                caps: run.config.lars.caps(m, k),
            })
        })
        .collect()
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| PipelineError::Config(format!("worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

impl Engine {
    fn load(run: &RunDir, emit_path_debug: bool) -> Result<Self> {
        let space = run.space()?;
        let model = run.model(Arc::clone(&space))?;
        let obs = run.observation()?;
        let dict = run.dictionary(true)?;
        let pods = run
            .config
            .dictionary
            .sizes
            .iter()
            .map(|&k| {
                let modes = run.pod_modes(k)?;
                let cross = obs.cross_matrix(&space, &modes.columns)?;
                Ok(PodSpace { k, modes, cross })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            levels: levels(run, &dict)?,
            m: obs.m(),
            space,
            model,
            obs,
            pods,
            sketched: run.sketched()?,
            comparators: run.config.comparators.clone(),
            ill_posed_tol: run.config.lars.ill_posed_tol,
            emit_path_debug,
        })
    }

    fn wants(&self, c: Comparator) -> bool {
        self.comparators.contains(&c)
    }

    fn error(&self, sample: usize, method: Comparator, k: usize, error: f64) -> SampleError {
        SampleError {
            sample,
            method: method.as_str().to_string(),
            k,
            m: self.m,
            error,
        }
    }

    /// Best POD-space PBDW error over `n = 1..=p`, plus the projection
    /// errors of the nested spaces.
    fn pod_errors(&self, pod: &PodSpace, u: &DVector<f64>, w: &DVector<f64>) -> Result<(f64, Vec<f64>)> {
        let v = &pod.modes.columns;
        let p = v.ncols();
        let coeffs = self.space.cross_gram(v, &DMatrix::from_column_slice(u.len(), 1, u.as_slice()))?;
        let mut r = u.clone();
        let mut proj = Vec::with_capacity(p);
        let mut best = f64::INFINITY;
        for n in 1..=p {
            r.axpy(-coeffs[(n - 1, 0)], &v.column(n - 1), 1.0);
            proj.push(self.space.u_norm(&r)?);
            if !self.wants(Comparator::A1Pod) {
                continue;
            }
            let c = pod.cross.columns(0, n).into_owned();
            match pbdw_reduced(&c, w, self.ill_posed_tol) {
                Ok((vs, eta, _, _)) => {
                    let state = v.columns(0, n) * vs + &self.obs.basis().columns * eta;
                    best = best.min(self.space.u_norm(&(u - state))?);
                }
                Err(pbdw_core::Error::IllPosed { .. }) => {}
                Err(e) => return Err(e.into()),
            }
        }
        Ok((best, proj))
    }

    fn recover(&self, level: &Level, w: &DVector<f64>) -> Result<DictRecovery> {
        let rec = if !self.wants(Comparator::A2Dict) {
            // selection is irrelevant for the best-in-library benchmark
            dict_recover_by(&level.dict, w, &level.caps, |_| Ok(0.0))?
        } else if let Some(sk) = &self.sketched {
            dict_recover(&level.dict, sk, w, &level.caps)?
        } else {
            dict_recover_exact(&level.dict, &self.obs, &self.model, w, &level.caps)?
        };
        Ok(rec)
    }

    fn sample(&self, idx: usize, xi: &[f64]) -> Result<SampleOutcome> {
        let u = self.model.solve_state(xi)?;
        let unorm = self.space.u_norm(&u)?;
        let w = self.obs.observe(&self.space, &u)?;
        let mut out = SampleOutcome {
            errors: Vec::new(),
            projections: Vec::new(),
            recoveries: Vec::new(),
            w: w.clone(),
            debug: Vec::new(),
        };
        for pod in &self.pods {
            let (best, proj) = self.pod_errors(pod, &u, &w)?;
            if self.wants(Comparator::A1Pod) {
                let best = if best.is_finite() { best } else { self.space.u_norm(&(&u - &self.obs.basis().columns * &w))? };
                out.errors.push(self.error(idx, Comparator::A1Pod, pod.k, best / unorm));
            }
            out.projections.push(proj);
        }
        if !(self.wants(Comparator::A2Dict) || self.wants(Comparator::A3Best)) {
            return Ok(out);
        }
        for level in &self.levels {
            let rec = self.recover(level, &w)?;
            // one error evaluation serves both comparators, so A2 >= A3
            // holds exactly
            let errs = rec
                .candidates
                .iter()
                .map(|c| Ok(self.space.u_norm(&(&u - level.dict.state_of(&self.obs, c)?))? / unorm))
                .collect::<Result<Vec<_>>>()?;
            if self.wants(Comparator::A2Dict) {
                out.errors.push(self.error(idx, Comparator::A2Dict, level.k, errs[rec.selected_index]));
                out.recoveries.push(RecoveryRow::new(idx, level.k, &rec));
            }
            if self.wants(Comparator::A3Best) {
                let best = select_space(&errs)?;
                out.errors.push(self.error(idx, Comparator::A3Best, level.k, errs[best]));
            }
            if self.emit_path_debug {
                out.debug.push((idx, level.k, rec.path.debug_rows(&level.dict, &w)));
            }
        }
        Ok(out)
    }
}

/// Runs every comparator on the given test parameters.
pub fn run_online(run: &RunDir, params: &[Vec<f64>], opts: &OnlineOptions) -> Result<OnlineOutput> {
    if params.is_empty() {
        return Err(PipelineError::Config("empty test set".into()));
    }
    let engine = Engine::load(run, opts.emit_path_debug)?;
    let outcomes = with_workers(opts.workers, || {
        params
            .par_iter()
            .enumerate()
            .map(|(i, xi)| engine.sample(i, xi))
            .collect::<Result<Vec<_>>>()
    })??;

    let mut constants = Vec::new();
    for (j, pod) in engine.pods.iter().enumerate() {
        for n in 1..=pod.modes.ncols() {
            let eps = outcomes.iter().map(|o| o.projections[j][n - 1]).fold(0.0, f64::max);
            let (beta, mu) = constants_from_cross(&pod.cross.columns(0, n).into_owned());
            constants.push(ConstantsRow {
                k: pod.k,
                n,
                eps_n: eps,
                beta_n: beta,
                mu_n: mu,
                eps_mu: eps * mu,
            });
        }
    }
    let mut observations = DMatrix::zeros(engine.m, params.len());
    for (j, o) in outcomes.iter().enumerate() {
        observations.set_column(j, &o.w);
    }
    let mut samples = Vec::new();
    let mut recoveries = Vec::new();
    let mut path_debug = Vec::new();
    for o in outcomes {
        samples.extend(o.errors);
        recoveries.extend(o.recoveries);
        path_debug.extend(o.debug);
    }
    Ok(OnlineOutput {
        table: ErrorTable::from_samples(samples),
        constants,
        recoveries,
        observations,
        path_debug,
    })
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| PipelineError::artifact(path, e))?;
    for r in rows {
        wtr.serialize(r).map_err(|e| PipelineError::artifact(path, e))?;
    }
    wtr.flush().map_err(|e| PipelineError::artifact(path, e))
}

pub(crate) fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| PipelineError::artifact(path, e))?;
    rdr.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| PipelineError::artifact(path, e))
}

fn fresh_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| PipelineError::artifact(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| PipelineError::artifact(dir, e))
}

/// Draws the test set, runs the comparators and writes the CSV outputs
/// under `run_dir/online`.
pub fn online(run_dir: &Path, opts: &OnlineOptions) -> Result<OnlineOutput> {
    let run = RunDir::open(run_dir)?;
    let seed = opts.seed.unwrap_or(run.config.test.seed);
    if seed == run.config.dictionary.snapshot_seed {
        return Err(PipelineError::Config("test seed must differ from the snapshot seed".into()));
    }
    let params = sample_parameters(&run.parameter_box()?, run.config.test.size, seed)?;
    log::info!("recovering {} test states", params.len());
    let out = run_online(&run, &params, opts)?;

    let dir = run_dir.join(ONLINE_DIR);
    fresh_dir(&dir)?;
    write_csv(&dir.join("errors.csv"), &out.table.rows)?;
    write_csv(&dir.join("sample_errors.csv"), &out.table.samples)?;
    write_csv(&dir.join("constants.csv"), &out.constants)?;
    write_csv(&dir.join("recoveries.csv"), &out.recoveries)?;
    write_dense(&dir, "observations", "observation coordinates, one column per sample", &out.observations)?;
    if opts.emit_path_debug {
        let dbg = dir.join("path_debug");
        fs::create_dir_all(&dbg).map_err(|e| PipelineError::artifact(&dbg, e))?;
        for (sample, k, rows) in &out.path_debug {
            write_csv(&dbg.join(format!("sample{sample}_k{k}.csv")), rows)?;
        }
    }
    Ok(out)
}

fn split_array_path(path: &Path) -> Result<(PathBuf, String)> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| PipelineError::artifact(path, "not an array path"))?;
    let dir = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    Ok((dir, stem.to_string()))
}

/// Dictionary recovery from observation coordinates alone. Only `C`, the
/// atom Gram matrix and the sketched blocks are read; nothing of size `N`.
pub fn online_no_truth(run_dir: &Path, observations: &Path, opts: &OnlineOptions) -> Result<Vec<RecoveryRow>> {
    let run = RunDir::open(run_dir)?;
    let sketched = run.sketched()?.ok_or_else(|| {
        PipelineError::Config("--no-truth needs a sketched run; the exact surrogate uses full states".into())
    })?;
    let (dir, name) = split_array_path(observations)?;
    let obs = read_dense(&dir, &name)?;
    let dict = run.dictionary(false)?;
    if obs.nrows() != dict.m() {
        return Err(PipelineError::artifact(
            observations,
            format!("{} observation rows for m = {}", obs.nrows(), dict.m()),
        ));
    }
    let lv = levels(&run, &dict)?;
    let rows = with_workers(opts.workers, || {
        (0..obs.ncols())
            .into_par_iter()
            .map(|j| {
                let w = obs.column(j).into_owned();
                lv.iter()
                    .map(|l| Ok(RecoveryRow::new(j, l.k, &dict_recover(&l.dict, &sketched, &w, &l.caps)?)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let rows: Vec<RecoveryRow> = rows.into_iter().flatten().collect();
    let out = run_dir.join(NO_TRUTH_DIR);
    fresh_dir(&out)?;
    write_csv(&out.join("recoveries.csv"), &rows)?;
    Ok(rows)
}

pub fn read_errors(run_dir: &Path) -> Result<Vec<ErrorRow>> {
    read_csv(&run_dir.join(ONLINE_DIR).join("errors.csv"))
}

pub fn read_constants(run_dir: &Path) -> Result<Vec<ConstantsRow>> {
    read_csv(&run_dir.join(ONLINE_DIR).join("constants.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(sample: usize, method: &str, k: usize, error: f64) -> SampleError {
        SampleError {
            sample,
            method: method.into(),
            k,
            m: 4,
            error,
        }
    }

    #[test]
    fn table_aggregates_per_method_and_size() {
        let t = ErrorTable::from_samples(vec![
            s(1, "a2_dict", 10, 0.3),
            s(0, "a2_dict", 10, 0.1),
            s(0, "a1_pod", 10, 0.5),
            s(0, "a2_dict", 20, 0.2),
        ]);
        assert_eq!(t.rows.len(), 3);
        let r = t.row(Comparator::A2Dict, 10).unwrap();
        assert_eq!(r.n, 2);
        assert_eq!(r.max, 0.3);
        assert!((r.mean - 0.2).abs() < 1e-15);
        assert_eq!(t.errors(Comparator::A2Dict, 10), vec![0.1, 0.3]);
    }
}
