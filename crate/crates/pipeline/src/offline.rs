//! Offline stage: snapshots, dictionary, POD spaces and sketched blocks.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use pbdw_core::dictionary::build_dictionary;
use pbdw_core::estimator::{build_observation, sketched_offline};
use pbdw_core::linalg::io::{write_dense, write_sparse, ArrayManifest};
use pbdw_core::linalg::BasisMatrix;
use pbdw_core::problems::{sample_parameters, sensors_radial};
use pbdw_core::sketch::UEmbedding;
use rayon::prelude::*;

use crate::artifacts::*;
use crate::config::RunConfig;
use crate::error::{PipelineError, Result};

fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let nonempty = fs::read_dir(dir)
            .map_err(|e| PipelineError::artifact(dir, e))?
            .next()
            .is_some();
        if nonempty && !force {
            return Err(PipelineError::Config(format!(
                "run directory {} is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
        if nonempty {
            fs::remove_dir_all(dir).map_err(|e| PipelineError::artifact(dir, e))?;
        }
    }
    fs::create_dir_all(dir.join(ARRAY_DIR)).map_err(|e| PipelineError::artifact(dir, e))
}

struct Writer<'a> {
    dir: &'a Path,
    arrays: BTreeMap<String, ArrayManifest>,
}

impl Writer<'_> {
    fn dense(&mut self, name: &str, role: &str, m: &DMatrix<f64>) -> Result<()> {
        let man = write_dense(self.dir, name, role, m)?;
        self.arrays.insert(name.to_string(), man);
        Ok(())
    }

    fn sparse(&mut self, name: &str, role: &str, m: &pbdw_core::linalg::SparseMatrix) -> Result<()> {
        let man = write_sparse(self.dir, name, role, m)?;
        self.arrays.insert(name.to_string(), man);
        Ok(())
    }
}

/// Runs the offline stage into `run_dir` and returns the opened directory.
pub fn offline(config: &RunConfig, run_dir: &Path, force: bool) -> Result<RunDir> {
    config.validate()?;
    let problem = config.build_problem()?;
    let space = problem.space().clone();
    let model = &problem.model;
    let sensor_spec = config.sensor_spec()?;
    let sensors = sensors_radial(&problem.mesh, &sensor_spec);
    let obs_space = (*space).clone().with_rank_tol(config.problem.rank_tol);
    let obs = build_observation(&obs_space, &sensors)?;
    let m = obs.m();
    let emb_spec = config.embedding_spec(space.factor_rows(), model.theta_dim())?;
    prepare_dir(run_dir, force)?;

    let k_max = config.dictionary.k_max();
    log::info!("solving {k_max} snapshots (N = {})", space.dim());
    let params = sample_parameters(model.parameter_box(), k_max, config.dictionary.snapshot_seed)?;
    let snapshots = params
        .par_iter()
        .map(|xi| model.solve_state(xi))
        .collect::<pbdw_core::Result<Vec<_>>>()?;
    let dict = build_dictionary(&space, &obs, &snapshots, &params, k_max)?;
    let atoms = dict.atoms.as_ref().expect("fresh dictionary has atoms");

    let adir = run_dir.join(ARRAY_DIR);
    let mut w = Writer {
        dir: &adir,
        arrays: BTreeMap::new(),
    };
    w.sparse("gram", "inner product Gram matrix", space.gram())?;
    for (q, op) in model.operator_terms().iter().enumerate() {
        w.sparse(&op_name(q), "affine operator term", op)?;
    }
    for (q, f) in model.rhs_terms().iter().enumerate() {
        w.dense(&rhs_name(q), "affine rhs term", &DMatrix::from_column_slice(f.len(), 1, f.as_slice()))?;
    }
    let d = model.parameter_box().dim();
    let pmat = DMatrix::from_fn(d, k_max, |i, j| dict.params[j][i]);
    w.dense("snapshot_params", "snapshot parameters, one per column", &pmat)?;
    w.dense("atoms", "normalized dictionary atoms", atoms)?;
    w.dense("cross", "measurement matrix W^T R V", &dict.cross)?;
    w.dense("atom_gram", "atom Gram matrix V^T R V", &dict.gram)?;
    w.dense("w_basis", "orthonormal observation basis", &obs.basis().columns)?;
    w.dense("readings_map", "sensor readings to W coordinates", obs.readings_to_coords())?;

    let mut pod_modes = BTreeMap::new();
    for &k in &config.dictionary.sizes {
        let snaps = BasisMatrix::new(atoms.columns(0, k).into_owned());
        let (modes, _) = space.pod(&snaps, m.min(k))?;
        pod_modes.insert(k, modes.ncols());
        w.dense(&pod_name(k), "POD modes of the dictionary prefix", &modes.columns)?;
    }

    let emb_manifest = match emb_spec {
        None => None,
        Some(spec) => {
            log::info!("sketching {} affine terms with k = {}", model.m_b() + model.m_f() + 2, spec.rows);
            let emb = UEmbedding::realize(spec, Arc::clone(&space))?;
            let sk = sketched_offline(model, &obs, atoms, &emb)?;
            for (q, b) in sk.blocks.iter().enumerate() {
                w.dense(&sketch_op_name(q), "sketched operator block", b)?;
            }
            for (q, r) in sk.rhs.iter().enumerate() {
                w.dense(&sketch_rhs_name(q), "sketched rhs", &DMatrix::from_column_slice(r.len(), 1, r.as_slice()))?;
            }
            sk.manifest
        }
    };

    let problem_manifest = ProblemManifest {
        name: config.problem.name,
        n_h: config.problem.n_h,
        kappa: problem.kappa,
        n_dofs: space.dim(),
        m_b: model.m_b(),
        m_f: model.m_f(),
        intervals: model.parameter_box().intervals().to_vec(),
        laws: model.parameter_box().laws().to_vec(),
    };
    let sensor_manifest = SensorManifest {
        pattern: config.sensors.pattern.clone(),
        width: sensor_spec.width,
        locations: sensor_spec.locations.clone(),
        m,
    };
    let manifest = RunManifest {
        version: MANIFEST_VERSION,
        snapshot_seed: config.dictionary.snapshot_seed,
        embedding_seed: config.embedding.seed,
        sizes: config.dictionary.sizes.clone(),
        m,
        n_dofs: space.dim(),
        pod_modes,
        arrays: w.arrays,
    };
    let cfg_path = run_dir.join("config.toml");
    fs::write(&cfg_path, config.to_toml()).map_err(|e| PipelineError::artifact(&cfg_path, e))?;
    write_json(&run_dir.join("problem.json"), &problem_manifest)?;
    write_json(&run_dir.join("sensors.json"), &sensor_manifest)?;
    write_json(&run_dir.join("embedding.json"), &emb_manifest)?;
    write_json(&run_dir.join("manifest.json"), &manifest)?;
    RunDir::open(run_dir)
}
