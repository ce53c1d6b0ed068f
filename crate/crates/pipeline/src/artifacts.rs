//! On-disk layout of a run directory.
//!
//! ```text
//! run/
//!   config.toml      problem.json     sensors.json
//!   embedding.json   manifest.json    arrays/<name>.{bin,json}
//!   online/          online_no_truth/
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use pbdw_core::dictionary::Dictionary;
use pbdw_core::estimator::{ObservationSpace, SketchedOffline};
use pbdw_core::linalg::io::{read_dense, read_sparse, ArrayManifest};
use pbdw_core::linalg::{BasisMatrix, InnerProductSpace, SparseMatrix};
use pbdw_core::model::{AffineModel, CoefficientMap, ParameterBox, SamplingLaw};
use pbdw_core::sketch::EmbeddingManifest;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{ProblemName, RunConfig};
use crate::error::{PipelineError, Result};

pub const ARRAY_DIR: &str = "arrays";
pub const MANIFEST_VERSION: u32 = 1;

/// What identifies the discretized problem; runs are only merged when
/// these agree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemManifest {
    pub name: ProblemName,
    pub n_h: usize,
    pub kappa: Option<f64>,
    pub n_dofs: usize,
    pub m_b: usize,
    pub m_f: usize,
    pub intervals: Vec<(f64, f64)>,
    pub laws: Vec<SamplingLaw>,
}

impl ProblemManifest {
    pub fn parameter_box(&self) -> Result<ParameterBox> {
        Ok(ParameterBox::new(self.intervals.clone(), self.laws.clone())?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorManifest {
    pub pattern: String,
    pub width: f64,
    pub locations: Vec<[f64; 2]>,
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub snapshot_seed: u64,
    pub embedding_seed: u64,
    pub sizes: Vec<usize>,
    pub m: usize,
    pub n_dofs: usize,
    /// Number of POD modes kept for each dictionary size.
    pub pod_modes: BTreeMap<usize, usize>,
    pub arrays: BTreeMap<String, ArrayManifest>,
}

pub fn op_name(q: usize) -> String {
    format!("op_{q}")
}

pub fn rhs_name(q: usize) -> String {
    format!("rhs_{q}")
}

pub fn pod_name(k: usize) -> String {
    format!("pod_{k}")
}

pub fn sketch_op_name(q: usize) -> String {
    format!("sketch_op_{q}")
}

pub fn sketch_rhs_name(q: usize) -> String {
    format!("sketch_rhs_{q}")
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("manifest serializes");
    fs::write(path, text).map_err(|e| PipelineError::artifact(path, e))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::artifact(path, e))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::artifact(path, e))
}

/// A run directory with its manifests loaded; arrays are read on demand
/// and checked against the run manifest.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
    pub config: RunConfig,
    pub problem: ProblemManifest,
    pub sensors: SensorManifest,
    pub embedding: Option<EmbeddingManifest>,
    pub manifest: RunManifest,
}

impl RunDir {
    pub fn open(root: &Path) -> Result<Self> {
        let cfg_path = root.join("config.toml");
        let text = fs::read_to_string(&cfg_path).map_err(|e| PipelineError::artifact(&cfg_path, e))?;
        let config = RunConfig::from_toml(&text)
            .map_err(|e| PipelineError::artifact(&cfg_path, e))?;
        let manifest: RunManifest = read_json(&root.join("manifest.json"))?;
        if manifest.version != MANIFEST_VERSION {
            return Err(PipelineError::artifact(
                &root.join("manifest.json"),
                format!("unsupported manifest version {}", manifest.version),
            ));
        }
        if manifest.sizes != config.dictionary.sizes
            || manifest.snapshot_seed != config.dictionary.snapshot_seed
        {
            return Err(PipelineError::artifact(root, "manifest disagrees with config.toml"));
        }
        Ok(Self {
            root: root.to_path_buf(),
            config,
            problem: read_json(&root.join("problem.json"))?,
            sensors: read_json(&root.join("sensors.json"))?,
            embedding: read_json(&root.join("embedding.json"))?,
            manifest,
        })
    }

    fn array_dir(&self) -> PathBuf {
        self.root.join(ARRAY_DIR)
    }

    fn check(&self, name: &str) -> Result<()> {
        let path = self.array_dir().join(format!("{name}.json"));
        let listed = self
            .manifest
            .arrays
            .get(name)
            .ok_or_else(|| PipelineError::artifact(&path, "not listed in manifest.json"))?;
        let on_disk: ArrayManifest = read_json(&path)?;
        if &on_disk != listed {
            return Err(PipelineError::artifact(&path, "differs from manifest.json"));
        }
        Ok(())
    }

    pub fn dense(&self, name: &str) -> Result<DMatrix<f64>> {
        self.check(name)?;
        Ok(read_dense(&self.array_dir(), name)?)
    }

    pub fn vector(&self, name: &str) -> Result<DVector<f64>> {
        let m = self.dense(name)?;
        if m.ncols() != 1 {
            return Err(PipelineError::artifact(&self.array_dir().join(name), "expected a column"));
        }
        Ok(m.column(0).into_owned())
    }

    pub fn sparse(&self, name: &str) -> Result<SparseMatrix> {
        self.check(name)?;
        Ok(read_sparse(&self.array_dir(), name)?)
    }

    pub fn parameter_box(&self) -> Result<ParameterBox> {
        self.problem.parameter_box()
    }

    pub fn space(&self) -> Result<Arc<InnerProductSpace>> {
        Ok(Arc::new(InnerProductSpace::new(self.sparse("gram")?)?))
    }

    pub fn model(&self, space: Arc<InnerProductSpace>) -> Result<AffineModel> {
        let ops = (0..=self.problem.m_b)
            .map(|q| self.sparse(&op_name(q)))
            .collect::<Result<Vec<_>>>()?;
        let rhs = (0..=self.problem.m_f)
            .map(|q| self.vector(&rhs_name(q)))
            .collect::<Result<Vec<_>>>()?;
        Ok(AffineModel::new(space, ops, rhs, self.parameter_box()?, CoefficientMap::Identity)?)
    }

    pub fn observation(&self) -> Result<ObservationSpace> {
        let mut basis = BasisMatrix::new(self.dense("w_basis")?);
        basis.u_orthonormal = true;
        Ok(ObservationSpace::from_parts(basis, self.dense("readings_map")?)?)
    }

    pub fn snapshot_params(&self) -> Result<Vec<Vec<f64>>> {
        let p = self.dense("snapshot_params")?;
        Ok(p.column_iter().map(|c| c.iter().copied().collect()).collect())
    }

    /// The largest dictionary; atoms are only read when `with_atoms`.
    pub fn dictionary(&self, with_atoms: bool) -> Result<Dictionary> {
        Ok(Dictionary {
            atoms: if with_atoms { Some(self.dense("atoms")?) } else { None },
            cross: self.dense("cross")?,
            gram: self.dense("atom_gram")?,
            params: self.snapshot_params()?,
        })
    }

    pub fn pod_modes(&self, k: usize) -> Result<BasisMatrix> {
        let mut b = BasisMatrix::new(self.dense(&pod_name(k))?);
        b.u_orthonormal = true;
        Ok(b)
    }

    /// Sketched blocks, if the run uses an embedding.
    pub fn sketched(&self) -> Result<Option<SketchedOffline>> {
        if self.embedding.is_none() {
            return Ok(None);
        }
        let blocks = (0..=self.problem.m_b)
            .map(|q| self.dense(&sketch_op_name(q)))
            .collect::<Result<Vec<_>>>()?;
        let rhs = (0..=self.problem.m_f)
            .map(|q| self.vector(&sketch_rhs_name(q)))
            .collect::<Result<Vec<_>>>()?;
        let n_atoms = blocks[0].ncols() - self.manifest.m;
        Ok(Some(SketchedOffline {
            blocks,
            rhs,
            m: self.manifest.m,
            n_atoms,
            parameter_box: self.parameter_box()?,
            manifest: self.embedding.clone(),
        }))
    }
}
