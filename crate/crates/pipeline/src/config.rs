//! Run configuration, stored as TOML next to the artifacts it produced.

use std::path::{Path, PathBuf};

use pbdw_core::dictionary::LarsCaps;
use pbdw_core::estimator::ILL_POSED_TOL;
use pbdw_core::linalg::RANK_TOL;
use pbdw_core::problems::{
    advection_diffusion_lite, thermal_block, Problem, SensorPattern, SensorSpec, DEFAULT_KAPPA,
    DEFAULT_SENSOR_WIDTH,
};
use pbdw_core::sketch::{gaussian_embed_dim, EmbeddingSpec, GAUSSIAN_EPS_LIMIT};
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemName {
    ThermalBlock,
    AdvectionDiffusionLite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub name: ProblemName,
    pub n_h: usize,
    /// Diffusion coefficient; advection-diffusion only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default = "default_rank_tol")]
    pub rank_tol: f64,
}

fn default_rank_tol() -> f64 {
    RANK_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    /// `m64`, `m36`, `m9` or `custom`.
    pub pattern: String,
    #[serde(default = "default_width")]
    pub width: f64,
    /// Centers for the `custom` pattern.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locations: Option<Vec<[f64; 2]>>,
}

fn default_width() -> f64 {
    DEFAULT_SENSOR_WIDTH
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictionaryConfig {
    /// Dictionary sizes to evaluate; every size is a prefix of the largest.
    pub sizes: Vec<usize>,
    pub snapshot_seed: u64,
}

impl DictionaryConfig {
    pub fn k_max(&self) -> usize {
        self.sizes.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingChoice {
    Gaussian,
    Psrht,
    Composed,
    /// No sketch: selection by the exact surrogate.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub kind: EmbeddingChoice,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Sketch rows; when absent, the Gaussian sizing bound for (eps, delta,
    /// m_B + m_f + 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    /// Rows of the inner P-SRHT for the composed kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_rows: Option<usize>,
    pub seed: u64,
}

fn default_eps() -> f64 {
    0.5
}

fn default_delta() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LarsConfig {
    #[serde(default = "default_floor")]
    pub alpha_floor_rel: f64,
    /// Library size cap as a fraction of `K`, rounded up.
    #[serde(default = "default_space_fraction")]
    pub space_fraction: f64,
    /// Support size cap; `m / 2` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparsity_cap: Option<usize>,
    #[serde(default = "default_ill_posed")]
    pub ill_posed_tol: f64,
}

fn default_floor() -> f64 {
    1e-10
}

fn default_space_fraction() -> f64 {
    0.1
}

fn default_ill_posed() -> f64 {
    ILL_POSED_TOL
}

impl Default for LarsConfig {
    fn default() -> Self {
        Self {
            alpha_floor_rel: default_floor(),
            space_fraction: default_space_fraction(),
            sparsity_cap: None,
            ill_posed_tol: default_ill_posed(),
        }
    }
}

impl LarsConfig {
    pub fn caps(&self, m: usize, k: usize) -> LarsCaps {
        let mut caps = LarsCaps::defaults(m, k);
        caps.alpha_floor_rel = self.alpha_floor_rel;
        caps.max_spaces = ((self.space_fraction * k as f64).ceil() as usize).max(1);
        if let Some(s) = self.sparsity_cap {
            caps.sparsity_cap = s;
        }
        caps.ill_posed_tol = self.ill_posed_tol;
        caps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestConfig {
    #[serde(default = "default_test_size")]
    pub size: usize,
    pub seed: u64,
}

fn default_test_size() -> usize {
    500
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparator {
    A1Pod,
    A2Dict,
    A3Best,
}

impl Comparator {
    pub fn as_str(&self) -> &'static str {
        match self {
            Comparator::A1Pod => "a1_pod",
            Comparator::A2Dict => "a2_dict",
            Comparator::A3Best => "a3_best",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub sensors: SensorConfig,
    pub dictionary: DictionaryConfig,
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub lars: LarsConfig,
    pub test: TestConfig,
    pub comparators: Vec<Comparator>,
    pub output_dir: PathBuf,
}

fn config_err(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

impl RunConfig {
    /// Small thermal-block run that finishes in well under a minute.
    pub fn desk_default() -> Self {
        Self {
            problem: ProblemConfig {
                name: ProblemName::ThermalBlock,
                n_h: 33,
                kappa: None,
                rank_tol: RANK_TOL,
            },
            sensors: SensorConfig {
                pattern: "m36".into(),
                width: DEFAULT_SENSOR_WIDTH,
                locations: None,
            },
            dictionary: DictionaryConfig {
                sizes: vec![100, 200],
                snapshot_seed: 1,
            },
            embedding: EmbeddingConfig {
                kind: EmbeddingChoice::Gaussian,
                eps: 0.5,
                delta: 0.01,
                rows: Some(100),
                inner_rows: None,
                seed: 2,
            },
            lars: LarsConfig::default(),
            test: TestConfig { size: 50, seed: 3 },
            comparators: vec![Comparator::A1Pod, Comparator::A2Dict, Comparator::A3Best],
            output_dir: PathBuf::from("runs/desk"),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = &self.dictionary.sizes;
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(config_err("dictionary.sizes must be a nonempty list of positive sizes"));
        }
        if sizes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(config_err("dictionary.sizes must be strictly increasing"));
        }
        if self.test.size == 0 {
            return Err(config_err("test.size must be positive"));
        }
        if self.test.seed == self.dictionary.snapshot_seed {
            return Err(config_err("test.seed must differ from dictionary.snapshot_seed"));
        }
        if self.comparators.is_empty() {
            return Err(config_err("at least one comparator is required"));
        }
        let mut sorted = self.comparators.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.comparators.len() {
            return Err(config_err("comparators must not repeat"));
        }
        let e = &self.embedding;
        if e.kind != EmbeddingChoice::Exact {
            if e.rows.is_none() && !(e.eps > 0.0 && e.eps < GAUSSIAN_EPS_LIMIT) {
                return Err(config_err(format!(
                    "embedding.eps must lie in (0, {GAUSSIAN_EPS_LIMIT}) to size the sketch"
                )));
            }
            if e.rows.is_none() && !(e.delta > 0.0 && e.delta < 1.0) {
                return Err(config_err("embedding.delta must lie in (0, 1)"));
            }
            if e.rows == Some(0) {
                return Err(config_err("embedding.rows must be positive"));
            }
        }
        if e.kind == EmbeddingChoice::Composed && e.inner_rows.is_none() {
            return Err(config_err("composed embeddings need embedding.inner_rows"));
        }
        let l = &self.lars;
        if !(l.alpha_floor_rel >= 0.0 && l.alpha_floor_rel < 1.0) {
            return Err(config_err("lars.alpha_floor_rel must lie in [0, 1)"));
        }
        if !(l.space_fraction > 0.0) {
            return Err(config_err("lars.space_fraction must be positive"));
        }
        if l.sparsity_cap == Some(0) || !(l.ill_posed_tol >= 0.0) {
            return Err(config_err("lars caps must be positive"));
        }
        if !(self.problem.rank_tol > 0.0) {
            return Err(config_err("problem.rank_tol must be positive"));
        }
        if self.problem.name == ProblemName::ThermalBlock && self.problem.kappa.is_some() {
            return Err(config_err("problem.kappa applies to advection_diffusion_lite only"));
        }
        self.sensor_spec()?;
        Ok(())
    }

    pub fn build_problem(&self) -> Result<Problem> {
        let p = match self.problem.name {
            ProblemName::ThermalBlock => thermal_block(self.problem.n_h),
            ProblemName::AdvectionDiffusionLite => {
                advection_diffusion_lite(self.problem.n_h, self.problem.kappa.unwrap_or(DEFAULT_KAPPA))
            }
        };
        p.map_err(|e| config_err(e.to_string()))
    }

    pub fn sensor_pattern(&self) -> Result<SensorPattern> {
        let s = &self.sensors;
        match (s.pattern.as_str(), &s.locations) {
            ("custom", Some(locs)) => Ok(SensorPattern::Custom(locs.clone())),
            ("custom", None) => Err(config_err("custom sensors need sensors.locations")),
            (_, Some(_)) => Err(config_err("sensors.locations requires pattern = \"custom\"")),
            (name, None) => SensorPattern::from_name(name)
                .ok_or_else(|| config_err(format!("unknown sensor pattern {name:?}"))),
        }
    }

    pub fn sensor_spec(&self) -> Result<SensorSpec> {
        SensorSpec::from_pattern(&self.sensor_pattern()?, self.sensors.width)
            .map_err(|e| config_err(e.to_string()))
    }

    /// Realizable sketch for an affine model with `theta_dim` coefficients;
    /// `None` for the exact surrogate.
    pub fn embedding_spec(&self, input_dim: usize, theta_dim: usize) -> Result<Option<EmbeddingSpec>> {
        let e = &self.embedding;
        let rows = || match e.rows {
            Some(r) => Ok(r),
            None => gaussian_embed_dim(e.eps, e.delta, theta_dim + 1)
                .map_err(|err| config_err(err.to_string())),
        };
        Ok(match e.kind {
            EmbeddingChoice::Exact => None,
            EmbeddingChoice::Gaussian => Some(EmbeddingSpec::gaussian(rows()?, input_dim, e.seed)),
            EmbeddingChoice::Psrht => Some(EmbeddingSpec::psrht(rows()?, input_dim, e.seed)),
            EmbeddingChoice::Composed => Some(EmbeddingSpec::composed(
                rows()?,
                e.inner_rows.expect("validated"),
                input_dim,
                e.seed,
            )),
        })
    }
}
