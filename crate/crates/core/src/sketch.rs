//! Oblivious U -> l2 subspace embeddings `Theta = Omega Q`.
//!
//! `Omega` is a Gaussian matrix, a partial subsampled randomized Hadamard
//! transform (P-SRHT), or a Gaussian applied after a P-SRHT. Primal vectors
//! are sketched as `Omega Q v`, dual vectors as `Omega Q R_U^{-1} r`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{BasisMatrix, InnerProductSpace};
use crate::rng::stream;

const PSRHT_STREAM: u64 = 0;
const GAUSSIAN_STREAM: u64 = 1;

/// Upper validity limit on `eps` for the Gaussian sizing bound.
pub const GAUSSIAN_EPS_LIMIT: f64 = 0.572;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EmbeddingKind {
    Gaussian,
    Psrht,
    /// Gaussian with `rows` rows applied to a P-SRHT with `inner_rows` rows.
    Composed { inner_rows: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub kind: EmbeddingKind,
    pub rows: usize,
    pub input_dim: usize,
    pub seed: u64,
}

impl EmbeddingSpec {
    pub fn gaussian(rows: usize, input_dim: usize, seed: u64) -> Self {
        Self {
            kind: EmbeddingKind::Gaussian,
            rows,
            input_dim,
            seed,
        }
    }

    pub fn psrht(rows: usize, input_dim: usize, seed: u64) -> Self {
        Self {
            kind: EmbeddingKind::Psrht,
            rows,
            input_dim,
            seed,
        }
    }

    pub fn composed(rows: usize, inner_rows: usize, input_dim: usize, seed: u64) -> Self {
        Self {
            kind: EmbeddingKind::Composed { inner_rows },
            rows,
            input_dim,
            seed,
        }
    }

    /// Zero-padded Hadamard length, for kinds that use one.
    pub fn padded_len(&self) -> Option<usize> {
        match self.kind {
            EmbeddingKind::Gaussian => None,
            _ => Some(self.input_dim.next_power_of_two()),
        }
    }
}

/// What gets written next to persisted sketches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingManifest {
    pub kind: EmbeddingKind,
    pub k: usize,
    pub seed: u64,
    pub input_dim: usize,
    pub padded_len: Option<usize>,
}

/// `ceil(7.87 eps^-2 (6.9 d + ln(1/delta)))`, the number of Gaussian rows
/// sufficient for an `(eps, delta, d)` oblivious embedding. Valid only for
/// `0 < eps < 0.572`.
pub fn gaussian_embed_dim(eps: f64, delta: f64, d: usize) -> Result<usize> {
    if !(eps > 0.0 && eps < GAUSSIAN_EPS_LIMIT) {
        return Err(Error::Domain(format!(
            "Gaussian sizing bound needs 0 < eps < {GAUSSIAN_EPS_LIMIT}, got {eps}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    if d == 0 {
        return Err(Error::Domain("subspace dimension must be positive".into()));
    }
    let k = 7.87 / (eps * eps) * (6.9 * d as f64 + (1.0 / delta).ln());
    Ok(k.ceil() as usize)
}

/// In-place unnormalized fast Walsh-Hadamard transform; `x.len()` must be a
/// power of two.
fn fwht(x: &mut [f64]) {
    let n = x.len();
    let mut h = 1;
    while h < n {
        for start in (0..n).step_by(2 * h) {
            for i in start..start + h {
                let a = x[i];
                let b = x[i + h];
                x[i] = a + b;
                x[i + h] = a - b;
            }
        }
        h *= 2;
    }
}

#[derive(Debug, Clone)]
struct Psrht {
    input_dim: usize,
    padded: usize,
    signs: Vec<f64>,
    rows: Vec<usize>,
    scale: f64,
}

impl Psrht {
    fn realize(rows: usize, input_dim: usize, seed: u64) -> Result<Self> {
        let padded = input_dim.next_power_of_two();
        if rows == 0 || rows > padded {
            return Err(Error::Argument(format!(
                "P-SRHT needs 1 <= k <= {padded} (padded length), got {rows}"
            )));
        }
        let mut rng = stream(seed, PSRHT_STREAM);
        let signs = (0..padded)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let mut sampled = index::sample(&mut rng, padded, rows).into_vec();
        sampled.sort_unstable();
        Ok(Self {
            input_dim,
            padded,
            signs,
            rows: sampled,
            // E[|Omega x|^2] = |x|^2 with the unnormalized transform
            scale: 1.0 / (rows as f64).sqrt(),
        })
    }

    fn apply(&self, x: &[f64]) -> DVector<f64> {
        let mut buf = vec![0.0; self.padded];
        for (i, v) in x.iter().enumerate().take(self.input_dim) {
            buf[i] = v * self.signs[i];
        }
        fwht(&mut buf);
        DVector::from_iterator(self.rows.len(), self.rows.iter().map(|&r| buf[r] * self.scale))
    }
}

#[derive(Debug, Clone)]
enum Omega {
    Dense(DMatrix<f64>),
    Psrht(Psrht),
    Composed { inner: Psrht, outer: DMatrix<f64> },
}

fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stream(seed, GAUSSIAN_STREAM);
    let s = 1.0 / (rows as f64).sqrt();
    let mut m = DMatrix::zeros(rows, cols);
    // column-major fill keeps the draw order independent of storage details
    for j in 0..cols {
        for i in 0..rows {
            let z: f64 = rng.sample(StandardNormal);
            m[(i, j)] = z * s;
        }
    }
    m
}

impl Omega {
    fn rows(&self) -> usize {
        match self {
            Self::Dense(m) => m.nrows(),
            Self::Psrht(p) => p.rows.len(),
            Self::Composed { outer, .. } => outer.nrows(),
        }
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Dense(m) => m * x,
            Self::Psrht(p) => p.apply(x.as_slice()),
            Self::Composed { inner, outer } => outer * inner.apply(x.as_slice()),
        }
    }

    fn apply_columns(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Self::Dense(m) => m * x,
            Self::Psrht(p) => psrht_columns(p, x),
            Self::Composed { inner, outer } => outer * psrht_columns(inner, x),
        }
    }
}

fn psrht_columns(p: &Psrht, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(p.rows.len(), x.ncols());
    for j in 0..x.ncols() {
        let col = x.column(j);
        out.set_column(j, &p.apply(col.as_slice()));
    }
    out
}

/// A realized embedding `Theta = Omega Q` bound to an inner-product space.
#[derive(Debug, Clone)]
pub struct UEmbedding {
    spec: Option<EmbeddingSpec>,
    omega: Omega,
    space: Arc<InnerProductSpace>,
}

impl UEmbedding {
    /// Draws `Omega` from the seeded streams. Identical `(spec, space)`
    /// reproduce bit-identical sketches.
    pub fn realize(spec: EmbeddingSpec, space: Arc<InnerProductSpace>) -> Result<Self> {
        check_len("embedding input dimension", space.factor_rows(), spec.input_dim)?;
        if spec.rows == 0 {
            return Err(Error::Argument("embedding needs at least one row".into()));
        }
        let omega = match spec.kind {
            EmbeddingKind::Gaussian => {
                Omega::Dense(gaussian_matrix(spec.rows, spec.input_dim, spec.seed))
            }
            EmbeddingKind::Psrht => Omega::Psrht(Psrht::realize(spec.rows, spec.input_dim, spec.seed)?),
            EmbeddingKind::Composed { inner_rows } => Omega::Composed {
                inner: Psrht::realize(inner_rows, spec.input_dim, spec.seed)?,
                outer: gaussian_matrix(spec.rows, inner_rows, spec.seed),
            },
        };
        Ok(Self {
            spec: Some(spec),
            omega,
            space,
        })
    }

    /// Wraps an explicit `Omega` (k x s).
    pub fn from_matrix(omega: DMatrix<f64>, space: Arc<InnerProductSpace>) -> Result<Self> {
        check_len("explicit embedding columns", space.factor_rows(), omega.ncols())?;
        Ok(Self {
            spec: None,
            omega: Omega::Dense(omega),
            space,
        })
    }

    pub fn spec(&self) -> Option<&EmbeddingSpec> {
        self.spec.as_ref()
    }

    pub fn rows(&self) -> usize {
        self.omega.rows()
    }

    pub fn space(&self) -> &Arc<InnerProductSpace> {
        &self.space
    }

    pub fn manifest(&self) -> Option<EmbeddingManifest> {
        self.spec.map(|s| EmbeddingManifest {
            kind: s.kind,
            k: s.rows,
            seed: s.seed,
            input_dim: s.input_dim,
            padded_len: s.padded_len(),
        })
    }

    /// `Theta v = Omega Q v`.
    pub fn sketch_primal(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.omega.apply(&self.space.factor_apply(v)?))
    }

    /// `Theta R_U^{-1} r = Omega Q R_U^{-1} r`.
    pub fn sketch_dual(&self, r: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.omega.apply(&self.space.dual_whiten(r)?))
    }

    pub fn sketch_primal_columns(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.omega.apply_columns(&self.space.factor_apply_columns(m)?))
    }

    pub fn sketch_dual_columns(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.omega.apply_columns(&self.space.dual_whiten_columns(m)?))
    }
}

/// True iff every eigenvalue `sigma^2` of the Gram matrix of the sketched
/// basis lies within `eps` of one, i.e. the embedding is an `eps`-subspace
/// embedding for the span of `basis`. A round-off allowance of a few ulps per
/// column is added to `eps`.
pub fn check_embedding(emb: &UEmbedding, basis: &BasisMatrix, eps: f64) -> Result<bool> {
    if !basis.u_orthonormal {
        return Err(Error::Argument("check_embedding needs a U-orthonormal basis".into()));
    }
    let p = basis.ncols();
    if p == 0 {
        return Ok(true);
    }
    let s = emb.sketch_primal_columns(&basis.columns)?;
    let g = s.transpose() * &s;
    let g = (&g + g.transpose()) * 0.5;
    let tol = eps + 16.0 * f64::EPSILON * p as f64;
    Ok(SymmetricEigen::new(g)
        .eigenvalues
        .iter()
        .all(|l| (l - 1.0).abs() <= tol))
}
