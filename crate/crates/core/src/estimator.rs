//! PBDW recovery, stability constants, residual surrogates (exact and
//! sketched) and surrogate-based space selection.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::linalg::{lstsq_min_norm, sigma_min, BasisMatrix, InnerProductSpace};
use crate::model::{AffineModel, ParameterBox};
use crate::sketch::{EmbeddingManifest, UEmbedding};

/// `sigma_min(C)` below which a background space is declared ill-posed.
pub const ILL_POSED_TOL: f64 = 1e-12;

/// `beta` at or below which `mu` is reported as infinite.
pub const BETA_ZERO: f64 = 1e-14;

/// The observation space `W`: U-orthonormalized Riesz representers of the
/// sensor functionals, plus the map from raw readings to `W` coordinates.
#[derive(Debug, Clone)]
pub struct ObservationSpace {
    basis: BasisMatrix,
    readings_to_coords: DMatrix<f64>,
}

pub fn build_observation(
    space: &InnerProductSpace,
    sensors: &[DVector<f64>],
) -> Result<ObservationSpace> {
    if sensors.is_empty() {
        return Err(Error::Argument("at least one sensor is required".into()));
    }
    let reps = sensors
        .iter()
        .map(|ell| space.riesz(ell))
        .collect::<Result<Vec<_>>>()?;
    let z = BasisMatrix::from_vectors(space.dim(), &reps);
    let (w, dropped) = space.u_orthonormalize(&z)?;
    if !dropped.is_empty() {
        return Err(Error::Rank { dropped });
    }
    // W = Z T, hence W^T R u = T^T (L^T u) for readings L^T u
    let zrz = space.cross_gram(&z.columns, &z.columns)?;
    let zrw = space.cross_gram(&z.columns, &w.columns)?;
    let t = zrz
        .cholesky()
        .ok_or_else(|| Error::Factorization("sensor Gram matrix is not SPD".into()))?
        .solve(&zrw);
    Ok(ObservationSpace {
        basis: w,
        readings_to_coords: t.transpose(),
    })
}

impl ObservationSpace {
    /// Wraps a persisted orthonormal basis and reading map.
    pub fn from_parts(basis: BasisMatrix, readings_to_coords: DMatrix<f64>) -> Result<Self> {
        check_len("reading map rows", basis.ncols(), readings_to_coords.nrows())?;
        Ok(Self {
            basis: BasisMatrix {
                u_orthonormal: true,
                ..basis
            },
            readings_to_coords,
        })
    }

    pub fn m(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &BasisMatrix {
        &self.basis
    }

    pub fn readings_to_coords(&self) -> &DMatrix<f64> {
        &self.readings_to_coords
    }

    /// `w = W^T R_U u`, the coordinates of `P_W u`.
    pub fn observe(&self, space: &InnerProductSpace, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("observed state", space.dim(), u.len())?;
        Ok(self.basis.columns.tr_mul(&space.apply_gram(u)?))
    }

    /// Coordinates from raw sensor readings `l_i(u)`.
    pub fn coords_from_readings(&self, readings: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("sensor readings", self.readings_to_coords.ncols(), readings.len())?;
        Ok(&self.readings_to_coords * readings)
    }

    /// `C = W^T R_U V`.
    pub fn cross_matrix(&self, space: &InnerProductSpace, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        space.cross_gram(&self.basis.columns, v)
    }
}

/// One PBDW estimate `V v* + W eta*`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryResult {
    /// `v*` in the (orthonormal) background basis.
    pub background_coeffs: DVector<f64>,
    /// `eta* = w - C v*`.
    pub correction_coeffs: DVector<f64>,
    /// Dictionary atoms spanning the background (empty for non-dictionary
    /// spaces).
    pub support: Vec<usize>,
    /// `v*` expressed over the support atoms, when a dictionary is used.
    pub atom_coeffs: DVector<f64>,
    pub alpha: Option<f64>,
    pub surrogate_value: Option<f64>,
    pub beta: f64,
    pub mu: f64,
    /// The full state; left out by reduced online recoveries.
    pub state: Option<DVector<f64>>,
}

/// `beta` and `mu` from a cross matrix `C = W^T R_U V`.
pub fn constants_from_cross(c: &DMatrix<f64>) -> (f64, f64) {
    if c.ncols() == 0 {
        return (1.0, 1.0);
    }
    let beta = sigma_min(c).min(1.0);
    let mu = if beta <= BETA_ZERO { f64::INFINITY } else { 1.0 / beta };
    (beta, mu)
}

pub fn stability_constants(
    space: &InnerProductSpace,
    obs: &ObservationSpace,
    v: &BasisMatrix,
) -> Result<(f64, f64)> {
    Ok(constants_from_cross(&obs.cross_matrix(space, &v.columns)?))
}

/// Least-squares part of PBDW on the cross matrix alone:
/// `v* = argmin |C v - w|` (minimum norm), `eta* = w - C v*`.
pub fn pbdw_reduced(
    c: &DMatrix<f64>,
    w: &DVector<f64>,
    tol: f64,
) -> Result<(DVector<f64>, DVector<f64>, f64, f64)> {
    check_len("observation coordinates", c.nrows(), w.len())?;
    if c.ncols() == 0 {
        return Ok((DVector::zeros(0), w.clone(), 1.0, 1.0));
    }
    // one SVD serves the constants, the well-posedness check and the solve
    let svd = c.clone().svd(true, true);
    let smin = if c.nrows() < c.ncols() { 0.0 } else { svd.singular_values.min() };
    if smin < tol {
        return Err(Error::IllPosed {
            sigma_min: smin,
            threshold: tol,
        });
    }
    let beta = smin.min(1.0);
    let mu = if beta <= BETA_ZERO { f64::INFINITY } else { 1.0 / beta };
    let cut = (1e-15 * svd.singular_values.max()).max(f64::MIN_POSITIVE);
    let v = svd.solve(w, cut).expect("both factors were requested");
    let eta = w - c * &v;
    Ok((v, eta, beta, mu))
}

pub fn pbdw_recover(
    space: &InnerProductSpace,
    obs: &ObservationSpace,
    v: &BasisMatrix,
    w: &DVector<f64>,
) -> Result<RecoveryResult> {
    check_len("background basis dimension", space.dim(), v.dim())?;
    if v.ncols() > obs.m() {
        return Err(Error::Argument(format!(
            "background dimension {} exceeds the number of observations {}",
            v.ncols(),
            obs.m()
        )));
    }
    let c = obs.cross_matrix(space, &v.columns)?;
    let (vs, eta, beta, mu) = pbdw_reduced(&c, w, ILL_POSED_TOL)?;
    let state = &v.columns * &vs + &obs.basis().columns * &eta;
    Ok(RecoveryResult {
        background_coeffs: vs,
        correction_coeffs: eta,
        support: Vec::new(),
        atom_coeffs: DVector::zeros(0),
        alpha: None,
        surrogate_value: None,
        beta,
        mu,
        state: Some(state),
    })
}

/// Output of [`box_ls_solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct BoxLsSolution {
    pub theta: DVector<f64>,
    /// `|A theta - b|_2`.
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    /// `|theta - P(theta - grad)|_2` at the returned point.
    pub pg_norm: f64,
}

pub const BOX_LS_MAX_ITER: usize = 100_000;
const POLISH_EVERY: usize = 25;

fn projected_gradient_norm(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    theta: &DVector<f64>,
) -> f64 {
    let grad = a.tr_mul(&(a * theta - b));
    theta
        .iter()
        .zip(grad.iter())
        .enumerate()
        .map(|(q, (&t, &g))| (t - (t - g).clamp(lo[q], hi[q])).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Solves the least-squares problem restricted to the coordinates not
/// pinned to a bound and returns it if the result is feasible.
fn polish(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    theta: &DVector<f64>,
    grad: &DVector<f64>,
) -> Option<DVector<f64>> {
    let d = theta.len();
    let pinned: Vec<bool> = (0..d)
        .map(|q| {
            let width = hi[q] - lo[q];
            let at_lo = theta[q] - lo[q] <= 1e-12 * width && grad[q] > 0.0;
            let at_hi = hi[q] - theta[q] <= 1e-12 * width && grad[q] < 0.0;
            at_lo || at_hi
        })
        .collect();
    let free: Vec<usize> = (0..d).filter(|&q| !pinned[q]).collect();
    let mut out = theta.clone();
    let mut rhs = b.clone();
    for q in 0..d {
        if pinned[q] {
            out[q] = if grad[q] > 0.0 { lo[q] } else { hi[q] };
            rhs.axpy(-out[q], &a.column(q), 1.0);
        }
    }
    if !free.is_empty() {
        let af = a.select_columns(&free);
        let x = lstsq_min_norm(&af, &rhs, 1e-14);
        for (k, &q) in free.iter().enumerate() {
            let width = hi[q] - lo[q];
            if x[k] < lo[q] - 1e-12 * width || x[k] > hi[q] + 1e-12 * width {
                return None;
            }
            out[q] = x[k].clamp(lo[q], hi[q]);
        }
    }
    Some(out)
}

/// `min_{theta in box} |A theta - b|_2` by accelerated projected gradient
/// started at the box center, with gradient-based restarts and periodic
/// active-set polishing.
///
/// Tall systems are first reduced to their triangular QR factor, which
/// leaves the minimizer unchanged; the returned value and projected
/// gradient are evaluated on the original system.
pub fn box_ls_solve(a: &DMatrix<f64>, b: &DVector<f64>, pbox: &ParameterBox) -> BoxLsSolution {
    let d = a.ncols();
    assert_eq!(d, pbox.dim(), "box dimension must match the number of columns");
    let tol = 1e-9 * (1.0 + a.tr_mul(b).norm());
    if a.nrows() <= 2 * d {
        return box_ls_core(a, b, pbox, tol);
    }
    let qr = a.clone().qr();
    let r = qr.r();
    let qtb = qr.q().tr_mul(b);
    let inner = box_ls_core(&r, &qtb, pbox, tol);
    let pg_norm = projected_gradient_norm(a, b, &pbox.lower(), &pbox.upper(), &inner.theta);
    BoxLsSolution {
        value: (a * &inner.theta - b).norm(),
        converged: pg_norm <= tol,
        pg_norm,
        ..inner
    }
}

fn box_ls_core(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    pbox: &ParameterBox,
    tol: f64,
) -> BoxLsSolution {
    let lo = pbox.lower();
    let hi = pbox.upper();
    let finish = |theta: DVector<f64>, iterations: usize| {
        let value = (a * &theta - b).norm();
        let pg_norm = projected_gradient_norm(a, b, &lo, &hi, &theta);
        BoxLsSolution {
            theta,
            value,
            converged: pg_norm <= tol,
            iterations,
            pg_norm,
        }
    };
    let h = a.tr_mul(a);
    let c = a.tr_mul(b);
    let lip = h.symmetric_eigenvalues().max();
    let mut x = pbox.center();
    if lip <= 0.0 {
        return finish(x, 0);
    }
    let step = 1.0 / lip;
    let mut x_prev = x.clone();
    let mut t = 1.0f64;
    let mut best: Option<BoxLsSolution> = None;
    for it in 0..BOX_LS_MAX_ITER {
        if it % POLISH_EVERY == 0 {
            let grad = &h * &x - &c;
            if let Some(p) = polish(a, b, &lo, &hi, &x, &grad) {
                let sol = finish(p, it);
                if sol.converged {
                    return sol;
                }
            }
            let cur = finish(x.clone(), it);
            if cur.converged {
                return cur;
            }
            if best.as_ref().is_none_or(|s| cur.value < s.value) {
                best = Some(cur);
            }
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let y = &x + (&x - &x_prev) * ((t - 1.0) / t_next);
        let grad = &h * &y - &c;
        let x_new = pbox.clamp(&(&y - grad * step));
        // restart when the momentum points uphill
        if (&y - &x_new).dot(&(&x_new - &x)) > 0.0 {
            t = 1.0;
        } else {
            t = t_next;
        }
        x_prev = std::mem::replace(&mut x, x_new);
    }
    let last = finish(x, BOX_LS_MAX_ITER);
    let sol = match best {
        Some(b) if b.value < last.value => b,
        _ => last,
    };
    log::warn!(
        "box least squares stopped at the iteration cap with projected gradient {:e} (target {:e})",
        sol.pg_norm,
        tol
    );
    sol
}

/// Value and minimizer of a residual surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateValue {
    pub value: f64,
    pub xi: DVector<f64>,
    pub converged: bool,
}

impl From<BoxLsSolution> for SurrogateValue {
    fn from(s: BoxLsSolution) -> Self {
        Self {
            value: s.value,
            xi: s.theta,
            converged: s.converged,
        }
    }
}

fn require_identity(model: &AffineModel) -> Result<()> {
    if !model.has_identity_coefficients() {
        return Err(Error::Unsupported(
            "surrogate minimization needs coefficients equal to the parameters".into(),
        ));
    }
    Ok(())
}

/// `S(v) = min_xi |B(xi) v - f(xi)|_{U'}`, computed as a Euclidean box
/// least-squares problem after whitening `G(v)` and `g(v)` by the factor.
pub fn surrogate_exact(model: &AffineModel, v: &DVector<f64>) -> Result<SurrogateValue> {
    require_identity(model)?;
    let sep = model.separated(v)?;
    let space = model.space();
    let a = space.dual_whiten_columns(&sep.g_mat)?;
    let b = space.dual_whiten(&sep.g)?;
    Ok(box_ls_solve(&a, &b, model.parameter_box()).into())
}

/// Sketched affine terms `Theta R^-1 B_i U` and `Theta R^-1 f_j` with
/// `U = (W | V)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchedOffline {
    /// One `k x (m + K)` block per operator term, constant term first.
    pub blocks: Vec<DMatrix<f64>>,
    /// One sketched vector per rhs term, constant term first.
    pub rhs: Vec<DVector<f64>>,
    pub m: usize,
    pub n_atoms: usize,
    pub parameter_box: ParameterBox,
    pub manifest: Option<EmbeddingManifest>,
}

pub fn sketched_offline(
    model: &AffineModel,
    obs: &ObservationSpace,
    atoms: &DMatrix<f64>,
    emb: &UEmbedding,
) -> Result<SketchedOffline> {
    require_identity(model)?;
    check_len("dictionary atom length", model.dim(), atoms.nrows())?;
    let m = obs.m();
    let k = atoms.ncols();
    let mut u = DMatrix::zeros(model.dim(), m + k);
    u.columns_mut(0, m).copy_from(&obs.basis().columns);
    u.columns_mut(m, k).copy_from(atoms);
    let blocks = model
        .operator_terms()
        .iter()
        .map(|b| {
            if b.nnz() == 0 {
                Ok(DMatrix::zeros(emb.rows(), m + k))
            } else {
                emb.sketch_dual_columns(&b.mul_dense(&u)?)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let rhs = model
        .rhs_terms()
        .iter()
        .map(|f| emb.sketch_dual(f))
        .collect::<Result<Vec<_>>>()?;
    Ok(SketchedOffline {
        blocks,
        rhs,
        m,
        n_atoms: k,
        parameter_box: model.parameter_box().clone(),
        manifest: emb.manifest(),
    })
}

impl SketchedOffline {
    pub fn rows(&self) -> usize {
        self.rhs[0].len()
    }

    /// `G^Theta(a)` and `g^Theta(a)` for coefficients `a` over `(W | V)`;
    /// `a` may be shorter than `m + K` (a dictionary prefix).
    pub fn assemble(&self, a: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
        if a.len() > self.m + self.n_atoms || a.len() < self.m {
            return Err(Error::Dimension {
                context: "sketched coefficient vector",
                expected: self.m + self.n_atoms,
                got: a.len(),
            });
        }
        let nz: Vec<(usize, f64)> =
            a.iter().copied().enumerate().filter(|&(_, x)| x != 0.0).collect();
        let apply = |blk: &DMatrix<f64>| {
            let mut out = DVector::zeros(blk.nrows());
            for &(j, x) in &nz {
                out.axpy(x, &blk.column(j), 1.0);
            }
            out
        };
        let mb = self.blocks.len() - 1;
        let mf = self.rhs.len() - 1;
        let mut g_mat = DMatrix::zeros(self.rows(), mb + mf);
        for q in 0..mb {
            g_mat.set_column(q, &apply(&self.blocks[q + 1]));
        }
        for q in 0..mf {
            g_mat.set_column(mb + q, &(-&self.rhs[q + 1]));
        }
        let g = &self.rhs[0] - apply(&self.blocks[0]);
        Ok((g_mat, g))
    }
}

impl SketchedOffline {
    /// Specializes the blocks to one observation. Candidates built from `w`
    /// have `eta = w - C a`, so the observation part of every block folds
    /// into the atom columns: `P eta + B_S a = P w + (B_S - P C_S) a`. The
    /// result has a single leading column (coefficient 1) followed by the
    /// listed atoms, in order.
    pub fn condition_on(&self, w: &DVector<f64>, cross: &DMatrix<f64>, atoms: &[usize]) -> Result<Self> {
        check_len("observation coordinates", self.m, w.len())?;
        check_len("measurement matrix rows", self.m, cross.nrows())?;
        if let Some(&bad) = atoms.iter().find(|&&j| j >= self.n_atoms.min(cross.ncols())) {
            return Err(Error::Argument(format!("atom {bad} is outside the sketched dictionary")));
        }
        let c_s = cross.select_columns(atoms);
        let blocks = self
            .blocks
            .iter()
            .map(|blk| {
                let mut out = DMatrix::zeros(blk.nrows(), 1 + atoms.len());
                for (pos, &j) in atoms.iter().enumerate() {
                    out.set_column(1 + pos, &blk.column(self.m + j));
                }
                let p = blk.columns(0, self.m);
                if p.iter().any(|&v| v != 0.0) {
                    out.set_column(0, &(&p * w));
                    out.columns_mut(1, atoms.len()).gemm(-1.0, &p, &c_s, 1.0);
                }
                out
            })
            .collect();
        Ok(Self {
            blocks,
            rhs: self.rhs.clone(),
            m: 1,
            n_atoms: atoms.len(),
            parameter_box: self.parameter_box.clone(),
            manifest: self.manifest.clone(),
        })
    }
}

/// `S^Theta(U a) = min_xi |Theta R^-1 r(U a, xi)|_2` from the precomputed
/// blocks only.
pub fn surrogate_sketched(offline: &SketchedOffline, a: &DVector<f64>) -> Result<SurrogateValue> {
    let (g_mat, g) = offline.assemble(a)?;
    Ok(box_ls_solve(&g_mat, &g, &offline.parameter_box).into())
}

/// Index of the smallest surrogate value, smallest index on ties. NaN
/// values never win.
pub fn select_space(values: &[f64]) -> Result<usize> {
    if values.is_empty() {
        return Err(Error::Argument("no candidate spaces to select from".into()));
    }
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] || values[best].is_nan() && !v.is_nan() {
            best = i;
        }
    }
    Ok(best)
}
