//! Snapshot dictionaries, the LARS-LASSO homotopy for basis pursuit
//! denoising, the adaptive library it generates and dictionary-based
//! recovery.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::estimator::{
    pbdw_reduced, select_space, surrogate_exact, surrogate_sketched, ObservationSpace,
    RecoveryResult, SketchedOffline, ILL_POSED_TOL,
};
use crate::model::AffineModel;
use crate::linalg::InnerProductSpace;
use crate::rng::stream;

/// Relative norm below which an atom is considered dependent on the
/// previous ones when orthonormalizing through the atom Gram matrix.
/// Gram-based arithmetic resolves norms only down to about `sqrt(eps)`.
pub const GRAM_RANK_TOL: f64 = 1e-7;

/// `K` U-normalized atoms with their measurement matrix `C = W^T R_U V` and
/// atom Gram matrix `V^T R_U V`. The atoms themselves are optional so that
/// the online stage can run from `C` and the Gram matrix alone.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    pub atoms: Option<DMatrix<f64>>,
    pub cross: DMatrix<f64>,
    pub gram: DMatrix<f64>,
    /// Parameters of the snapshots the atoms came from.
    pub params: Vec<Vec<f64>>,
}

impl Dictionary {
    pub fn len(&self) -> usize {
        self.cross.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn m(&self) -> usize {
        self.cross.nrows()
    }

    /// The first `k` atoms.
    pub fn prefix(&self, k: usize) -> Result<Self> {
        if k > self.len() {
            return Err(Error::Argument(format!(
                "dictionary prefix {k} exceeds its size {}",
                self.len()
            )));
        }
        Ok(Self {
            atoms: self.atoms.as_ref().map(|a| a.columns(0, k).into_owned()),
            cross: self.cross.columns(0, k).into_owned(),
            gram: self.gram.view((0, 0), (k, k)).into_owned(),
            params: self.params.iter().take(k).cloned().collect(),
        })
    }

    fn atoms(&self) -> Result<&DMatrix<f64>> {
        self.atoms
            .as_ref()
            .ok_or_else(|| Error::Unsupported("dictionary atoms were not loaded".into()))
    }

    /// `W eta + sum_{i in S} a_i v_i` for a dictionary recovery.
    pub fn state_of(&self, obs: &ObservationSpace, r: &RecoveryResult) -> Result<DVector<f64>> {
        let atoms = self.atoms()?;
        let mut u = &obs.basis().columns * &r.correction_coeffs;
        for (&i, &a) in r.support.iter().zip(r.atom_coeffs.iter()) {
            u.axpy(a, &atoms.column(i), 1.0);
        }
        Ok(u)
    }
}

/// Normalizes the snapshots in order, skipping zero ones, until `k` atoms
/// are collected.
pub fn build_dictionary(
    space: &InnerProductSpace,
    obs: &ObservationSpace,
    snapshots: &[DVector<f64>],
    params: &[Vec<f64>],
    k: usize,
) -> Result<Dictionary> {
    check_len("snapshot parameters", snapshots.len(), params.len())?;
    let n = space.dim();
    let mut cols = Vec::with_capacity(k);
    let mut kept = Vec::with_capacity(k);
    for (s, p) in snapshots.iter().zip(params) {
        if cols.len() == k {
            break;
        }
        check_len("snapshot length", n, s.len())?;
        let norm = space.u_norm(s)?;
        if norm == 0.0 {
            log::warn!("skipping a zero snapshot at parameter {p:?}");
            continue;
        }
        cols.push(s / norm);
        kept.push(p.clone());
    }
    if cols.len() < k {
        return Err(Error::Argument(format!(
            "only {} nonzero snapshots for a dictionary of size {k}",
            cols.len()
        )));
    }
    let atoms = DMatrix::from_columns(&cols);
    let atoms = if k == 0 { DMatrix::zeros(n, 0) } else { atoms };
    let ratoms = space.gram().mul_dense(&atoms)?;
    let cross = obs.basis().columns.tr_mul(&ratoms);
    let mut gram = atoms.tr_mul(&ratoms);
    // symmetrize away round-off
    gram = (&gram + gram.transpose()) * 0.5;
    Ok(Dictionary {
        atoms: Some(atoms),
        cross,
        gram,
        params: kept,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    AlphaFloor,
    MaxSpaces,
    SparsityCap,
    ExactFit,
    NumericalStall,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::AlphaFloor => "alpha_floor",
            Self::MaxSpaces => "max_spaces",
            Self::SparsityCap => "sparsity_cap",
            Self::ExactFit => "exact_fit",
            Self::NumericalStall => "numerical_stall",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LarsCaps {
    /// The path stops once `alpha` would drop below this fraction of `alpha_0`.
    pub alpha_floor_rel: f64,
    /// Number of distinct nonempty supports after which the path stops.
    pub max_spaces: usize,
    /// Largest admissible support size.
    pub sparsity_cap: usize,
    /// `sigma_min(C_V)` below which a library space is skipped.
    pub ill_posed_tol: f64,
}

impl LarsCaps {
    /// `alpha_floor = 1e-10 alpha_0`, `max_spaces = ceil(0.1 K)`,
    /// `sparsity_cap = floor(m / 2)`.
    pub fn defaults(m: usize, k: usize) -> Self {
        Self {
            alpha_floor_rel: 1e-10,
            max_spaces: (k as f64 * 0.1).ceil().max(1.0) as usize,
            sparsity_cap: (m / 2).max(1),
            ill_posed_tol: ILL_POSED_TOL,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha_floor_rel >= 0.0 && self.alpha_floor_rel < 1.0)
            || self.max_spaces == 0
            || self.sparsity_cap == 0
            || !(self.ill_posed_tol >= 0.0)
        {
            return Err(Error::Argument(format!("invalid LARS caps {self:?}")));
        }
        Ok(())
    }
}

/// Breakpoints of the BPDN path with their solutions and supports. The
/// support at `alphas[j]` is the active set right after the event there,
/// i.e. the support of the solutions just below `alphas[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoPath {
    pub alphas: Vec<f64>,
    pub solutions: Vec<DVector<f64>>,
    pub supports: Vec<Vec<usize>>,
    pub termination: Termination,
    pub alpha0: f64,
}

/// One row of the optional path dump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathDebugRow {
    pub alpha: f64,
    pub support_size: usize,
    pub objective: f64,
    pub kkt_residual: f64,
}

/// `1/2 |C x - w|^2 + alpha |x|_1`.
pub fn bpdn_objective(c: &DMatrix<f64>, w: &DVector<f64>, x: &DVector<f64>, alpha: f64) -> f64 {
    0.5 * (c * x - w).norm_squared() + alpha * x.iter().map(|v| v.abs()).sum::<f64>()
}

/// Largest violation of the BPDN optimality conditions at `alpha`:
/// `C^T(w - C x)` must equal `alpha sign(x_i)` where `x_i != 0` and lie in
/// `[-alpha, alpha]` elsewhere.
pub fn kkt_residual(c: &DMatrix<f64>, w: &DVector<f64>, x: &DVector<f64>, alpha: f64) -> f64 {
    let corr = c.tr_mul(&(w - c * x));
    corr.iter()
        .zip(x.iter())
        .map(|(&g, &xi)| {
            if xi != 0.0 {
                (g - alpha * xi.signum()).abs()
            } else {
                (g.abs() - alpha).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

impl LassoPath {
    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub fn debug_rows(&self, dict: &Dictionary, w: &DVector<f64>) -> Vec<PathDebugRow> {
        self.alphas
            .iter()
            .zip(&self.solutions)
            .zip(&self.supports)
            .map(|((&alpha, x), s)| PathDebugRow {
                alpha,
                support_size: s.len(),
                objective: bpdn_objective(&dict.cross, w, x, alpha),
                kkt_residual: kkt_residual(&dict.cross, w, x, alpha),
            })
            .collect()
    }
}

/// Solution on the active set at `alpha`:
/// `(C_A^T C_A) x_A = C_A^T w - alpha s_A`. Also returns the direction
/// `d = (C_A^T C_A)^-1 s_A` along which `x_A` moves as `alpha` decreases.
fn active_solution(
    c: &DMatrix<f64>,
    w: &DVector<f64>,
    active: &[usize],
    signs: &[f64],
    alpha: f64,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let ca = c.select_columns(active);
    if ca.ncols() > ca.nrows() {
        return None;
    }
    // QR of C_A rather than Cholesky of C_A^T C_A: the atoms are often
    // nearly collinear and the normal equations square their conditioning
    let r = ca.clone().qr().r();
    let rmax = r.diagonal().amax();
    if !(r.diagonal().amin() > 1e3 * f64::EPSILON * rmax) {
        return None;
    }
    let gram_solve = |b: &DVector<f64>| -> Option<DVector<f64>> {
        r.solve_upper_triangular(&r.tr_solve_upper_triangular(b)?)
    };
    let s = DVector::from_column_slice(signs);
    let rhs = ca.tr_mul(w) - &s * alpha;
    let mut x = gram_solve(&rhs)?;
    // one refinement step
    x += gram_solve(&(&rhs - ca.tr_mul(&(&ca * &x))))?;
    let mut d = gram_solve(&s)?;
    d += gram_solve(&(&s - ca.tr_mul(&(&ca * &d))))?;
    if x.iter().chain(d.iter()).all(|v| v.is_finite()) {
        Some((x, d))
    } else {
        None
    }
}

fn scatter(k: usize, active: &[usize], values: &DVector<f64>) -> DVector<f64> {
    let mut x = DVector::zeros(k);
    for (&i, &v) in active.iter().zip(values.iter()) {
        x[i] = v;
    }
    x
}

fn sorted(active: &[usize]) -> Vec<usize> {
    let mut s = active.to_vec();
    s.sort_unstable();
    s
}

/// LARS-LASSO homotopy for `min 1/2 |C x - w|^2 + alpha |x|_1` from
/// `alpha_0 = |C^T w|_inf` downwards, with atoms both joining and leaving
/// the active set. Every emitted breakpoint is KKT-certified at
/// `1e-8 alpha_0`; a failed certificate truncates the path.
pub fn lars_path(dict: &Dictionary, w: &DVector<f64>, caps: &LarsCaps) -> Result<LassoPath> {
    caps.validate()?;
    let c = &dict.cross;
    check_len("observation coordinates", c.nrows(), w.len())?;
    let k = c.ncols();
    let corr0 = c.tr_mul(w);
    let alpha0 = corr0.amax();
    let mut path = LassoPath {
        alphas: Vec::new(),
        solutions: Vec::new(),
        supports: Vec::new(),
        termination: Termination::ExactFit,
        alpha0,
    };
    if k == 0 || alpha0 == 0.0 {
        path.alphas.push(alpha0);
        path.solutions.push(DVector::zeros(k));
        path.supports.push(Vec::new());
        return Ok(path);
    }
    let kkt_tol = 1e-8 * alpha0;
    let stall = 1e3 * f64::EPSILON * alpha0;
    let floor = caps.alpha_floor_rel * alpha0;
    let wnorm = w.norm();

    let j0 = corr0.iamax();
    let mut active = vec![j0];
    let mut signs = vec![corr0[j0].signum()];
    let mut alpha = alpha0;
    let mut x = DVector::zeros(k);
    let mut distinct = 1usize;
    path.alphas.push(alpha0);
    path.solutions.push(x.clone());
    path.supports.push(vec![j0]);
    if caps.max_spaces <= 1 {
        path.termination = Termination::MaxSpaces;
        return Ok(path);
    }
    let mut just_dropped: Option<usize> = None;
    let mut just_joined: Option<usize> = Some(j0);

    loop {
        let Some((_, d)) = active_solution(c, w, &active, &signs, alpha) else {
            log::debug!("LARS stall: active Gram of size {} not SPD", active.len());
            path.termination = Termination::NumericalStall;
            break;
        };
        let x_a = DVector::from_iterator(active.len(), active.iter().map(|&i| x[i]));
        let corr = c.tr_mul(&(w - c * &x));
        let dir = c.tr_mul(&(c.select_columns(&active) * &d));

        // next event: an inactive atom reaching |corr| = alpha, or an active
        // coefficient crossing zero
        let mut gamma = f64::INFINITY;
        let mut event: Option<(usize, Option<f64>)> = None;
        for j in 0..k {
            if active.contains(&j) || Some(j) == just_dropped {
                continue;
            }
            for (num, den, sign) in [(alpha - corr[j], 1.0 - dir[j], 1.0), (alpha + corr[j], 1.0 + dir[j], -1.0)] {
                if den > 0.0 {
                    let g = num / den;
                    if g > 0.0 && g < gamma {
                        gamma = g;
                        event = Some((j, Some(sign)));
                    }
                }
            }
        }
        for (p, &i) in active.iter().enumerate() {
            if Some(i) == just_joined || d[p] == 0.0 {
                continue;
            }
            let g = -x_a[p] / d[p];
            if g > 0.0 && g < gamma {
                gamma = g;
                event = Some((i, None));
            }
        }

        if alpha - gamma <= floor || event.is_none() {
            // the current active set stays optimal down to the floor
            let Some((xa_end, _)) = active_solution(c, w, &active, &signs, floor) else {
                path.termination = Termination::NumericalStall;
                break;
            };
            let x_end = scatter(k, &active, &xa_end);
            let fit = active_solution(c, w, &active, &signs, 0.0)
                .map(|(x0, _)| (c.select_columns(&active) * x0 - w).norm())
                .unwrap_or(f64::INFINITY);
            if kkt_residual(c, w, &x_end, floor) <= kkt_tol {
                path.alphas.push(floor);
                path.solutions.push(x_end);
                path.supports.push(sorted(&active));
            }
            path.termination = if fit <= 1e-10 * wnorm {
                Termination::ExactFit
            } else {
                Termination::AlphaFloor
            };
            break;
        }
        if gamma < stall {
            log::debug!("LARS stall: step {gamma:e} at alpha {alpha:e}");
            path.termination = Termination::NumericalStall;
            break;
        }
        let new_alpha = alpha - gamma;
        // the solution at the breakpoint, from the segment's active set
        let Some((xa_new, _)) = active_solution(c, w, &active, &signs, new_alpha) else {
            path.termination = Termination::NumericalStall;
            break;
        };
        let mut x_new = scatter(k, &active, &xa_new);
        let (idx, join) = event.expect("checked above");
        match join {
            Some(sign) => {
                if active.len() + 1 > caps.sparsity_cap {
                    path.termination = Termination::SparsityCap;
                    break;
                }
                active.push(idx);
                signs.push(sign);
                just_joined = Some(idx);
                just_dropped = None;
            }
            None => {
                let p = active.iter().position(|&i| i == idx).expect("active index");
                active.remove(p);
                signs.remove(p);
                // re-solve on the reduced set: with ill-conditioned atoms the
                // leaving coefficient is only zero up to round-off amplified
                // by the conditioning, and truncating it breaks stationarity
                x_new = match active_solution(c, w, &active, &signs, new_alpha) {
                    Some((xa, _)) => scatter(k, &active, &xa),
                    None if active.is_empty() => DVector::zeros(k),
                    None => {
                        path.termination = Termination::NumericalStall;
                        break;
                    }
                };
                just_dropped = Some(idx);
                just_joined = None;
            }
        }
        // sign consistency of the remaining coefficients
        let consistent = active
            .iter()
            .zip(&signs)
            .all(|(&i, &s)| x_new[i] == 0.0 || x_new[i].signum() == s);
        if !consistent || kkt_residual(c, w, &x_new, new_alpha) > kkt_tol {
            log::debug!(
                "LARS stall: certificate failed at alpha {new_alpha:e} (signs consistent: {consistent}, KKT {:e})",
                kkt_residual(c, w, &x_new, new_alpha)
            );
            path.termination = Termination::NumericalStall;
            break;
        }
        alpha = new_alpha;
        x = x_new;
        let support = sorted(&active);
        let is_new = !support.is_empty() && !path.supports.contains(&support);
        path.alphas.push(alpha);
        path.solutions.push(x.clone());
        path.supports.push(support);
        if is_new {
            distinct += 1;
            if distinct >= caps.max_spaces {
                path.termination = Termination::MaxSpaces;
                break;
            }
        }
        if active.is_empty() {
            // only possible through round-off; restart from the top atom
            path.termination = Termination::NumericalStall;
            break;
        }
    }
    Ok(path)
}

/// A library member: the span of the support atoms, with an orthonormal
/// basis given by `V_S T`.
#[derive(Debug, Clone, PartialEq)]
pub struct LibrarySpace {
    pub support: Vec<usize>,
    pub alpha: f64,
    /// `|S| x p` coefficients of the orthonormal basis over the support atoms.
    pub transform: DMatrix<f64>,
    /// Support atoms dropped as numerically dependent.
    pub dropped: Vec<usize>,
}

impl LibrarySpace {
    pub fn dim(&self) -> usize {
        self.transform.ncols()
    }

    /// Materialized orthonormal basis `V_S T`.
    pub fn basis(&self, dict: &Dictionary) -> Result<DMatrix<f64>> {
        Ok(dict.atoms()?.select_columns(&self.support) * &self.transform)
    }
}

/// Modified Gram-Schmidt with a second pass in the inner product defined
/// by `gram`; returns the coefficient matrix and the dropped positions.
fn gram_orthonormalize(gram: &DMatrix<f64>) -> (DMatrix<f64>, Vec<usize>) {
    let n = gram.nrows();
    // kept coefficient vectors q with their images G q, so that each
    // projection costs O(n)
    let mut kept: Vec<(DVector<f64>, DVector<f64>)> = Vec::with_capacity(n);
    let mut dropped = Vec::new();
    for i in 0..n {
        let mut t = DVector::zeros(n);
        t[i] = 1.0;
        let original = gram[(i, i)].max(0.0).sqrt();
        for _ in 0..2 {
            for (q, gq) in &kept {
                let proj = gq.dot(&t);
                t.axpy(-proj, q, 1.0);
            }
        }
        let gt = gram * &t;
        let norm = t.dot(&gt).max(0.0).sqrt();
        if norm <= GRAM_RANK_TOL * original || norm == 0.0 {
            dropped.push(i);
        } else {
            kept.push((t / norm, gt / norm));
        }
    }
    let t = if kept.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&kept.into_iter().map(|(q, _)| q).collect::<Vec<_>>())
    };
    (t, dropped)
}

/// Distinct nonempty supports in path order (earliest occurrence kept),
/// each with an orthonormal basis of its span.
pub fn path_to_library(dict: &Dictionary, path: &LassoPath) -> Vec<LibrarySpace> {
    let mut seen: Vec<&Vec<usize>> = Vec::new();
    let mut out = Vec::new();
    for (support, &alpha) in path.supports.iter().zip(&path.alphas) {
        if support.is_empty() || seen.contains(&support) {
            continue;
        }
        seen.push(support);
        let g = dict.gram.select_rows(support).select_columns(support);
        let (transform, drop_pos) = gram_orthonormalize(&g);
        out.push(LibrarySpace {
            support: support.clone(),
            alpha,
            transform,
            dropped: drop_pos.into_iter().map(|p| support[p]).collect(),
        });
    }
    out
}

/// PBDW recoveries on every well-posed library space, from `C` alone.
/// Returns the recoveries and the indices of the skipped spaces.
pub fn library_candidates(
    dict: &Dictionary,
    library: &[LibrarySpace],
    w: &DVector<f64>,
    tol: f64,
) -> Result<(Vec<RecoveryResult>, Vec<usize>)> {
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for (idx, space) in library.iter().enumerate() {
        let c = dict.cross.select_columns(&space.support) * &space.transform;
        match pbdw_reduced(&c, w, tol) {
            Ok((v, eta, beta, mu)) => out.push(RecoveryResult {
                atom_coeffs: &space.transform * &v,
                background_coeffs: v,
                correction_coeffs: eta,
                support: space.support.clone(),
                alpha: Some(space.alpha),
                surrogate_value: None,
                beta,
                mu,
                state: None,
            }),
            Err(Error::IllPosed { .. }) => skipped.push(idx),
            Err(e) => return Err(e),
        }
    }
    Ok((out, skipped))
}

/// Empty-background recovery `P_W u = W w`.
pub fn observation_only(w: &DVector<f64>) -> RecoveryResult {
    RecoveryResult {
        background_coeffs: DVector::zeros(0),
        correction_coeffs: w.clone(),
        support: Vec::new(),
        atom_coeffs: DVector::zeros(0),
        alpha: None,
        surrogate_value: None,
        beta: 1.0,
        mu: 1.0,
        state: None,
    }
}

/// Candidates of a dictionary recovery, falling back to the empty
/// background when no library space is usable.
fn candidates_or_fallback(
    dict: &Dictionary,
    library: &[LibrarySpace],
    w: &DVector<f64>,
    tol: f64,
) -> Result<(Vec<RecoveryResult>, Vec<usize>, bool)> {
    let (cands, skipped) = library_candidates(dict, library, w, tol)?;
    if cands.is_empty() {
        if !library.is_empty() {
            log::warn!("all {} library spaces are ill-posed; using the observation-only estimate", library.len());
        }
        return Ok((vec![observation_only(w)], skipped, true));
    }
    Ok((cands, skipped, false))
}

/// Everything produced while recovering one observation with the dictionary.
#[derive(Debug, Clone)]
pub struct DictRecovery {
    pub selected: RecoveryResult,
    pub selected_index: usize,
    /// All candidates with their surrogate values, in library order.
    pub candidates: Vec<RecoveryResult>,
    /// Library positions of the ill-posed spaces.
    pub skipped: Vec<usize>,
    pub fallback: bool,
    pub termination: Termination,
    pub path: LassoPath,
}

/// LARS path, library, one PBDW estimate per space and selection by the
/// sketched surrogate.
pub fn dict_recover(
    dict: &Dictionary,
    offline: &SketchedOffline,
    w: &DVector<f64>,
    caps: &LarsCaps,
) -> Result<DictRecovery> {
    let m = dict.m();
    if offline.m != m || offline.n_atoms < dict.len() {
        return Err(Error::Argument(format!(
            "sketched terms cover m = {}, K = {} but the dictionary has m = {m}, K = {}",
            offline.m,
            offline.n_atoms,
            dict.len()
        )));
    }
    dict_recover_batch(dict, w, caps, |cands| {
        // fold the observation into the blocks once for all candidates
        let mut union: Vec<usize> = cands.iter().flat_map(|c| c.support.iter().copied()).collect();
        union.sort_unstable();
        union.dedup();
        let folded = offline.condition_on(w, &dict.cross, &union)?;
        cands
            .iter()
            .map(|cand| {
                let mut a = DVector::zeros(1 + union.len());
                a[0] = 1.0;
                for (&i, &x) in cand.support.iter().zip(cand.atom_coeffs.iter()) {
                    let pos = union.binary_search(&i).expect("support is in the union");
                    a[1 + pos] = x;
                }
                Ok(surrogate_sketched(&folded, &a)?.value)
            })
            .collect()
    })
}

/// Dictionary recovery with the exact surrogate evaluated on full states.
pub fn dict_recover_exact(
    dict: &Dictionary,
    obs: &ObservationSpace,
    model: &AffineModel,
    w: &DVector<f64>,
    caps: &LarsCaps,
) -> Result<DictRecovery> {
    dict_recover_by(dict, w, caps, |cand| {
        Ok(surrogate_exact(model, &dict.state_of(obs, cand)?)?.value)
    })
}

/// Dictionary recovery with a caller-supplied surrogate.
pub fn dict_recover_by(
    dict: &Dictionary,
    w: &DVector<f64>,
    caps: &LarsCaps,
    mut surrogate: impl FnMut(&RecoveryResult) -> Result<f64>,
) -> Result<DictRecovery> {
    dict_recover_batch(dict, w, caps, |cands| cands.iter().map(&mut surrogate).collect())
}

/// Dictionary recovery with a surrogate evaluated on all candidates at
/// once, in library order.
pub fn dict_recover_batch(
    dict: &Dictionary,
    w: &DVector<f64>,
    caps: &LarsCaps,
    surrogate: impl FnOnce(&[RecoveryResult]) -> Result<Vec<f64>>,
) -> Result<DictRecovery> {
    let path = lars_path(dict, w, caps)?;
    let library = path_to_library(dict, &path);
    let (mut candidates, skipped, fallback) =
        candidates_or_fallback(dict, &library, w, caps.ill_posed_tol)?;
    let values = surrogate(&candidates)?;
    check_len("surrogate values", candidates.len(), values.len())?;
    for (cand, &s) in candidates.iter_mut().zip(&values) {
        cand.surrogate_value = Some(s);
    }
    let idx = select_space(&values)?;
    Ok(DictRecovery {
        selected: candidates[idx].clone(),
        selected_index: idx,
        candidates,
        skipped,
        fallback,
        termination: path.termination,
        path,
    })
}

/// Index and U-error of the candidate closest to the truth (smallest index
/// on ties).
pub fn best_candidate(
    space: &InnerProductSpace,
    dict: &Dictionary,
    obs: &ObservationSpace,
    candidates: &[RecoveryResult],
    truth: &DVector<f64>,
) -> Result<(usize, f64)> {
    let errors = candidates
        .iter()
        .map(|c| space.u_norm(&(truth - dict.state_of(obs, c)?)))
        .collect::<Result<Vec<_>>>()?;
    let idx = select_space(&errors)?;
    Ok((idx, errors[idx]))
}

/// The library recovery with the smallest true error (benchmark only).
pub fn best_in_library(
    space: &InnerProductSpace,
    dict: &Dictionary,
    obs: &ObservationSpace,
    library: &[LibrarySpace],
    w: &DVector<f64>,
    truth: &DVector<f64>,
) -> Result<RecoveryResult> {
    let (cands, _, _) = candidates_or_fallback(dict, library, w, ILL_POSED_TOL)?;
    let (idx, _) = best_candidate(space, dict, obs, &cands, truth)?;
    let mut best = cands[idx].clone();
    best.state = Some(dict.state_of(obs, &best)?);
    Ok(best)
}

/// Moves each atom within the observation space, `v_i + W e_i`, with
/// i.i.d. uniform `e` of size `amplitude * max|C|`, then renormalizes.
/// The returned `C` and Gram matrix are those of the renormalized atoms.
pub fn perturb_dictionary(
    dict: &Dictionary,
    obs: &ObservationSpace,
    amplitude: f64,
    seed: u64,
) -> Result<Dictionary> {
    if !(amplitude > 0.0) {
        return Err(Error::Argument(format!("perturbation amplitude must be positive, got {amplitude}")));
    }
    check_len("observation dimension", obs.m(), dict.m())?;
    let (m, k) = (dict.m(), dict.len());
    let scale = amplitude * dict.cross.amax();
    let mut rng = stream(seed, 2);
    let e = DMatrix::from_fn(m, k, |_, _| scale * rng.random_range(-1.0..1.0));
    let ce = dict.cross.tr_mul(&e);
    let gram_raw = &dict.gram + &ce + ce.transpose() + e.tr_mul(&e);
    let inv_norms = DVector::from_fn(k, |i, _| 1.0 / gram_raw[(i, i)].sqrt());
    let cross = DMatrix::from_fn(m, k, |r, i| (dict.cross[(r, i)] + e[(r, i)]) * inv_norms[i]);
    let gram = DMatrix::from_fn(k, k, |i, j| gram_raw[(i, j)] * inv_norms[i] * inv_norms[j]);
    let atoms = match &dict.atoms {
        Some(v) => {
            let mut out = v + &obs.basis().columns * &e;
            for i in 0..k {
                out.column_mut(i).scale_mut(inv_norms[i]);
            }
            Some(out)
        }
        None => None,
    };
    Ok(Dictionary {
        atoms,
        cross,
        gram,
        params: dict.params.clone(),
    })
}
