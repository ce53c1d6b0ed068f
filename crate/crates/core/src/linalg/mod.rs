//! U-weighted linear algebra: inner products, dual norms, Riesz maps,
//! orthonormalization, projections and snapshot POD.

pub mod direct;
pub mod io;
pub mod sparse;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub use direct::{BandedCholesky, BandedLu, SparseFactor};
pub use sparse::SparseMatrix;

use crate::error::{check_len, Error, Result};

/// Default relative tolerance below which a direction is treated as
/// numerically dependent.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorKind {
    Cholesky,
    Custom,
}

/// The state space `R^N` with the inner product `<a, b>_U = a^T R_U b`.
///
/// The Cholesky factorization of `R_U` is always computed since dual norms
/// and Riesz representers need solves. The factor `Q` with `Q^T Q = R_U`
/// used by the sketches is either `L^T P` from that factorization or a
/// user-supplied rectangular matrix.
#[derive(Debug, Clone)]
pub struct InnerProductSpace {
    gram: SparseMatrix,
    chol: BandedCholesky,
    custom_factor: Option<SparseMatrix>,
    rank_tol: f64,
}

impl InnerProductSpace {
    pub fn new(gram: SparseMatrix) -> Result<Self> {
        if !gram.is_square() || gram.nrows() == 0 {
            return Err(Error::Argument("Gram matrix must be square and nonempty".into()));
        }
        if !gram.is_symmetric(1e-12) {
            return Err(Error::Argument(format!(
                "Gram matrix is not symmetric (asymmetry {:e})",
                gram.asymmetry()
            )));
        }
        let chol = BandedCholesky::factor(&gram)?;
        Ok(Self {
            gram,
            chol,
            custom_factor: None,
            rank_tol: RANK_TOL,
        })
    }

    /// Replaces the sketching factor by `q` (s x N). The only check made is
    /// `|Q^T Q - R_U|_F <= 1e-10 |R_U|_F`.
    pub fn with_custom_factor(mut self, q: SparseMatrix) -> Result<Self> {
        check_len("custom factor columns", self.dim(), q.ncols())?;
        let qtq = q.to_dense().transpose() * q.to_dense();
        let diff = (qtq - self.gram.to_dense()).norm();
        if diff > 1e-10 * self.gram.frobenius_norm() {
            return Err(Error::Argument(format!(
                "custom factor violates Q^T Q = R_U (deviation {diff:e})"
            )));
        }
        self.custom_factor = Some(q);
        Ok(self)
    }

    pub fn with_rank_tol(mut self, tol: f64) -> Self {
        self.rank_tol = tol;
        self
    }

    pub fn rank_tol(&self) -> f64 {
        self.rank_tol
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    pub fn gram(&self) -> &SparseMatrix {
        &self.gram
    }

    pub fn factor_kind(&self) -> FactorKind {
        if self.custom_factor.is_some() {
            FactorKind::Custom
        } else {
            FactorKind::Cholesky
        }
    }

    /// Number of rows `s` of the factor `Q`.
    pub fn factor_rows(&self) -> usize {
        self.custom_factor
            .as_ref()
            .map_or(self.dim(), SparseMatrix::nrows)
    }

    /// The factor `Q` as a sparse matrix.
    pub fn factor_matrix(&self) -> SparseMatrix {
        match &self.custom_factor {
            Some(q) => q.clone(),
            None => self.chol.factor_matrix(),
        }
    }

    pub fn apply_gram(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.gram.mul_vec(v)
    }

    pub fn u_inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
        check_len("u_inner", self.dim(), a.len())?;
        Ok(a.dot(&self.gram.mul_vec(b)?))
    }

    pub fn u_norm(&self, v: &DVector<f64>) -> Result<f64> {
        Ok(self.u_inner(v, v)?.max(0.0).sqrt())
    }

    /// `sqrt(r^T R_U^{-1} r)` from one forward triangular solve.
    pub fn dual_norm(&self, r: &DVector<f64>) -> Result<f64> {
        Ok(self.chol.whiten(r)?.norm())
    }

    /// Solves `R_U x = ell`.
    pub fn riesz(&self, ell: &DVector<f64>) -> Result<DVector<f64>> {
        self.chol.solve(ell)
    }

    /// `Q v`, an isometry from `(R^N, <.,.>_U)` into Euclidean `R^s`.
    pub fn factor_apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.custom_factor {
            Some(q) => q.mul_vec(v),
            None => self.chol.factor_apply(v),
        }
    }

    /// `Q R_U^{-1} r`, an isometry from `(R^N, <.,.>_{U'})` into `R^s`.
    pub fn dual_whiten(&self, r: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.custom_factor {
            Some(q) => q.mul_vec(&self.chol.solve(r)?),
            None => self.chol.whiten(r),
        }
    }

    /// Column-wise [`Self::factor_apply`].
    pub fn factor_apply_columns(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        map_columns(m, self.factor_rows(), |c| self.factor_apply(c))
    }

    /// Column-wise [`Self::dual_whiten`].
    pub fn dual_whiten_columns(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        map_columns(m, self.factor_rows(), |c| self.dual_whiten(c))
    }

    /// `A^T R_U B` for two column blocks.
    pub fn cross_gram(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_len("cross_gram", self.dim(), a.nrows())?;
        let rb = self.gram.mul_dense(b)?;
        Ok(a.transpose() * rb)
    }

    /// Modified Gram-Schmidt in the U inner product with a second full
    /// orthogonalization pass. Columns whose norm after projection falls
    /// below `rank_tol` times their original norm are dropped; their indices
    /// are returned.
    pub fn u_orthonormalize(&self, basis: &BasisMatrix) -> Result<(BasisMatrix, Vec<usize>)> {
        let cols = &basis.columns;
        check_len("u_orthonormalize", self.dim(), cols.nrows())?;
        let mut kept: Vec<DVector<f64>> = Vec::new();
        let mut kept_r: Vec<DVector<f64>> = Vec::new();
        let mut dropped = Vec::new();
        for j in 0..cols.ncols() {
            let mut v: DVector<f64> = cols.column(j).into_owned();
            let norm0 = self.u_norm(&v)?;
            if norm0 == 0.0 {
                dropped.push(j);
                continue;
            }
            for _pass in 0..2 {
                for (q, rq) in kept.iter().zip(&kept_r) {
                    let c = rq.dot(&v);
                    v.axpy(-c, q, 1.0);
                }
            }
            let norm = self.u_norm(&v)?;
            if norm <= self.rank_tol * norm0 {
                dropped.push(j);
                continue;
            }
            v /= norm;
            kept_r.push(self.apply_gram(&v)?);
            kept.push(v);
        }
        if !dropped.is_empty() {
            log::debug!("u_orthonormalize dropped {} dependent columns", dropped.len());
        }
        let columns = if kept.is_empty() {
            DMatrix::zeros(self.dim(), 0)
        } else {
            DMatrix::from_columns(&kept)
        };
        Ok((
            BasisMatrix {
                columns,
                u_orthonormal: true,
            },
            dropped,
        ))
    }

    /// `P_V u = V (V^T R_U u)` for a U-orthonormal `V`.
    pub fn project(&self, basis: &BasisMatrix, u: &DVector<f64>) -> Result<DVector<f64>> {
        if !basis.u_orthonormal {
            return Err(Error::Argument("projection needs a U-orthonormal basis".into()));
        }
        check_len("project", self.dim(), u.len())?;
        if basis.ncols() == 0 {
            return Ok(DVector::zeros(self.dim()));
        }
        let coeffs = basis.columns.transpose() * self.apply_gram(u)?;
        Ok(&basis.columns * coeffs)
    }

    /// Proper orthogonal decomposition by the method of snapshots: the
    /// eigendecomposition of the U-Gram matrix of the snapshots. Returns at
    /// most `n_max` U-orthonormal modes with nonincreasing singular values;
    /// eigenvalues below `rank_tol` times the largest are discarded.
    pub fn pod(&self, snapshots: &BasisMatrix, n_max: usize) -> Result<(BasisMatrix, Vec<f64>)> {
        let s = &snapshots.columns;
        if n_max > s.ncols() {
            return Err(Error::Argument(format!(
                "n_max = {n_max} exceeds the {} snapshots",
                s.ncols()
            )));
        }
        let m = self.cross_gram(s, s)?;
        let m = (&m + m.transpose()) * 0.5;
        let eig = SymmetricEigen::new(m);
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let lmax = order.first().map_or(0.0, |&i| eig.eigenvalues[i]).max(0.0);
        let mut modes = Vec::new();
        let mut svals = Vec::new();
        for &i in order.iter().take(n_max) {
            let lambda = eig.eigenvalues[i];
            if lmax == 0.0 || lambda <= self.rank_tol * lmax {
                break;
            }
            let sigma = lambda.sqrt();
            modes.push(s * eig.eigenvectors.column(i) / sigma);
            svals.push(sigma);
        }
        let raw = BasisMatrix::new(if modes.is_empty() {
            DMatrix::zeros(self.dim(), 0)
        } else {
            DMatrix::from_columns(&modes)
        });
        // Gram-Schmidt in mode order keeps the nested spans and repairs the
        // orthogonality lost for small eigenvalues.
        let (basis, dropped) = self.u_orthonormalize(&raw)?;
        let svals = svals
            .into_iter()
            .enumerate()
            .filter(|(i, _)| !dropped.contains(i))
            .map(|(_, s)| s)
            .collect();
        Ok((basis, svals))
    }
}

fn map_columns<F>(m: &DMatrix<f64>, rows: usize, f: F) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut out = DMatrix::zeros(rows, m.ncols());
    for j in 0..m.ncols() {
        let c = f(&m.column(j).into_owned())?;
        out.set_column(j, &c);
    }
    Ok(out)
}

/// A block of state vectors stored as matrix columns.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    pub columns: DMatrix<f64>,
    pub u_orthonormal: bool,
}

impl BasisMatrix {
    pub fn new(columns: DMatrix<f64>) -> Self {
        Self {
            columns,
            u_orthonormal: false,
        }
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            columns: DMatrix::zeros(dim, 0),
            u_orthonormal: true,
        }
    }

    pub fn from_vectors(dim: usize, vectors: &[DVector<f64>]) -> Self {
        if vectors.is_empty() {
            return Self::new(DMatrix::zeros(dim, 0));
        }
        Self::new(DMatrix::from_columns(vectors))
    }

    pub fn ncols(&self) -> usize {
        self.columns.ncols()
    }

    pub fn dim(&self) -> usize {
        self.columns.nrows()
    }

    /// First `n` columns.
    pub fn leading(&self, n: usize) -> Self {
        Self {
            columns: self.columns.columns(0, n).into_owned(),
            u_orthonormal: self.u_orthonormal,
        }
    }

    /// `|V^T R_U V - I|_F`.
    pub fn orthonormality_defect(&self, space: &InnerProductSpace) -> Result<f64> {
        let g = space.cross_gram(&self.columns, &self.columns)?;
        Ok((g - DMatrix::identity(self.ncols(), self.ncols())).norm())
    }
}

/// Smallest singular value of `m` counting structural zeros: a matrix with
/// more columns than rows has `sigma_min = 0`.
pub fn sigma_min(m: &DMatrix<f64>) -> f64 {
    if m.ncols() == 0 {
        return f64::INFINITY;
    }
    if m.nrows() < m.ncols() {
        return 0.0;
    }
    m.singular_values().min()
}

/// Minimum-norm least-squares solution of `a x = b` via SVD, truncating
/// singular values below `rel_tol * sigma_max`.
pub fn lstsq_min_norm(a: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = (rel_tol * smax).max(f64::MIN_POSITIVE);
    svd.solve(b, eps).expect("both factors were requested")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd_space(n: usize, seed: u64) -> InnerProductSpace {
        // tridiagonal SPD with random positive weights
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Vec::new();
        for i in 0..n {
            let w: f64 = rng.random_range(0.5..2.0);
            t.push((i, i, 2.0 * w + 0.5));
            if i + 1 < n {
                t.push((i, i + 1, -w * 0.9));
                t.push((i + 1, i, -w * 0.9));
            }
        }
        InnerProductSpace::new(SparseMatrix::from_triplets(n, n, &t).unwrap()).unwrap()
    }

    fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_and_diagonal_inner_products() {
        let id = InnerProductSpace::new(SparseMatrix::identity(2)).unwrap();
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(id.u_inner(&e1, &e1).unwrap(), 1.0);
        let d = InnerProductSpace::new(SparseMatrix::from_diagonal(&[4.0, 1.0])).unwrap();
        assert_eq!(d.u_inner(&e1, &e1).unwrap(), 4.0);
        assert!(d.u_inner(&e1, &DVector::zeros(3)).is_err());
        // dual norm with analytic inverse
        let r = DVector::from_vec(vec![2.0, 0.0]);
        assert!((d.dual_norm(&r).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(d.dual_norm(&DVector::zeros(2)).unwrap(), 0.0);
    }

    #[test]
    fn riesz_scaled_identity() {
        let s = InnerProductSpace::new(SparseMatrix::from_diagonal(&[2.0; 5])).unwrap();
        let mut e3 = DVector::zeros(5);
        e3[2] = 1.0;
        let x = s.riesz(&e3).unwrap();
        assert!((x[2] - 0.5).abs() < 1e-15);
        assert_eq!(s.riesz(&DVector::zeros(5)).unwrap(), DVector::zeros(5));
    }

    #[test]
    fn inner_product_matches_dense_factor() {
        let s = random_spd_space(50, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_vec(50, &mut rng);
        let b = random_vec(50, &mut rng);
        let q = s.factor_matrix().to_dense();
        let oracle = (&q * &a).dot(&(&q * &b));
        let got = s.u_inner(&a, &b).unwrap();
        assert!((got - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));
        assert!((got - s.u_inner(&b, &a).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn dual_norm_matches_dense_solve() {
        let s = random_spd_space(50, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = random_vec(50, &mut rng);
        let dense = s.gram().to_dense();
        let x = dense.lu().solve(&r).unwrap();
        let oracle = r.dot(&x).sqrt();
        assert!((s.dual_norm(&r).unwrap() - oracle).abs() <= 1e-10 * oracle);
        let rz = s.riesz(&r).unwrap();
        let res = s.apply_gram(&rz).unwrap() - &r;
        assert!(res.norm() <= 1e-10 * r.norm());
        assert!((s.u_norm(&rz).unwrap() - oracle).abs() <= 1e-10 * oracle);
    }

    #[test]
    fn orthonormalize_cases() {
        let s = random_spd_space(50, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let v = random_vec(50, &mut rng);
        let v = &v / s.u_norm(&v).unwrap();
        let (b, dropped) = s.u_orthonormalize(&BasisMatrix::from_vectors(50, &[v.clone()])).unwrap();
        assert!(dropped.is_empty());
        assert!((b.columns.column(0) - &v).norm() < 1e-14);

        let (b, dropped) = s
            .u_orthonormalize(&BasisMatrix::from_vectors(50, &[v.clone(), v.clone()]))
            .unwrap();
        assert_eq!(b.ncols(), 1);
        assert_eq!(dropped, vec![1]);

        let cols: Vec<_> = (0..5).map(|_| random_vec(50, &mut rng)).collect();
        let (b, _) = s.u_orthonormalize(&BasisMatrix::from_vectors(50, &cols)).unwrap();
        assert_eq!(b.ncols(), 5);
        assert!(b.orthonormality_defect(&s).unwrap() <= 1e-10);
    }

    #[test]
    fn projection_properties() {
        let s = random_spd_space(40, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cols: Vec<_> = (0..4).map(|_| random_vec(40, &mut rng)).collect();
        let (v, _) = s.u_orthonormalize(&BasisMatrix::from_vectors(40, &cols)).unwrap();
        let inside = &v.columns * DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        assert!((s.project(&v, &inside).unwrap() - &inside).norm() <= 1e-12 * inside.norm());
        let u = random_vec(40, &mut rng);
        let pu = s.project(&v, &u).unwrap();
        let res = &u - &pu;
        for j in 0..4 {
            let c = s.u_inner(&res, &v.columns.column(j).into_owned()).unwrap();
            assert!(c.abs() <= 1e-10 * s.u_norm(&u).unwrap());
        }
        let nu = s.u_norm(&u).unwrap().powi(2);
        let pyth = s.u_norm(&pu).unwrap().powi(2) + s.u_norm(&res).unwrap().powi(2);
        assert!((nu - pyth).abs() <= 1e-10 * nu);
        assert_eq!(s.project(&BasisMatrix::empty(40), &u).unwrap(), DVector::zeros(40));
        assert!(s.project(&BasisMatrix::from_vectors(40, &cols), &u).is_err());
    }

    #[test]
    fn pod_single_repeated_snapshot() {
        let s = random_spd_space(20, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random_vec(20, &mut rng);
        let snaps = BasisMatrix::from_vectors(20, &[x.clone(), x.clone(), x.clone()]);
        let (modes, sv) = s.pod(&snaps, 3).unwrap();
        assert_eq!(modes.ncols(), 1);
        let expect = &x / s.u_norm(&x).unwrap();
        let m = modes.columns.column(0).into_owned();
        let aligned = if m.dot(&expect) < 0.0 { -m } else { m };
        assert!((aligned - expect).norm() < 1e-10);
        assert_eq!(sv.len(), 1);
        assert!(s.pod(&snaps, 4).is_err());
    }

    #[test]
    fn pod_of_orthonormal_pair_has_equal_singular_values() {
        let s = random_spd_space(20, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cols: Vec<_> = (0..2).map(|_| random_vec(20, &mut rng)).collect();
        let (v, _) = s.u_orthonormalize(&BasisMatrix::from_vectors(20, &cols)).unwrap();
        let (modes, sv) = s.pod(&v, 2).unwrap();
        assert_eq!(sv.len(), 2);
        assert!((sv[0] - sv[1]).abs() < 1e-12);
        // same span: projecting the originals loses nothing
        for j in 0..2 {
            let c = v.columns.column(j).into_owned();
            let r = &c - s.project(&modes, &c).unwrap();
            assert!(s.u_norm(&r).unwrap() < 1e-10);
        }
    }

    #[test]
    fn pod_projection_error_nonincreasing() {
        let s = random_spd_space(100, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let cols: Vec<_> = (0..20).map(|_| random_vec(100, &mut rng)).collect();
        let snaps = BasisMatrix::from_vectors(100, &cols);
        let (modes, sv) = s.pod(&snaps, 20).unwrap();
        assert!(sv.windows(2).all(|w| w[0] >= w[1]));
        assert!(modes.orthonormality_defect(&s).unwrap() <= 1e-10 * (modes.ncols() as f64).sqrt());
        for c in &cols {
            let mut prev = f64::INFINITY;
            for n in 0..=modes.ncols() {
                let r = c - s.project(&modes.leading(n), c).unwrap();
                let e = s.u_norm(&r).unwrap();
                assert!(e <= prev + 1e-12);
                prev = e;
            }
        }
    }

    #[test]
    fn custom_factor_checked() {
        let s = InnerProductSpace::new(SparseMatrix::from_diagonal(&[4.0, 9.0])).unwrap();
        // rectangular factor with a zero row
        let q = SparseMatrix::from_triplets(3, 2, &[(0, 0, 2.0), (2, 1, 3.0)]).unwrap();
        let s2 = s.clone().with_custom_factor(q).unwrap();
        assert_eq!(s2.factor_kind(), FactorKind::Custom);
        let v = DVector::from_vec(vec![1.0, 1.0]);
        assert!((s2.factor_apply(&v).unwrap().norm_squared() - 13.0).abs() < 1e-14);
        let r = DVector::from_vec(vec![1.0, 1.0]);
        let dn = s2.dual_norm(&r).unwrap();
        assert!((s2.dual_whiten(&r).unwrap().norm() - dn).abs() < 1e-14);
        let bad = SparseMatrix::from_diagonal(&[1.0, 1.0]);
        assert!(s.with_custom_factor(bad).is_err());
    }

    #[test]
    fn min_norm_lstsq_and_sigma_min() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let x = lstsq_min_norm(&a, &b, 1e-14);
        assert!((x - DVector::from_vec(vec![1.0, 2.0])).norm() < 1e-14);
        assert_eq!(sigma_min(&DMatrix::zeros(1, 2)), 0.0);
        assert!((sigma_min(&a) - 1.0).abs() < 1e-14);
    }
}
