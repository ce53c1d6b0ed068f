//! Compressed sparse row storage used for Gram matrices and affine operator terms.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};

/// Square or rectangular matrix in CSR layout. Column indices are sorted
/// within each row and duplicates are merged on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: diag.to_vec(),
        }
    }

    /// Builds a matrix from coordinate triplets, summing duplicate entries.
    /// Explicit zeros produced by cancellation are kept so that patterns stay
    /// stable across parameter values.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut counts = vec![0usize; nrows];
        for &(i, j, _) in triplets {
            if i >= nrows || j >= ncols {
                return Err(Error::Argument(format!(
                    "triplet ({i}, {j}) outside a {nrows}x{ncols} matrix"
                )));
            }
            counts[i] += 1;
        }
        let mut rows: Vec<Vec<(usize, f64)>> =
            counts.iter().map(|&c| Vec::with_capacity(c)).collect();
        for &(i, j, v) in triplets {
            rows[i].push((j, v));
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            let mut iter = row.into_iter().peekable();
            while let Some((j, mut v)) = iter.next() {
                while let Some(&(jn, vn)) = iter.peek() {
                    if jn != j {
                        break;
                    }
                    v += vn;
                    iter.next();
                }
                indices.push(j);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        })
    }

    pub fn from_dense(dense: &DMatrix<f64>) -> Self {
        let mut triplets = Vec::new();
        for i in 0..dense.nrows() {
            for j in 0..dense.ncols() {
                let v = dense[(i, j)];
                if v != 0.0 {
                    triplets.push((i, j, v));
                }
            }
        }
        Self::from_triplets(dense.nrows(), dense.ncols(), &triplets)
            .expect("indices are in range by construction")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_square(&self) -> bool {
        self.nrows == self.ncols
    }

    /// Iterates over `(column, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.indptr[i]..self.indptr[i + 1];
        self.indices[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.nrows)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .collect()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.indptr[i]..self.indptr[i + 1];
        match self.indices[range.clone()].binary_search(&j) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("sparse matvec", self.ncols, x.len())?;
        Ok(DVector::from_iterator(
            self.nrows,
            (0..self.nrows).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum::<f64>()),
        ))
    }

    pub fn mul_vec_transpose(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("sparse transposed matvec", self.nrows, x.len())?;
        let mut y = DVector::zeros(self.ncols);
        for i in 0..self.nrows {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            for (j, v) in self.row(i) {
                y[j] += v * xi;
            }
        }
        Ok(y)
    }

    /// Applies the matrix to every column of `x`.
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_len("sparse matmul", self.ncols, x.nrows())?;
        let mut y = DMatrix::zeros(self.nrows, x.ncols());
        for c in 0..x.ncols() {
            let xc = x.column(c);
            let mut yc = y.column_mut(c);
            for i in 0..self.nrows {
                yc[i] = self.row(i).map(|(j, v)| v * xc[j]).sum::<f64>();
            }
        }
        Ok(y)
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &t).expect("transpose stays in range")
    }

    /// Returns `sum_k coeffs[k] * terms[k]`; all terms must share a shape.
    pub fn linear_combination(terms: &[(f64, &SparseMatrix)]) -> Result<Self> {
        let (nrows, ncols) = match terms.first() {
            Some((_, m)) => (m.nrows, m.ncols),
            None => return Err(Error::Argument("empty linear combination".into())),
        };
        let mut triplets = Vec::new();
        for (c, m) in terms {
            if m.nrows != nrows || m.ncols != ncols {
                return Err(Error::Dimension {
                    context: "sparse linear combination",
                    expected: nrows * ncols,
                    got: m.nrows * m.ncols,
                });
            }
            triplets.extend(m.triplets().into_iter().map(|(i, j, v)| (i, j, c * v)));
        }
        Self::from_triplets(nrows, ncols, &triplets)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            d[(i, j)] += v;
        }
        d
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Frobenius norm of `self - other^T`, used for symmetry checks.
    pub fn asymmetry(&self) -> f64 {
        let t = self.transpose();
        let diff = Self::linear_combination(&[(1.0, self), (-1.0, &t)])
            .expect("a matrix and its transpose share a shape when square");
        diff.frobenius_norm()
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        self.is_square() && self.asymmetry() <= rel_tol * self.frobenius_norm()
    }

    /// Lower and upper bandwidths.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut lower = 0;
        let mut upper = 0;
        for i in 0..self.nrows {
            for (j, _) in self.row(i) {
                if j < i {
                    lower = lower.max(i - j);
                } else {
                    upper = upper.max(j - i);
                }
            }
        }
        (lower, upper)
    }

    /// Symmetric permutation `P A P^T` where `perm[new] = old`.
    pub fn permute_symmetric(&self, perm: &[usize]) -> Self {
        let mut inv = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let t: Vec<_> = self
            .triplets()
            .into_iter()
            .map(|(i, j, v)| (inv[i], inv[j], v))
            .collect();
        Self::from_triplets(self.nrows, self.ncols, &t).expect("permutation stays in range")
    }

    /// Adjacency lists of the symmetrized sparsity pattern (diagonal excluded).
    pub(crate) fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nrows];
        for (i, j, _) in self.triplets() {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        for a in adj.iter_mut() {
            a.sort_unstable();
            a.dedup();
        }
        adj
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_merge_duplicates() {
        let m = SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, 2.0), (1, 0, -1.0)])
            .unwrap();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.get(1, 0), -1.0);
        assert_eq!(m.get(1, 1), 0.0);
    }

    #[test]
    fn out_of_range_triplet_rejected() {
        assert!(SparseMatrix::from_triplets(2, 2, &[(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn matvec_matches_dense() {
        let d = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, -3.0, 0.0, 4.0]);
        let s = SparseMatrix::from_dense(&d);
        let x = DVector::from_vec(vec![0.5, -1.0]);
        assert_eq!(s.mul_vec(&x).unwrap(), &d * &x);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(s.mul_vec_transpose(&y).unwrap(), d.transpose() * &y);
        assert!(s.mul_vec(&y).is_err());
    }

    #[test]
    fn permutation_roundtrip() {
        let d = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 5.0, 2.0, 0.0, 2.0, 6.0]);
        let s = SparseMatrix::from_dense(&d);
        let p = s.permute_symmetric(&[2, 0, 1]);
        assert_eq!(p.get(0, 0), 6.0);
        assert_eq!(p.get(0, 2), 2.0);
        assert!(p.is_symmetric(0.0));
        assert_eq!(s.bandwidths(), (1, 1));
    }
}
