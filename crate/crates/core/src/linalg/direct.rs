//! Direct solvers for banded sparse systems after a bandwidth-reducing
//! symmetric reordering (reverse Cuthill-McKee).

use std::collections::VecDeque;

use nalgebra::DVector;

use super::sparse::SparseMatrix;
use crate::error::{check_len, Error, Result};

/// Reverse Cuthill-McKee ordering of the symmetrized pattern. Returns
/// `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &SparseMatrix) -> Vec<usize> {
    let n = a.nrows();
    let adj = a.adjacency();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    while order.len() < n {
        // lowest-degree unvisited node, then walk to a pseudo-peripheral node
        let seed = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| (degree[i], i))
            .expect("unvisited node exists while order is incomplete");
        let mut start = seed;
        let mut ecc = 0;
        for _ in 0..4 {
            let (far, depth) = farthest(&adj, &degree, start, &visited);
            if depth <= ecc {
                break;
            }
            ecc = depth;
            start = far;
        }

        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&u| !visited[u]).collect();
            next.sort_by_key(|&u| (degree[u], u));
            for u in next {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

fn farthest(adj: &[Vec<usize>], degree: &[usize], start: usize, blocked: &[bool]) -> (usize, usize) {
    let mut dist = vec![usize::MAX; adj.len()];
    dist[start] = 0;
    let mut queue = VecDeque::from([start]);
    let mut best = (start, 0);
    while let Some(v) = queue.pop_front() {
        let d = dist[v];
        if d > best.1 || (d == best.1 && degree[v] < degree[best.0]) {
            best = (v, d);
        }
        for &u in &adj[v] {
            if !blocked[u] && dist[u] == usize::MAX {
                dist[u] = d + 1;
                queue.push_back(u);
            }
        }
    }
    best
}

/// Picks between the natural and RCM orderings, whichever has the smaller
/// bandwidth.
pub fn band_ordering(a: &SparseMatrix) -> Vec<usize> {
    let natural: Vec<usize> = (0..a.nrows()).collect();
    let rcm = reverse_cuthill_mckee(a);
    let bw = |p: &[usize]| {
        let (l, u) = a.permute_symmetric(p).bandwidths();
        l.max(u)
    };
    if bw(&rcm) < bw(&natural) {
        rcm
    } else {
        natural
    }
}

fn permute(perm: &[usize], v: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(perm.len(), perm.iter().map(|&old| v[old]))
}

fn unpermute(perm: &[usize], v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(perm.len());
    for (new, &old) in perm.iter().enumerate() {
        out[old] = v[new];
    }
    out
}

/// Cholesky factorization `P A P^T = L L^T` of an SPD matrix with banded
/// storage of `L`.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    perm: Vec<usize>,
    // row i holds L[i, i-bw..=i] at offsets 0..=bw
    lower: Vec<f64>,
}

impl BandedCholesky {
    pub fn factor(a: &SparseMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Argument("Cholesky requires a square matrix".into()));
        }
        let perm = band_ordering(a);
        Self::factor_with_ordering(a, perm)
    }

    pub fn factor_with_ordering(a: &SparseMatrix, perm: Vec<usize>) -> Result<Self> {
        let n = a.nrows();
        let pa = a.permute_symmetric(&perm);
        let (bl, bu) = pa.bandwidths();
        let bw = bl.max(bu);
        let w = bw + 1;
        let mut lower = vec![0.0; n * w];
        for i in 0..n {
            for (j, v) in pa.row(i) {
                if j <= i {
                    lower[i * w + (j + bw - i)] = v;
                }
            }
        }
        for i in 0..n {
            let i0 = i.saturating_sub(bw);
            for j in i0..=i {
                let k0 = i0.max(j.saturating_sub(bw));
                let mut s = lower[i * w + (j + bw - i)];
                for k in k0..j {
                    s -= lower[i * w + (k + bw - i)] * lower[j * w + (k + bw - j)];
                }
                if j == i {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Factorization(format!(
                            "non-positive Cholesky pivot {s:e} at row {i}"
                        )));
                    }
                    lower[i * w + bw] = s.sqrt();
                } else {
                    lower[i * w + (j + bw - i)] = s / lower[j * w + bw];
                }
            }
        }
        Ok(Self {
            n,
            bw,
            perm,
            lower,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    fn l(&self, i: usize, j: usize) -> f64 {
        self.lower[i * (self.bw + 1) + (j + self.bw - i)]
    }

    /// Solves `L y = b` in the permuted ordering.
    fn forward(&self, b: &mut DVector<f64>) {
        for i in 0..self.n {
            let mut s = b[i];
            for k in i.saturating_sub(self.bw)..i {
                s -= self.l(i, k) * b[k];
            }
            b[i] = s / self.l(i, i);
        }
    }

    /// Solves `L^T x = y` in the permuted ordering.
    fn backward(&self, y: &mut DVector<f64>) {
        for i in (0..self.n).rev() {
            let xi = y[i] / self.l(i, i);
            y[i] = xi;
            for k in i.saturating_sub(self.bw)..i {
                y[k] -= self.l(i, k) * xi;
            }
        }
    }

    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("Cholesky solve", self.n, b.len())?;
        let mut y = permute(&self.perm, b);
        self.forward(&mut y);
        self.backward(&mut y);
        Ok(unpermute(&self.perm, &y))
    }

    /// `L^{-1} P b`: the Euclidean vector whose norm is `sqrt(b^T A^{-1} b)`.
    pub fn whiten(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("Cholesky whiten", self.n, b.len())?;
        let mut y = permute(&self.perm, b);
        self.forward(&mut y);
        Ok(y)
    }

    /// `L^T P x`, so that `|L^T P x|^2 = x^T A x`.
    pub fn factor_apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("Cholesky factor apply", self.n, x.len())?;
        let px = permute(&self.perm, x);
        let mut out = DVector::zeros(self.n);
        for i in 0..self.n {
            for k in i.saturating_sub(self.bw)..=i {
                out[k] += self.l(i, k) * px[i];
            }
        }
        Ok(out)
    }

    /// The factor `Q = L^T P` as a sparse matrix.
    pub fn factor_matrix(&self) -> SparseMatrix {
        let mut t = Vec::new();
        for i in 0..self.n {
            for k in i.saturating_sub(self.bw)..=i {
                let v = self.l(i, k);
                if v != 0.0 {
                    t.push((k, self.perm[i], v));
                }
            }
        }
        SparseMatrix::from_triplets(self.n, self.n, &t).expect("factor entries in range")
    }
}

/// LU factorization with partial pivoting of a banded nonsymmetric matrix.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    perm: Vec<usize>,
    // column-major band storage, row offset kl+ku+i-j, leading dim 2kl+ku+1
    band: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandedLu {
    pub fn factor(a: &SparseMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Argument("LU requires a square matrix".into()));
        }
        let n = a.nrows();
        let perm = band_ordering(a);
        let pa = a.permute_symmetric(&perm);
        let (kl, ku) = pa.bandwidths();
        let ld = 2 * kl + ku + 1;
        let mut lu = Self {
            n,
            kl,
            ku,
            perm,
            band: vec![0.0; ld * n],
            pivots: vec![0; n],
        };
        for i in 0..n {
            for (j, v) in pa.row(i) {
                *lu.at(i, j) = v;
            }
        }
        let scale = pa.frobenius_norm().max(f64::MIN_POSITIVE);
        let reach = kl + ku;
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = lu.get(k, k).abs();
            for i in k + 1..=last {
                let v = lu.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            lu.pivots[k] = p;
            if !(best > 1e-14 * scale) {
                return Err(Error::Factorization(format!(
                    "zero pivot {best:e} in banded LU at column {k}"
                )));
            }
            let jmax = (k + reach).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let a = lu.get(k, j);
                    let b = lu.get(p, j);
                    *lu.at(k, j) = b;
                    *lu.at(p, j) = a;
                }
            }
            let pivot = lu.get(k, k);
            for i in k + 1..=last {
                let l = lu.get(i, k) / pivot;
                *lu.at(i, k) = l;
                if l == 0.0 {
                    continue;
                }
                for j in k + 1..=jmax {
                    let u = lu.get(k, j);
                    if u != 0.0 {
                        *lu.at(i, j) -= l * u;
                    }
                }
            }
        }
        Ok(lu)
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        let ld = 2 * self.kl + self.ku + 1;
        (self.kl + self.ku + i - j) + j * ld
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        if i + self.kl + self.ku < j || i > j + self.kl {
            return 0.0;
        }
        self.band[self.idx(i, j)]
    }

    fn at(&mut self, i: usize, j: usize) -> &mut f64 {
        let k = self.idx(i, j);
        &mut self.band[k]
    }

    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("LU solve", self.n, b.len())?;
        let n = self.n;
        let mut y = permute(&self.perm, b);
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                y.swap_rows(k, p);
            }
            let yk = y[k];
            if yk != 0.0 {
                for i in k + 1..=(k + self.kl).min(n - 1) {
                    y[i] -= self.get(i, k) * yk;
                }
            }
        }
        let reach = self.kl + self.ku;
        for k in (0..n).rev() {
            let mut s = y[k];
            for j in k + 1..=(k + reach).min(n - 1) {
                s -= self.get(k, j) * y[j];
            }
            y[k] = s / self.get(k, k);
        }
        Ok(unpermute(&self.perm, &y))
    }
}

/// Factorization of a general square sparse matrix: Cholesky when symmetric
/// and positive definite, banded LU otherwise.
#[derive(Debug, Clone)]
pub enum SparseFactor {
    Cholesky(BandedCholesky),
    Lu(BandedLu),
}

impl SparseFactor {
    pub fn factor(a: &SparseMatrix) -> Result<Self> {
        if a.is_symmetric(1e-14) {
            if let Ok(c) = BandedCholesky::factor(a) {
                return Ok(Self::Cholesky(c));
            }
        }
        BandedLu::factor(a).map(Self::Lu)
    }

    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Self::Cholesky(c) => c.solve(b),
            Self::Lu(lu) => lu.solve(b),
        }
    }
}
