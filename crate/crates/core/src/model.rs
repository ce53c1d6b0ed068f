//! Affine parameter-dependent operator equations `B(xi) u = f(xi)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{InnerProductSpace, SparseFactor, SparseMatrix};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingLaw {
    Uniform,
    LogUniform,
}

/// A product of closed intervals with a per-coordinate sampling law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterBox {
    intervals: Vec<(f64, f64)>,
    laws: Vec<SamplingLaw>,
}

const BOX_SLACK: f64 = 1e-14;

impl ParameterBox {
    pub fn new(intervals: Vec<(f64, f64)>, laws: Vec<SamplingLaw>) -> Result<Self> {
        check_len("parameter box laws", intervals.len(), laws.len())?;
        if intervals.is_empty() {
            return Err(Error::Argument("parameter box needs at least one coordinate".into()));
        }
        for (q, (&(lo, hi), law)) in intervals.iter().zip(&laws).enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Argument(format!(
                    "coordinate {q}: interval [{lo}, {hi}] must be bounded with lo < hi"
                )));
            }
            if *law == SamplingLaw::LogUniform && lo <= 0.0 {
                return Err(Error::Argument(format!(
                    "coordinate {q}: log-uniform sampling needs lo > 0, got {lo}"
                )));
            }
        }
        Ok(Self { intervals, laws })
    }

    pub fn uniform(intervals: Vec<(f64, f64)>) -> Result<Self> {
        let laws = vec![SamplingLaw::Uniform; intervals.len()];
        Self::new(intervals, laws)
    }

    pub fn log_uniform(intervals: Vec<(f64, f64)>) -> Result<Self> {
        let laws = vec![SamplingLaw::LogUniform; intervals.len()];
        Self::new(intervals, laws)
    }

    pub fn dim(&self) -> usize {
        self.intervals.len()
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn laws(&self) -> &[SamplingLaw] {
        &self.laws
    }

    pub fn lower(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.intervals.iter().map(|i| i.0))
    }

    pub fn upper(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.intervals.iter().map(|i| i.1))
    }

    pub fn center(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.intervals.iter().map(|(l, h)| 0.5 * (l + h)))
    }

    /// Inclusive membership with a `1e-14` slack scaled by the bound.
    pub fn contains(&self, xi: &[f64]) -> bool {
        xi.len() == self.dim()
            && xi.iter().zip(&self.intervals).all(|(&x, &(lo, hi))| {
                x >= lo - BOX_SLACK * lo.abs().max(1.0) && x <= hi + BOX_SLACK * hi.abs().max(1.0)
            })
    }

    pub fn clamp(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            x.iter().zip(&self.intervals).map(|(&v, &(lo, hi))| v.clamp(lo, hi)),
        )
    }

    /// Every corner of the box, in binary counting order.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        (0..1u64 << d)
            .map(|mask| {
                (0..d)
                    .map(|q| {
                        let (lo, hi) = self.intervals[q];
                        if mask >> q & 1 == 1 {
                            hi
                        } else {
                            lo
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// `count` i.i.d. draws, coordinate by coordinate, from the declared laws.
    pub fn sample(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = stream(seed, 0);
        (0..count)
            .map(|_| {
                self.intervals
                    .iter()
                    .zip(&self.laws)
                    .map(|(&(lo, hi), law)| {
                        let u: f64 = rng.random();
                        match law {
                            SamplingLaw::Uniform => lo + u * (hi - lo),
                            SamplingLaw::LogUniform => {
                                (lo.ln() + u * (hi.ln() - lo.ln())).exp().clamp(lo, hi)
                            }
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Operator and right-hand-side coefficients `theta^B(xi)`, `theta^f(xi)`.
pub type CoefficientHook = Arc<dyn Fn(&[f64]) -> (Vec<f64>, Vec<f64>) + Send + Sync>;

#[derive(Clone)]
pub enum CoefficientMap {
    /// `theta(xi) = xi`: the first `m_B` coordinates weight the operator
    /// terms, the remaining `m_f` weight the right-hand-side terms.
    Identity,
    Custom(CoefficientHook),
}

impl fmt::Debug for CoefficientMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Identity => write!(f, "Identity"),
            Self::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// `B(xi) = B0 + sum_q theta^B_q(xi) B_q`, `f(xi) = f0 + sum_q theta^f_q(xi) f_q`.
#[derive(Debug, Clone)]
pub struct AffineModel {
    space: Arc<InnerProductSpace>,
    operator_terms: Vec<SparseMatrix>,
    rhs_terms: Vec<DVector<f64>>,
    parameter_box: ParameterBox,
    coefficients: CoefficientMap,
}

impl AffineModel {
    /// `operator_terms[0]` and `rhs_terms[0]` are the constant terms.
    pub fn new(
        space: Arc<InnerProductSpace>,
        operator_terms: Vec<SparseMatrix>,
        rhs_terms: Vec<DVector<f64>>,
        parameter_box: ParameterBox,
        coefficients: CoefficientMap,
    ) -> Result<Self> {
        let n = space.dim();
        if operator_terms.is_empty() || rhs_terms.is_empty() {
            return Err(Error::Argument("constant operator and rhs terms are required".into()));
        }
        for b in &operator_terms {
            if b.nrows() != n || b.ncols() != n {
                return Err(Error::Dimension {
                    context: "operator term",
                    expected: n,
                    got: b.nrows().max(b.ncols()),
                });
            }
        }
        for f in &rhs_terms {
            check_len("rhs term", n, f.len())?;
        }
        let model = Self {
            space,
            operator_terms,
            rhs_terms,
            parameter_box,
            coefficients,
        };
        if let CoefficientMap::Identity = model.coefficients {
            check_len(
                "identity coefficient map (m_B + m_f)",
                model.theta_dim(),
                model.parameter_box.dim(),
            )?;
        }
        Ok(model)
    }

    pub fn space(&self) -> &Arc<InnerProductSpace> {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn m_b(&self) -> usize {
        self.operator_terms.len() - 1
    }

    pub fn m_f(&self) -> usize {
        self.rhs_terms.len() - 1
    }

    /// Length of the stacked coefficient vector `m_B + m_f`.
    pub fn theta_dim(&self) -> usize {
        self.m_b() + self.m_f()
    }

    pub fn operator_terms(&self) -> &[SparseMatrix] {
        &self.operator_terms
    }

    pub fn rhs_terms(&self) -> &[DVector<f64>] {
        &self.rhs_terms
    }

    pub fn parameter_box(&self) -> &ParameterBox {
        &self.parameter_box
    }

    pub fn coefficients(&self) -> &CoefficientMap {
        &self.coefficients
    }

    pub fn has_identity_coefficients(&self) -> bool {
        matches!(self.coefficients, CoefficientMap::Identity)
    }

    fn check_parameter(&self, xi: &[f64]) -> Result<()> {
        if !self.parameter_box.contains(xi) {
            return Err(Error::Domain(format!("parameter {xi:?} lies outside the box")));
        }
        Ok(())
    }

    /// Operator then rhs coefficients, stacked.
    pub fn theta(&self, xi: &[f64]) -> Result<DVector<f64>> {
        self.check_parameter(xi)?;
        let (tb, tf) = match &self.coefficients {
            CoefficientMap::Identity => (xi[..self.m_b()].to_vec(), xi[self.m_b()..].to_vec()),
            CoefficientMap::Custom(hook) => hook(xi),
        };
        check_len("theta^B", self.m_b(), tb.len())?;
        check_len("theta^f", self.m_f(), tf.len())?;
        Ok(DVector::from_iterator(self.theta_dim(), tb.into_iter().chain(tf)))
    }

    pub fn assemble(&self, xi: &[f64]) -> Result<(SparseMatrix, DVector<f64>)> {
        let theta = self.theta(xi)?;
        let mb = self.m_b();
        let mut terms: Vec<(f64, &SparseMatrix)> = vec![(1.0, &self.operator_terms[0])];
        terms.extend((0..mb).map(|q| (theta[q], &self.operator_terms[q + 1])));
        let b = SparseMatrix::linear_combination(&terms)?;
        let mut f = self.rhs_terms[0].clone();
        for q in 0..self.m_f() {
            f.axpy(theta[mb + q], &self.rhs_terms[q + 1], 1.0);
        }
        Ok((b, f))
    }

    /// Sparse direct solve of `B(xi) u = f(xi)` with one step of iterative
    /// refinement; fails unless `|B u - f| <= 1e-10 |f|`.
    pub fn solve_state(&self, xi: &[f64]) -> Result<DVector<f64>> {
        let (b, f) = self.assemble(xi)?;
        let fnorm = f.norm();
        if fnorm == 0.0 {
            return Ok(DVector::zeros(self.dim()));
        }
        let model_err = |reason: String| Error::Model {
            xi: xi.to_vec(),
            reason,
        };
        let factor = SparseFactor::factor(&b).map_err(|e| model_err(e.to_string()))?;
        let mut u = factor.solve(&f)?;
        let r = &f - b.mul_vec(&u)?;
        u += factor.solve(&r)?;
        let res = (b.mul_vec(&u)? - &f).norm();
        if !(res <= 1e-10 * fnorm) {
            return Err(model_err(format!("solver residual {:e} too large", res / fnorm)));
        }
        Ok(u)
    }

    /// `r(v, xi) = B(xi) v - f(xi)`.
    pub fn residual(&self, v: &DVector<f64>, xi: &[f64]) -> Result<DVector<f64>> {
        check_len("residual state", self.dim(), v.len())?;
        let (b, f) = self.assemble(xi)?;
        Ok(b.mul_vec(v)? - f)
    }

    /// `R(v, xi) = |r(v, xi)|_{U'}`.
    pub fn residual_norm(&self, v: &DVector<f64>, xi: &[f64]) -> Result<f64> {
        self.space.dual_norm(&self.residual(v, xi)?)
    }

    /// The residual in separated form `r(v, xi) = G(v) theta(xi) - g(v)`.
    pub fn separated(&self, v: &DVector<f64>) -> Result<SeparatedResidual> {
        check_len("separated residual state", self.dim(), v.len())?;
        let n = self.dim();
        let mut g_mat = DMatrix::zeros(n, self.theta_dim());
        for q in 0..self.m_b() {
            g_mat.set_column(q, &self.operator_terms[q + 1].mul_vec(v)?);
        }
        for q in 0..self.m_f() {
            g_mat.set_column(self.m_b() + q, &(-&self.rhs_terms[q + 1]));
        }
        let g = &self.rhs_terms[0] - self.operator_terms[0].mul_vec(v)?;
        Ok(SeparatedResidual { g_mat, g })
    }
}

/// `G(v)` (operator columns `B_q v`, then rhs columns `-f_q`) and
/// `g(v) = f0 - B0 v`.
#[derive(Debug, Clone)]
pub struct SeparatedResidual {
    pub g_mat: DMatrix<f64>,
    pub g: DVector<f64>,
}

impl SeparatedResidual {
    pub fn residual(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.g_mat * theta - &self.g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// 1D Poisson Gram with two conductivity halves and one extra rhs term.
    fn toy_model(n: usize) -> AffineModel {
        let mut t0 = Vec::new();
        let mut t1 = Vec::new();
        let mut t2 = Vec::new();
        for e in 0..=n {
            // element between nodes e-1 and e (nodes 0..n interior)
            let target = if e <= n / 2 { &mut t1 } else { &mut t2 };
            let nodes = [e.checked_sub(1), (e < n).then_some(e)];
            for a in nodes.iter().flatten() {
                for b in nodes.iter().flatten() {
                    target.push((*a, *b, if a == b { 1.0 } else { -1.0 }));
                }
            }
        }
        for i in 0..n {
            t0.push((i, i, 0.0));
        }
        let b1 = SparseMatrix::from_triplets(n, n, &t1).unwrap();
        let b2 = SparseMatrix::from_triplets(n, n, &t2).unwrap();
        let gram = SparseMatrix::linear_combination(&[(1.0, &b1), (1.0, &b2)]).unwrap();
        let space = Arc::new(InnerProductSpace::new(gram).unwrap());
        let f0 = DVector::from_element(n, 1.0);
        let f1 = DVector::from_fn(n, |i, _| (i as f64 / n as f64).sin());
        AffineModel::new(
            space,
            vec![SparseMatrix::from_triplets(n, n, &t0).unwrap(), b1, b2],
            vec![f0, f1],
            ParameterBox::uniform(vec![(0.5, 2.0), (0.5, 2.0), (-1.0, 1.0)]).unwrap(),
            CoefficientMap::Identity,
        )
        .unwrap()
    }

    #[test]
    fn box_validation_and_membership() {
        assert!(ParameterBox::uniform(vec![(1.0, 1.0)]).is_err());
        assert!(ParameterBox::log_uniform(vec![(0.0, 1.0)]).is_err());
        let b = ParameterBox::uniform(vec![(-1.0, -0.5)]).unwrap();
        assert!(b.contains(&[-0.5]));
        assert!(b.contains(&[-0.5 + 1e-15]));
        assert!(!b.contains(&[0.0]));
        assert!(!b.contains(&[-0.7, 0.0]));
        assert!(b.sample(1000, 3).iter().all(|x| b.contains(x)));
    }

    #[test]
    fn log_uniform_median() {
        let b = ParameterBox::log_uniform(vec![(0.1, 1.0)]).unwrap();
        let mut s: Vec<f64> = b.sample(100_000, 42).into_iter().map(|x| x[0]).collect();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = 0.5 * (s[49_999] + s[50_000]);
        let expect = 0.1f64.sqrt();
        assert!((median - expect).abs() <= 0.02 * expect, "median {median}");
        assert_eq!(b.sample(5, 1), b.sample(5, 1));
    }

    #[test]
    fn assemble_is_sum_of_scaled_terms() {
        let m = toy_model(12);
        let xi = [1.3, 0.7, 0.25];
        let (b, f) = m.assemble(&xi).unwrap();
        let oracle = m.operator_terms()[0].to_dense()
            + m.operator_terms()[1].to_dense() * 1.3
            + m.operator_terms()[2].to_dense() * 0.7;
        assert!((b.to_dense() - oracle).abs().max() <= 1e-14);
        let fo = &m.rhs_terms()[0] + &m.rhs_terms()[1] * 0.25;
        assert!((f - fo).abs().max() <= 1e-14);
        assert!(m.assemble(&[3.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn unit_coefficients_recover_gram() {
        let m = toy_model(10);
        let (b, _) = m.assemble(&[1.0, 1.0, 0.0]).unwrap();
        assert!((b.to_dense() - m.space().gram().to_dense()).norm() == 0.0);
    }

    #[test]
    fn state_solve_and_zero_residual() {
        let m = toy_model(30);
        for xi in m.parameter_box().sample(5, 7) {
            let u = m.solve_state(&xi).unwrap();
            let (_, f) = m.assemble(&xi).unwrap();
            let fdual = m.space().dual_norm(&f).unwrap();
            assert!(m.residual_norm(&u, &xi).unwrap() <= 1e-9 * fdual);
        }
    }

    #[test]
    fn separated_reconstruction() {
        let m = toy_model(20);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for xi in m.parameter_box().sample(50, 8) {
            let v = DVector::from_fn(20, |_, _| rng.random_range(-1.0..1.0));
            let sep = m.separated(&v).unwrap();
            let theta = m.theta(&xi).unwrap();
            let direct = m.residual(&v, &xi).unwrap();
            let diff = (sep.residual(&theta) - &direct).norm();
            assert!(diff <= 1e-12 * direct.norm().max(1.0));
        }
        let sep0 = m.separated(&DVector::zeros(20)).unwrap();
        assert_eq!(sep0.g, m.rhs_terms()[0]);
        assert_eq!(sep0.g_mat.column(0).norm(), 0.0);
        assert_eq!(sep0.g_mat.column(2).into_owned(), -&m.rhs_terms()[1]);
    }

    #[test]
    fn residual_sandwich_by_operator_singular_values() {
        let m = toy_model(20);
        let xi = [0.6, 1.8, -0.4];
        let u = m.solve_state(&xi).unwrap();
        let (b, _) = m.assemble(&xi).unwrap();
        // singular values of L^{-1} B L^{-T} via dense whitening
        let q = m.space().factor_matrix().to_dense();
        let qinv = q.clone().try_inverse().unwrap();
        let k = qinv.transpose() * b.to_dense() * &qinv;
        let sv = k.singular_values();
        let (c, cc) = (sv.min(), sv.max());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let z = DVector::from_fn(20, |_, _| rng.random_range(-1.0..1.0));
            let r = m.residual_norm(&(&u + &z), &xi).unwrap();
            let e = m.space().u_norm(&z).unwrap();
            assert!(r >= c * e * (1.0 - 1e-10) && r <= cc * e * (1.0 + 1e-10));
            // linearity in the error
            let r2 = m.residual_norm(&(&u + &z * 2.0), &xi).unwrap();
            assert!((r2 - 2.0 * r).abs() <= 1e-10 * r);
        }
    }

    #[test]
    fn squared_residual_is_quadratic_in_theta() {
        // with theta in R^3, a quadratic has C(5, 2) = 10 coefficients
        let m = toy_model(15);
        let v = DVector::from_fn(15, |i, _| (i as f64 * 0.7).cos());
        let lo = m.parameter_box().lower();
        let hi = m.parameter_box().upper();
        let basis = |t: &DVector<f64>| {
            vec![
                1.0, t[0], t[1], t[2], t[0] * t[0], t[1] * t[1], t[2] * t[2], t[0] * t[1],
                t[0] * t[2], t[1] * t[2],
            ]
        };
        let pts = m.parameter_box().sample(10, 77);
        let a = DMatrix::from_fn(10, 10, |i, j| basis(&DVector::from_vec(pts[i].clone()))[j]);
        let y = DVector::from_fn(10, |i, _| m.residual_norm(&v, &pts[i]).unwrap().powi(2));
        let coef = a.lu().solve(&y).unwrap();
        for xi in m.parameter_box().sample(10, 78) {
            let t = DVector::from_vec(xi.clone());
            let pred: f64 = basis(&t).iter().zip(coef.iter()).map(|(b, c)| b * c).sum();
            let actual = m.residual_norm(&v, &xi).unwrap().powi(2);
            assert!((pred - actual).abs() <= 1e-8 * actual.max(1.0));
        }
        let _ = (lo, hi);
    }

    #[test]
    fn zero_rhs_gives_zero_state() {
        let m = toy_model(8);
        let model = AffineModel::new(
            m.space().clone(),
            m.operator_terms().to_vec(),
            vec![DVector::zeros(8), DVector::zeros(8)],
            m.parameter_box().clone(),
            CoefficientMap::Identity,
        )
        .unwrap();
        assert_eq!(model.solve_state(&[1.0, 1.0, 0.0]).unwrap(), DVector::zeros(8));
    }
}
