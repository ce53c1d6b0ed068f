use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use pbdw_core::dictionary::{kkt_residual, lars_path, path_to_library, Dictionary, LarsCaps};
use pbdw_core::estimator::{box_ls_solve, build_observation, pbdw_recover, select_space};
use pbdw_core::linalg::{BasisMatrix, InnerProductSpace, SparseMatrix};
use pbdw_core::model::{AffineModel, CoefficientMap, ParameterBox};
use proptest::prelude::*;

fn tridiag(diag: &[f64], off: &[f64]) -> InnerProductSpace {
    let n = diag.len();
    let mut t = Vec::new();
    for i in 0..n {
        // diagonal dominance keeps the matrix SPD
        t.push((i, i, 2.0 + diag[i]));
        if i + 1 < n {
            t.push((i, i + 1, -off[i]));
            t.push((i + 1, i, -off[i]));
        }
    }
    InnerProductSpace::new(SparseMatrix::from_triplets(n, n, &t).unwrap()).unwrap()
}

fn space_strategy(n: usize) -> impl Strategy<Value = InnerProductSpace> {
    (
        prop::collection::vec(0.0..1.0f64, n),
        prop::collection::vec(0.0..1.0f64, n - 1),
    )
        .prop_map(|(d, o)| tridiag(&d, &o))
}

fn vec_strategy(n: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-1.0..1.0f64, n).prop_map(DVector::from_vec)
}

fn mat_strategy(r: usize, c: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0..1.0f64, r * c).prop_map(move |v| DMatrix::from_vec(r, c, v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pythagoras_and_idempotence(space in space_strategy(20), b in mat_strategy(20, 4), u in vec_strategy(20)) {
        let (v, _) = space.u_orthonormalize(&BasisMatrix::new(b)).unwrap();
        let p = space.project(&v, &u).unwrap();
        let pp = space.project(&v, &p).unwrap();
        let nu = space.u_norm(&u).unwrap();
        prop_assert!((&p - &pp).norm() <= 1e-10 * nu.max(1e-300));
        let lhs = nu * nu;
        let rhs = space.u_norm(&p).unwrap().powi(2) + space.u_norm(&(&u - &p)).unwrap().powi(2);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs);
    }

    #[test]
    fn dual_norm_is_riesz_norm(space in space_strategy(15), r in vec_strategy(15)) {
        let d = space.dual_norm(&r).unwrap();
        let x = space.riesz(&r).unwrap();
        prop_assert!((d - space.u_norm(&x).unwrap()).abs() <= 1e-10 * d.max(1e-300));
    }

    #[test]
    fn observation_consistency(space in space_strategy(25), s in mat_strategy(25, 6), b in mat_strategy(25, 3), u in vec_strategy(25)) {
        let sensors: Vec<_> = s.column_iter().map(|c| c.into_owned()).collect();
        let obs = build_observation(&space, &sensors).unwrap();
        let (v, _) = space.u_orthonormalize(&BasisMatrix::new(b)).unwrap();
        let w = obs.observe(&space, &u).unwrap();
        if let Ok(r) = pbdw_recover(&space, &obs, &v, &w) {
            let back = obs.observe(&space, r.state.as_ref().unwrap()).unwrap();
            prop_assert!((back - &w).norm() <= 1e-10 * w.norm().max(1e-300));
        }
    }

    #[test]
    fn separated_form_reconstructs_residual(v in vec_strategy(10), xi in prop::collection::vec(0.5..2.0f64, 3)) {
        let n = 10;
        let lap = SparseMatrix::from_triplets(n, n, &(0..n).flat_map(|i| {
            let mut t = vec![(i, i, 2.0)];
            if i + 1 < n { t.push((i, i + 1, -1.0)); t.push((i + 1, i, -1.0)); }
            t
        }).collect::<Vec<_>>()).unwrap();
        let mass = SparseMatrix::identity(n);
        let adv = SparseMatrix::from_triplets(n, n, &(0..n - 1).flat_map(|i| [(i, i + 1, 0.5), (i + 1, i, -0.5)]).collect::<Vec<_>>()).unwrap();
        let model = AffineModel::new(
            Arc::new(InnerProductSpace::new(lap.clone()).unwrap()),
            vec![lap, mass, adv],
            vec![DVector::from_element(n, 1.0), DVector::from_fn(n, |i, _| i as f64)],
            ParameterBox::uniform(vec![(0.5, 2.0); 3]).unwrap(),
            CoefficientMap::Identity,
        ).unwrap();
        let sep = model.separated(&v).unwrap();
        let theta = model.theta(&xi).unwrap();
        let direct = model.residual(&v, &xi).unwrap();
        prop_assert!((sep.residual(&theta) - &direct).norm() <= 1e-12 * direct.norm().max(1.0));
    }

    #[test]
    fn box_ls_is_feasible_and_first_order_optimal(a in mat_strategy(12, 3), b in vec_strategy(12)) {
        let pbox = ParameterBox::uniform(vec![(-0.2, 0.3), (0.0, 1.0), (-1.0, -0.5)]).unwrap();
        let s = box_ls_solve(&a, &b, &pbox);
        prop_assert!(pbox.contains(s.theta.as_slice()));
        prop_assert!(s.converged);
        prop_assert!((s.value - (&a * &s.theta - &b).norm()).abs() <= 1e-14);
        // no vertex of the box does better
        for corner in pbox.corners() {
            let c = DVector::from_vec(corner);
            prop_assert!(s.value <= (&a * c - &b).norm() + 1e-12);
        }
    }

    #[test]
    fn lars_breakpoints_are_certified(c in mat_strategy(10, 25), w in vec_strategy(10)) {
        let dict = Dictionary { atoms: None, gram: c.tr_mul(&c), cross: c, params: vec![vec![]; 25] };
        let caps = LarsCaps::defaults(10, 25);
        let path = lars_path(&dict, &w, &caps).unwrap();
        for (x, &alpha) in path.solutions.iter().zip(&path.alphas) {
            prop_assert!(kkt_residual(&dict.cross, &w, x, alpha) <= 1e-8 * path.alpha0);
        }
        for w in path.alphas.windows(2) {
            prop_assert!(w[1] < w[0]);
        }
        for space in path_to_library(&dict, &path) {
            prop_assert!(space.support.len() <= caps.sparsity_cap);
        }
    }

    #[test]
    fn selection_is_leftmost_argmin(values in prop::collection::vec(0.0..10.0f64, 1..20)) {
        let i = select_space(&values).unwrap();
        prop_assert!(values.iter().all(|&v| v >= values[i]));
        prop_assert!(values[..i].iter().all(|&v| v > values[i]));
    }
}
