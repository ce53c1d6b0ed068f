use nalgebra::DVector;
use pbdw_core::dictionary::build_dictionary;
use pbdw_core::estimator::{build_observation, stability_constants, surrogate_exact};
use pbdw_core::linalg::BasisMatrix;
use pbdw_core::problems::{
    sample_parameters, sensors_radial, thermal_block, SensorPattern, SensorSpec,
    DEFAULT_SENSOR_WIDTH,
};

#[test]
fn sixty_four_sensors_are_independent() {
    let p = thermal_block(33).unwrap();
    let spec = SensorSpec::from_pattern(&SensorPattern::M64, DEFAULT_SENSOR_WIDTH).unwrap();
    let sensors = sensors_radial(&p.mesh, &spec);
    let obs = build_observation(p.space(), &sensors).unwrap();
    assert_eq!(obs.m(), 64);
    assert!(obs.basis().orthonormality_defect(p.space()).unwrap() <= 1e-10 * 8.0);
}

#[test]
fn dictionary_cross_matrix_matches_inner_products() {
    let p = thermal_block(33).unwrap();
    let space = p.space();
    let spec = SensorSpec::from_pattern(&SensorPattern::M36, DEFAULT_SENSOR_WIDTH).unwrap();
    let obs = build_observation(space, &sensors_radial(&p.mesh, &spec)).unwrap();
    let params = sample_parameters(p.model.parameter_box(), 200, 17).unwrap();
    let snaps: Vec<_> = params.iter().map(|xi| p.model.solve_state(xi).unwrap()).collect();
    let dict = build_dictionary(space, &obs, &snaps, &params, 200).unwrap();
    let atoms = dict.atoms.as_ref().unwrap();
    for k in (0..200).step_by(7) {
        let v: DVector<f64> = atoms.column(k).into_owned();
        assert!((space.u_norm(&v).unwrap() - 1.0).abs() <= 1e-10);
        for i in 0..obs.m() {
            let wi: DVector<f64> = obs.basis().columns.column(i).into_owned();
            let direct = space.u_inner(&wi, &v).unwrap();
            assert!((direct - dict.cross[(i, k)]).abs() <= 1e-12);
        }
    }
}

#[test]
fn pod_constants_are_monotone() {
    let p = thermal_block(33).unwrap();
    let space = p.space();
    let spec = SensorSpec::from_pattern(&SensorPattern::M36, DEFAULT_SENSOR_WIDTH).unwrap();
    let obs = build_observation(space, &sensors_radial(&p.mesh, &spec)).unwrap();
    let params = sample_parameters(p.model.parameter_box(), 100, 3).unwrap();
    let snaps: Vec<_> = params.iter().map(|xi| p.model.solve_state(xi).unwrap()).collect();
    let (modes, sv) = space.pod(&BasisMatrix::from_vectors(space.dim(), &snaps), 36).unwrap();
    assert!(sv.windows(2).all(|w| w[1] <= w[0]));
    let mut prev = 0.0;
    for n in 1..=modes.ncols() {
        let (_, mu) = stability_constants(space, &obs, &modes.leading(n)).unwrap();
        assert!(mu >= prev * (1.0 - 1e-12));
        prev = mu;
    }
}

#[test]
fn exact_surrogate_is_equivalent_to_the_distance() {
    // on the manifold the surrogate vanishes; off it, it is bounded by
    // multiples of the distance to the closest manifold point
    let p = thermal_block(9).unwrap();
    let space = p.space();
    let xi = vec![0.3, 0.5, 0.7, 0.2, 0.9, 0.4, 0.6, 0.25, 0.8];
    let u = p.model.solve_state(&xi).unwrap();
    let f = &p.model.rhs_terms()[0];
    let s0 = surrogate_exact(&p.model, &u).unwrap();
    assert!(s0.value <= 1e-8 * space.dual_norm(f).unwrap());
    for (a, b) in s0.xi.iter().zip(&xi) {
        assert!((a - b).abs() <= 1e-6);
    }
    let z = DVector::from_fn(space.dim(), |i, _| ((i * 7 % 11) as f64 - 5.0) * 1e-3);
    let s = surrogate_exact(&p.model, &(&u + &z)).unwrap();
    // R(v, xi) with xi fixed at the truth is an upper bound for S
    assert!(s.value <= p.model.residual_norm(&(&u + &z), &xi).unwrap() * (1.0 + 1e-12));
    // the coercivity constant of B(xi') is at least min(xi') = 0.1
    let dist_upper = space.u_norm(&z).unwrap();
    let v = &u + &z;
    let u_star = p.model.solve_state(s.xi.as_slice()).unwrap();
    let dist_star = space.u_norm(&(&v - &u_star)).unwrap();
    assert!(s.value >= 0.1 * dist_star * (1.0 - 1e-10));
    assert!(s.value <= dist_upper * (1.0 + 1e-10));
}
