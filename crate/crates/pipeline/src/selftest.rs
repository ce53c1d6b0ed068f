//! Quick invariant checks runnable from the CLI without the test harness.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use pbdw_core::dictionary::{kkt_residual, lars_path, Dictionary, LarsCaps};
use pbdw_core::estimator::{
    box_ls_solve, build_observation, pbdw_recover, sketched_offline, surrogate_exact,
    surrogate_sketched,
};
use pbdw_core::linalg::BasisMatrix;
use pbdw_core::model::ParameterBox;
use pbdw_core::problems::{
    advection_diffusion_lite, sample_parameters, sensors_radial, thermal_block, Problem,
    SensorPattern, SensorSpec, DEFAULT_KAPPA, DEFAULT_SENSOR_WIDTH,
};
use pbdw_core::sketch::{EmbeddingSpec, UEmbedding};

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Seeded draws on `[-1, 1]`.
fn uniform(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let b = ParameterBox::uniform(vec![(-1.0, 1.0); rows]).expect("valid box");
    let draws = b.sample(cols, seed);
    DMatrix::from_fn(rows, cols, |i, j| draws[j][i])
}

fn check(name: &'static str, f: impl FnOnce() -> pbdw_core::Result<(bool, String)>) -> Check {
    match f() {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check {
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}

fn observation_consistency(p: &Problem) -> pbdw_core::Result<(bool, String)> {
    let space = p.space();
    let spec = SensorSpec::from_pattern(&SensorPattern::M9, DEFAULT_SENSOR_WIDTH)?;
    let obs = build_observation(space, &sensors_radial(&p.mesh, &spec))?;
    let params = sample_parameters(p.model.parameter_box(), 4, 11)?;
    let snaps = params.iter().map(|xi| p.model.solve_state(xi)).collect::<pbdw_core::Result<Vec<_>>>()?;
    let (v, _) = space.u_orthonormalize(&BasisMatrix::from_vectors(space.dim(), &snaps[..3]))?;
    let w = obs.observe(space, &snaps[3])?;
    let r = pbdw_recover(space, &obs, &v, &w)?;
    let back = obs.observe(space, r.state.as_ref().expect("full recovery"))?;
    let dev = (back - &w).norm() / w.norm();
    Ok((dev <= 1e-10, format!("relative deviation {dev:.2e}")))
}

fn manifold_zero(p: &Problem) -> pbdw_core::Result<(bool, String)> {
    let space = p.space();
    let mut worst: f64 = 0.0;
    for xi in sample_parameters(p.model.parameter_box(), 3, 12)? {
        let u = p.model.solve_state(&xi)?;
        let fnorm = space.dual_norm(&p.model.assemble(&xi)?.1)?;
        worst = worst.max(surrogate_exact(&p.model, &u)?.value / fnorm);
    }
    Ok((worst <= 1e-8, format!("max S / |f| = {worst:.2e}")))
}

fn lars_kkt() -> pbdw_core::Result<(bool, String)> {
    let c = uniform(10, 30, 13);
    let w = uniform(10, 1, 14).column(0).into_owned();
    let dict = Dictionary {
        atoms: None,
        gram: c.tr_mul(&c),
        cross: c,
        params: vec![Vec::new(); 30],
    };
    let path = lars_path(&dict, &w, &LarsCaps::defaults(10, 30))?;
    let worst = path
        .solutions
        .iter()
        .zip(&path.alphas)
        .map(|(x, &a)| kkt_residual(&dict.cross, &w, x, a))
        .fold(0.0, f64::max);
    Ok((worst <= 1e-8 * path.alpha0, format!("{} breakpoints, worst KKT {worst:.2e}", path.len())))
}

fn sketch_consistency(p: &Problem) -> pbdw_core::Result<(bool, String)> {
    let space = p.space();
    let spec = SensorSpec::from_pattern(&SensorPattern::M9, DEFAULT_SENSOR_WIDTH)?;
    let obs = build_observation(space, &sensors_radial(&p.mesh, &spec))?;
    let params = sample_parameters(p.model.parameter_box(), 5, 15)?;
    let snaps = params.iter().map(|xi| p.model.solve_state(xi)).collect::<pbdw_core::Result<Vec<_>>>()?;
    let atoms = DMatrix::from_columns(&snaps);
    let emb = UEmbedding::realize(EmbeddingSpec::gaussian(200, space.factor_rows(), 16), Arc::clone(space))?;
    let off = sketched_offline(&p.model, &obs, &atoms, &emb)?;
    let a = uniform(obs.m() + 5, 1, 17).column(0).into_owned();
    let v = &obs.basis().columns * a.rows(0, obs.m()) + &atoms * a.rows(obs.m(), 5);
    let s = surrogate_sketched(&off, &a)?;
    let direct = emb.sketch_dual(&p.model.residual(&v, s.xi.as_slice())?)?.norm();
    let dev = (s.value - direct).abs() / direct.max(1e-300);
    Ok((dev <= 1e-10, format!("relative deviation {dev:.2e}")))
}

fn box_ls_corners() -> pbdw_core::Result<(bool, String)> {
    let a = uniform(15, 4, 18);
    let b = uniform(15, 1, 19).column(0).into_owned();
    let pbox = ParameterBox::uniform(vec![(-0.1, 0.2); 4])?;
    let s = box_ls_solve(&a, &b, &pbox);
    let best_corner = pbox
        .corners()
        .into_iter()
        .map(|c| (&a * DVector::from_vec(c) - &b).norm())
        .fold(f64::INFINITY, f64::min);
    let ok = s.converged && pbox.contains(s.theta.as_slice()) && s.value <= best_corner + 1e-12;
    Ok((ok, format!("value {:.6e}, best corner {best_corner:.6e}", s.value)))
}

/// Runs all checks on small problem instances.
pub fn selftest() -> Vec<Check> {
    let thermal = thermal_block(9);
    let adv = advection_diffusion_lite(33, DEFAULT_KAPPA);
    let mut out = Vec::new();
    match (&thermal, &adv) {
        (Ok(t), Ok(a)) => {
            out.push(check("observation consistency", || observation_consistency(t)));
            out.push(check("zero surrogate, thermal block", || manifold_zero(t)));
            out.push(check("zero surrogate, advection-diffusion", || manifold_zero(a)));
            out.push(check("sketched blocks match direct sketch", || sketch_consistency(t)));
        }
        _ => out.push(Check {
            name: "problem generators",
            passed: false,
            detail: "failed to build the test problems".into(),
        }),
    }
    out.push(check("LARS breakpoints satisfy KKT", lars_kkt));
    out.push(check("box least squares beats every corner", box_ls_corners));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in selftest() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
