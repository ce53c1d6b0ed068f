//! Desk-scale problem generators on the unit square: the nine-block thermal
//! problem, a simplified advection-diffusion problem and radial sensors.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{InnerProductSpace, SparseMatrix};
use crate::model::{AffineModel, CoefficientMap, ParameterBox};

/// Structured triangulation of `(0,1)^2` with `n_h` cells per side. Each
/// square cell `[i,i+1]x[j,j+1]` is split along its `(i,j)-(i+1,j+1)`
/// diagonal. Boundary nodes carry homogeneous Dirichlet conditions and are
/// eliminated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridMesh {
    pub n_h: usize,
}

/// One triangle with its vertex node indices `(i, j)` in the lattice.
#[derive(Debug, Clone, Copy)]
pub struct Triangle {
    pub nodes: [(usize, usize); 3],
    pub coords: [[f64; 2]; 3],
}

impl Triangle {
    pub fn area(&self) -> f64 {
        0.5 * self.signed_det().abs()
    }

    fn signed_det(&self) -> f64 {
        let [p0, p1, p2] = self.coords;
        (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1])
    }

    pub fn centroid(&self) -> [f64; 2] {
        let [p0, p1, p2] = self.coords;
        [(p0[0] + p1[0] + p2[0]) / 3.0, (p0[1] + p1[1] + p2[1]) / 3.0]
    }

    /// Gradients of the three barycentric hat functions.
    pub fn gradients(&self) -> [[f64; 2]; 3] {
        let [p0, p1, p2] = self.coords;
        let d = self.signed_det();
        [
            [(p1[1] - p2[1]) / d, (p2[0] - p1[0]) / d],
            [(p2[1] - p0[1]) / d, (p0[0] - p2[0]) / d],
            [(p0[1] - p1[1]) / d, (p1[0] - p0[0]) / d],
        ]
    }

    /// Barycentric coordinates of `x`.
    pub fn barycentric(&self, x: [f64; 2]) -> [f64; 3] {
        let g = self.gradients();
        let p0 = self.coords[0];
        let dx = [x[0] - p0[0], x[1] - p0[1]];
        let l1 = g[1][0] * dx[0] + g[1][1] * dx[1];
        let l2 = g[2][0] * dx[0] + g[2][1] * dx[1];
        [1.0 - l1 - l2, l1, l2]
    }
}

impl GridMesh {
    pub fn new(n_h: usize) -> Result<Self> {
        if n_h < 2 {
            return Err(Error::Argument(format!("mesh needs at least 2 cells per side, got {n_h}")));
        }
        Ok(Self { n_h })
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n_h as f64
    }

    pub fn n_dofs(&self) -> usize {
        (self.n_h - 1) * (self.n_h - 1)
    }

    pub fn node_coords(&self, i: usize, j: usize) -> [f64; 2] {
        [i as f64 * self.h(), j as f64 * self.h()]
    }

    /// Degree of freedom of lattice node `(i, j)`, `None` on the boundary.
    pub fn dof(&self, i: usize, j: usize) -> Option<usize> {
        let n = self.n_h;
        (i > 0 && j > 0 && i < n && j < n).then(|| (j - 1) * (n - 1) + (i - 1))
    }

    pub fn dof_coords(&self, dof: usize) -> [f64; 2] {
        let n = self.n_h - 1;
        self.node_coords(dof % n + 1, dof / n + 1)
    }

    pub fn triangles(&self) -> impl Iterator<Item = Triangle> + '_ {
        let n = self.n_h;
        (0..n).flat_map(move |j| {
            (0..n).flat_map(move |i| {
                let lower = [(i, j), (i + 1, j), (i + 1, j + 1)];
                let upper = [(i, j), (i + 1, j + 1), (i, j + 1)];
                [lower, upper].into_iter().map(move |nodes| Triangle {
                    nodes,
                    coords: nodes.map(|(a, b)| self.node_coords(a, b)),
                })
            })
        })
    }

    pub fn n_triangles(&self) -> usize {
        2 * self.n_h * self.n_h
    }

    fn dofs_of(&self, t: &Triangle) -> [Option<usize>; 3] {
        t.nodes.map(|(i, j)| self.dof(i, j))
    }

    /// Stiffness matrix `int k grad u . grad v` with `k` constant per triangle.
    pub fn stiffness(&self, conductivity: impl Fn(&Triangle) -> f64) -> Result<SparseMatrix> {
        let mut trip = Vec::new();
        for t in self.triangles() {
            let k = conductivity(&t);
            if k == 0.0 {
                continue;
            }
            let g = t.gradients();
            let area = t.area();
            let dofs = self.dofs_of(&t);
            for a in 0..3 {
                let Some(r) = dofs[a] else { continue };
                for b in 0..3 {
                    let Some(c) = dofs[b] else { continue };
                    trip.push((r, c, k * area * (g[a][0] * g[b][0] + g[a][1] * g[b][1])));
                }
            }
        }
        SparseMatrix::from_triplets(self.n_dofs(), self.n_dofs(), &trip)
    }

    /// Advection matrix `int (c . grad u) v` with `c` constant per triangle;
    /// rows are test functions, columns trial functions.
    pub fn advection(&self, field: impl Fn(&Triangle) -> [f64; 2]) -> Result<SparseMatrix> {
        let mut trip = Vec::new();
        for t in self.triangles() {
            let c = field(&t);
            let g = t.gradients();
            let area = t.area();
            let dofs = self.dofs_of(&t);
            for b in 0..3 {
                let Some(col) = dofs[b] else { continue };
                let v = area / 3.0 * (c[0] * g[b][0] + c[1] * g[b][1]);
                for row in dofs.iter().flatten() {
                    trip.push((*row, col, v));
                }
            }
        }
        SparseMatrix::from_triplets(self.n_dofs(), self.n_dofs(), &trip)
    }

    /// Load vector of a source evaluated at each triangle centroid.
    pub fn load(&self, source: impl Fn([f64; 2]) -> f64) -> DVector<f64> {
        let mut f = DVector::zeros(self.n_dofs());
        for t in self.triangles() {
            let s = source(t.centroid());
            if s == 0.0 {
                continue;
            }
            for d in self.dofs_of(&t).iter().flatten() {
                f[*d] += s * t.area() / 3.0;
            }
        }
        f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    ThermalBlock,
    AdvectionDiffusionLite,
}

/// A generated problem: mesh plus affine model (which owns the space).
#[derive(Debug, Clone)]
pub struct Problem {
    pub kind: ProblemKind,
    pub mesh: GridMesh,
    pub model: AffineModel,
    /// Diffusion coefficient, only meaningful for advection-diffusion.
    pub kappa: Option<f64>,
}

impl Problem {
    pub fn space(&self) -> &Arc<InnerProductSpace> {
        self.model.space()
    }
}

/// Block index (row-major from the bottom-left, 3x3 layout) of a point.
fn block_of(x: [f64; 2]) -> usize {
    let bx = ((3.0 * x[0]) as usize).min(2);
    let by = ((3.0 * x[1]) as usize).min(2);
    3 * by + bx
}

/// Nine-block thermal problem: `-div(k grad u) = 1` with conductivity
/// `xi_q` on block `q`, `U` normed by the unit-conductivity stiffness.
pub fn thermal_block(n_h: usize) -> Result<Problem> {
    if n_h % 3 != 0 || n_h == 0 {
        return Err(Error::Argument(format!(
            "thermal block needs n_h divisible by 3 so blocks align with cells, got {n_h}"
        )));
    }
    let mesh = GridMesh::new(n_h)?;
    let n = mesh.n_dofs();
    let blocks = (0..9)
        .map(|q| mesh.stiffness(|t| if block_of(t.centroid()) == q { 1.0 } else { 0.0 }))
        .collect::<Result<Vec<_>>>()?;
    let mut terms = vec![SparseMatrix::zeros(n, n)];
    terms.extend(blocks);
    // same summation order as `assemble` at xi = 1, so the two agree bitwise
    let gram = SparseMatrix::linear_combination(
        &terms.iter().map(|t| (1.0, t)).collect::<Vec<_>>(),
    )?;
    let space = Arc::new(InnerProductSpace::new(gram)?);
    let f0 = mesh.load(|_| 1.0);
    let pbox = ParameterBox::log_uniform(vec![(0.1, 1.0); 9])?;
    let model = AffineModel::new(space, terms, vec![f0], pbox, CoefficientMap::Identity)?;
    Ok(Problem {
        kind: ProblemKind::ThermalBlock,
        mesh,
        model,
        kappa: None,
    })
}

/// Stream-function exponents `psi = x^a y^b` of the ten advection fields.
pub const ADVECTION_MODES: [(i32, i32); 10] = [
    (0, 1),
    (1, 0),
    (1, 1),
    (2, 0),
    (0, 2),
    (2, 1),
    (1, 2),
    (3, 0),
    (0, 3),
    (2, 2),
];

/// Peak speed of each normalized advection field on the unit square.
pub const ADVECTION_PEAK: f64 = 0.08;

/// Divergence-free field `(psi_y, -psi_x)` of mode `q`, scaled so that its
/// maximum speed on the unit square equals [`ADVECTION_PEAK`].
pub fn advection_field(q: usize, x: [f64; 2]) -> [f64; 2] {
    let (a, b) = ADVECTION_MODES[q];
    let (af, bf) = (a as f64, b as f64);
    // both components are monotone in x and y, so the peak sits at (1, 1)
    let scale = ADVECTION_PEAK / (af * af + bf * bf).sqrt();
    let pw = |t: f64, e: i32| if e <= 0 { 1.0 } else { t.powi(e) };
    let cx = if b > 0 { bf * pw(x[0], a) * pw(x[1], b - 1) } else { 0.0 };
    let cy = if a > 0 { -af * pw(x[0], a - 1) * pw(x[1], b) } else { 0.0 };
    [scale * cx, scale * cy]
}

pub const DEFAULT_KAPPA: f64 = 0.01;

/// Largest cell Peclet number `|c| h / (2 kappa)` over all box corners,
/// evaluated at triangle centroids.
pub fn max_cell_peclet(mesh: &GridMesh, pbox: &ParameterBox, kappa: f64) -> f64 {
    let corners = pbox.corners();
    let mut peak: f64 = 0.0;
    for t in mesh.triangles() {
        let c = t.centroid();
        let fields: Vec<[f64; 2]> = (0..10).map(|q| advection_field(q, c)).collect();
        for xi in &corners {
            let (mut vx, mut vy) = (0.0, 0.0);
            for (q, f) in fields.iter().enumerate() {
                vx += xi[q] * f[0];
                vy += xi[q] * f[1];
            }
            peak = peak.max(vx.hypot(vy));
        }
    }
    peak * mesh.h() / (2.0 * kappa)
}

/// Simplified advection-diffusion problem on the unit square:
/// `-kappa lap u + (sum_q xi_q c_q) . grad u = s` with a disc source of
/// radius 0.1 at the center and unit mass.
pub fn advection_diffusion_lite(n_h: usize, kappa: f64) -> Result<Problem> {
    if n_h < 8 {
        return Err(Error::Argument(format!("advection-diffusion needs n_h >= 8, got {n_h}")));
    }
    if !(kappa > 0.0) {
        return Err(Error::Argument(format!("kappa must be positive, got {kappa}")));
    }
    let mesh = GridMesh::new(n_h)?;
    let mut intervals = vec![(-1.0, -0.5); 5];
    intervals.extend(vec![(-2.0, -1.0); 5]);
    let pbox = ParameterBox::uniform(intervals)?;
    let peclet = max_cell_peclet(&mesh, &pbox, kappa);
    if peclet >= 2.0 {
        return Err(Error::Argument(format!(
            "cell Peclet number {peclet:.3} >= 2 for n_h = {n_h}, kappa = {kappa}; refine the mesh"
        )));
    }
    let stiff = mesh.stiffness(|_| 1.0)?;
    let mut terms = vec![SparseMatrix::linear_combination(&[(kappa, &stiff)])?];
    for q in 0..10 {
        terms.push(mesh.advection(|t| advection_field(q, t.centroid()))?);
    }
    let space = Arc::new(InnerProductSpace::new(stiff)?);
    let radius: f64 = 0.1;
    let strength = 1.0 / (std::f64::consts::PI * radius * radius);
    let f0 = mesh.load(|x| {
        if (x[0] - 0.5).hypot(x[1] - 0.5) <= radius {
            strength
        } else {
            0.0
        }
    });
    let model = AffineModel::new(space, terms, vec![f0], pbox, CoefficientMap::Identity)?;
    Ok(Problem {
        kind: ProblemKind::AdvectionDiffusionLite,
        mesh,
        model,
        kappa: Some(kappa),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorPattern {
    M64,
    M36,
    M9,
    Custom(Vec<[f64; 2]>),
}

pub const DEFAULT_SENSOR_WIDTH: f64 = 1.0 / 64.0;

impl SensorPattern {
    pub fn name(&self) -> &'static str {
        match self {
            Self::M64 => "m64",
            Self::M36 => "m36",
            Self::M9 => "m9",
            Self::Custom(_) => "custom",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "m64" => Some(Self::M64),
            "m36" => Some(Self::M36),
            "m9" => Some(Self::M9),
            _ => None,
        }
    }

    /// Sensor centers, ordered with `i` (x index) fastest.
    pub fn locations(&self) -> Vec<[f64; 2]> {
        let grid = |idx: &[usize]| {
            idx.iter()
                .flat_map(|&j| idx.iter().map(move |&i| [i as f64 / 9.0, j as f64 / 9.0]))
                .collect()
        };
        match self {
            Self::M64 => grid(&[1, 2, 3, 4, 5, 6, 7, 8]),
            Self::M36 => grid(&[1, 2, 4, 5, 7, 8]),
            Self::M9 => grid(&[1, 4, 7]),
            Self::Custom(points) => points.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub locations: Vec<[f64; 2]>,
    pub width: f64,
}

impl SensorSpec {
    pub fn new(locations: Vec<[f64; 2]>, width: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(Error::Argument(format!("sensor width must be positive, got {width}")));
        }
        for p in &locations {
            if !(p[0] > 0.0 && p[0] < 1.0 && p[1] > 0.0 && p[1] < 1.0) {
                return Err(Error::Argument(format!("sensor location {p:?} is not interior")));
            }
        }
        Ok(Self { locations, width })
    }

    pub fn from_pattern(pattern: &SensorPattern, width: f64) -> Result<Self> {
        Self::new(pattern.locations(), width)
    }
}

/// Subdivision level of the composite centroid rule: sub-triangles are at
/// most a quarter of the sensor width across.
pub fn sensor_subdivision(mesh: &GridMesh, width: f64) -> usize {
    ((4.0 * mesh.h() / width).ceil() as usize).max(4)
}

/// Dual vectors `l_i(phi_d) = int exp(-|x - x_i|^2 / s^2) phi_d dx` by the
/// composite centroid rule on each triangle regularly split into
/// `levels^2` pieces. Triangles farther than `6 s` from the center are
/// skipped (the weight there is below `e^-36`).
pub fn sensors_radial_with(mesh: &GridMesh, spec: &SensorSpec, levels: usize) -> Vec<DVector<f64>> {
    let s2 = spec.width * spec.width;
    let reach = 6.0 * spec.width + mesh.h();
    let nodes = sub_centroids(levels);
    spec.locations
        .iter()
        .map(|&x0| {
            let mut ell = DVector::zeros(mesh.n_dofs());
            for t in mesh.triangles() {
                let c = t.centroid();
                if (c[0] - x0[0]).hypot(c[1] - x0[1]) > reach {
                    continue;
                }
                let dofs = mesh.dofs_of(&t);
                if dofs.iter().all(Option::is_none) {
                    continue;
                }
                let w_sub = t.area() / (levels * levels) as f64;
                let [p0, p1, p2] = t.coords;
                for lam in &nodes {
                    let x = [
                        lam[0] * p0[0] + lam[1] * p1[0] + lam[2] * p2[0],
                        lam[0] * p0[1] + lam[1] * p1[1] + lam[2] * p2[1],
                    ];
                    let r2 = (x[0] - x0[0]).powi(2) + (x[1] - x0[1]).powi(2);
                    let wgt = w_sub * (-r2 / s2).exp();
                    for (a, d) in dofs.iter().enumerate() {
                        if let Some(d) = d {
                            ell[*d] += wgt * lam[a];
                        }
                    }
                }
            }
            ell
        })
        .collect()
}

pub fn sensors_radial(mesh: &GridMesh, spec: &SensorSpec) -> Vec<DVector<f64>> {
    sensors_radial_with(mesh, spec, sensor_subdivision(mesh, spec.width))
}

/// Barycentric centroids of the `levels^2` sub-triangles of a regular split.
fn sub_centroids(levels: usize) -> Vec<[f64; 3]> {
    let n = levels as f64;
    let mut out = Vec::with_capacity(levels * levels);
    for a in 0..levels {
        for b in 0..levels - a {
            // upward sub-triangle with corner (a, b)
            let (x, y) = (a as f64 + 1.0 / 3.0, b as f64 + 1.0 / 3.0);
            out.push([1.0 - (x + y) / n, x / n, y / n]);
            if a + b + 1 < levels {
                let (x, y) = (a as f64 + 2.0 / 3.0, b as f64 + 2.0 / 3.0);
                out.push([1.0 - (x + y) / n, x / n, y / n]);
            }
        }
    }
    out
}

/// `count` i.i.d. parameters from the box laws, deterministic per seed.
pub fn sample_parameters(pbox: &ParameterBox, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Err(Error::Argument("sample count must be at least 1".into()));
    }
    Ok(pbox.sample(count, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::BandedCholesky;

    #[test]
    fn dof_count_and_divisibility() {
        assert!(thermal_block(32).is_err());
        let p = thermal_block(33).unwrap();
        assert_eq!(p.model.dim(), 1024);
        assert_eq!(p.model.m_b(), 9);
        assert_eq!(p.model.m_f(), 0);
    }

    #[test]
    fn sub_centroids_partition_the_triangle() {
        for levels in 1..6 {
            let c = sub_centroids(levels);
            assert_eq!(c.len(), levels * levels);
            // centroid of the union is the centroid of the triangle
            let mean: Vec<f64> =
                (0..3).map(|k| c.iter().map(|l| l[k]).sum::<f64>() / c.len() as f64).collect();
            for m in mean {
                assert!((m - 1.0 / 3.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn stiffness_of_unit_conductivity_is_five_point_laplacian() {
        let mesh = GridMesh::new(6).unwrap();
        let k = mesh.stiffness(|_| 1.0).unwrap();
        let d = mesh.dof(2, 3).unwrap();
        assert!((k.get(d, d) - 4.0).abs() < 1e-14);
        assert!((k.get(d, mesh.dof(3, 3).unwrap()) + 1.0).abs() < 1e-14);
        assert!((k.get(d, mesh.dof(2, 4).unwrap()) + 1.0).abs() < 1e-14);
        assert_eq!(k.get(d, mesh.dof(3, 4).unwrap()), 0.0);
    }

    #[test]
    fn thermal_gram_equals_unit_assembly_bitwise() {
        let p = thermal_block(12).unwrap();
        let (b, _) = p.model.assemble(&[1.0; 9]).unwrap();
        assert_eq!(&b, p.space().gram());
    }

    #[test]
    fn thermal_operator_spd_on_corners_and_samples() {
        let p = thermal_block(9).unwrap();
        let pbox = p.model.parameter_box();
        let mut params = pbox.sample(20, 4);
        params.push(vec![0.1; 9]);
        params.push(vec![1.0; 9]);
        params.push((0..9).map(|q| if q % 2 == 0 { 0.1 } else { 1.0 }).collect());
        for xi in params {
            let (b, _) = p.model.assemble(&xi).unwrap();
            assert!(b.is_symmetric(1e-14));
            BandedCholesky::factor(&b).unwrap();
        }
    }

    #[test]
    fn load_of_unit_source_has_unit_mass_inside() {
        let mesh = GridMesh::new(10).unwrap();
        let f = mesh.load(|_| 1.0);
        // interior hat functions of a uniform mesh each integrate to h^2
        assert!((f.sum() - 81.0 * 0.01).abs() < 1e-12);
    }

    #[test]
    fn advection_fields_are_divergence_free() {
        let h = 1e-5;
        for q in 0..10 {
            for x in [[0.3, 0.7], [0.9, 0.2], [0.5, 0.5]] {
                let dx = (advection_field(q, [x[0] + h, x[1]])[0]
                    - advection_field(q, [x[0] - h, x[1]])[0])
                    / (2.0 * h);
                let dy = (advection_field(q, [x[0], x[1] + h])[1]
                    - advection_field(q, [x[0], x[1] - h])[1])
                    / (2.0 * h);
                assert!((dx + dy).abs() < 1e-8, "mode {q}");
            }
            let peak = advection_field(q, [1.0, 1.0]);
            assert!((peak[0].hypot(peak[1]) - ADVECTION_PEAK).abs() < 1e-15);
        }
    }

    #[test]
    fn advection_diffusion_structure() {
        let p = advection_diffusion_lite(33, DEFAULT_KAPPA).unwrap();
        assert_eq!(p.model.m_b(), 10);
        assert!(p.model.assemble(&[0.0; 10]).is_err());
        let corner = p.model.parameter_box().lower();
        let (b, _) = p.model.assemble(corner.as_slice()).unwrap();
        assert!(b.asymmetry() > 0.0);
        for xi in p.model.parameter_box().sample(3, 11) {
            let u = p.model.solve_state(&xi).unwrap();
            let (b, f) = p.model.assemble(&xi).unwrap();
            assert!((b.mul_vec(&u).unwrap() - &f).norm() <= 1e-10 * f.norm());
        }
    }

    #[test]
    fn coarse_advection_mesh_is_rejected() {
        assert!(advection_diffusion_lite(6, DEFAULT_KAPPA).is_err());
        assert!(advection_diffusion_lite(8, 1e-4).is_err());
    }

    #[test]
    fn sensor_patterns() {
        assert_eq!(SensorPattern::M64.locations().len(), 64);
        assert_eq!(SensorPattern::M36.locations().len(), 36);
        let m9 = SensorPattern::M9.locations();
        assert_eq!(m9.len(), 9);
        assert!(m9.contains(&[4.0 / 9.0, 7.0 / 9.0]));
        let m64 = SensorPattern::M64.locations();
        for p in SensorPattern::M36.locations() {
            assert!(m64.contains(&p));
        }
        assert!(SensorSpec::new(vec![[0.0, 0.5]], 0.1).is_err());
        assert!(SensorSpec::new(vec![[0.5, 0.5]], 0.0).is_err());
    }

    #[test]
    fn centered_sensor_is_symmetric() {
        let p = thermal_block(12).unwrap();
        let spec = SensorSpec::new(vec![[0.5, 0.5]], 0.05).unwrap();
        let ell = &sensors_radial(&p.mesh, &spec)[0];
        let rep = p.space().riesz(ell).unwrap();
        let n = p.mesh.n_h;
        let scale = rep.amax();
        for j in 1..n {
            for i in 1..n {
                let d = p.mesh.dof(i, j).unwrap();
                let swap = p.mesh.dof(j, i).unwrap();
                let rot = p.mesh.dof(n - i, n - j).unwrap();
                assert!((rep[d] - rep[swap]).abs() <= 1e-10 * scale);
                assert!((rep[d] - rep[rot]).abs() <= 1e-10 * scale);
            }
        }
    }

    #[test]
    fn sensors_are_positive_and_converge_under_refinement() {
        let mesh = GridMesh::new(33).unwrap();
        let spec = SensorSpec::from_pattern(&SensorPattern::M9, DEFAULT_SENSOR_WIDTH).unwrap();
        let base = sensors_radial(&mesh, &spec);
        let fine = sensors_radial_with(&mesh, &spec, 2 * sensor_subdivision(&mesh, spec.width));
        for (a, b) in base.iter().zip(&fine) {
            assert!(a.iter().all(|&v| v >= 0.0));
            assert!(a.sum() > 0.0);
            assert!((a - b).norm() <= 1e-2 * b.norm());
        }
        // exact integral of the Gaussian against the (interpolated) constant
        // function in the far interior is pi s^2 when all hats sum to one
        let total: f64 = base[4].sum();
        let exact = std::f64::consts::PI * spec.width * spec.width;
        assert!((total - exact).abs() <= 1e-3 * exact);
    }

    #[test]
    fn sample_parameters_rejects_zero_count() {
        let b = ParameterBox::uniform(vec![(-1.0, -0.5)]).unwrap();
        assert!(sample_parameters(&b, 0, 1).is_err());
        assert!(sample_parameters(&b, 100, 1).unwrap().iter().all(|x| b.contains(x)));
    }
}
