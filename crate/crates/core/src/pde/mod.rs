//! P1 finite elements for `div(a∇v) = 0` on disks with Dirichlet data.

mod export;
mod mesh;

use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Llt;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::fields::{CoefficientQuadrature, Coefficients};

pub use export::{write_mesh_csv, write_solution_csv};
pub use mesh::{mesh_disk, mesh_disk_with_rings, DiskMesh, Point, Ring, MIN_ANGLE_DEG};

/// Symmetric 2×2 coefficient stored as `(a11, a12, a22)`.
pub type Sym2 = [f64; 3];

fn sym2_at(field: &dyn Coefficients, x: Point) -> Sym2 {
    let m = field.eval(&x);
    [m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]]
}

fn mean3(p: [Sym2; 3]) -> Sym2 {
    [0, 1, 2].map(|i| (p[0][i] + p[1][i] + p[2][i]) / 3.0)
}

fn midpoint(a: Point, b: Point) -> Point {
    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
}

fn edge_midpoint_rule(field: &dyn Coefficients, t: [Point; 3]) -> Sym2 {
    mean3([
        sym2_at(field, midpoint(t[0], t[1])),
        sym2_at(field, midpoint(t[1], t[2])),
        sym2_at(field, midpoint(t[2], t[0])),
    ])
}

const MAX_LAYER_DEPTH: u32 = 10;

/// Area-average over a triangle of a field with thin transition layers.
fn layered_average(field: &dyn Coefficients, t: [Point; 3], width: f64, depth: u32) -> Sym2 {
    let c = [(t[0][0] + t[1][0] + t[2][0]) / 3.0, (t[0][1] + t[1][1] + t[2][1]) / 3.0];
    let diam = (0..3)
        .map(|i| (t[i][0] - t[(i + 1) % 3][0]).hypot(t[i][1] - t[(i + 1) % 3][1]))
        .fold(0.0, f64::max);
    if field.feature_distance(&c) > diam + width {
        return sym2_at(field, c);
    }
    if diam <= 0.25 * width || depth == MAX_LAYER_DEPTH {
        return edge_midpoint_rule(field, t);
    }
    let (m01, m12, m20) = (midpoint(t[0], t[1]), midpoint(t[1], t[2]), midpoint(t[2], t[0]));
    let parts = [
        layered_average(field, [t[0], m01, m20], width, depth + 1),
        layered_average(field, [m01, t[1], m12], width, depth + 1),
        layered_average(field, [m20, m12, t[2]], width, depth + 1),
        layered_average(field, [m01, m12, m20], width, depth + 1),
    ];
    [0, 1, 2].map(|i| 0.25 * (parts[0][i] + parts[1][i] + parts[2][i] + parts[3][i]))
}

/// Per-element coefficient averages.
pub fn element_coefficients(mesh: &DiskMesh, field: &dyn Coefficients) -> Result<Vec<Sym2>> {
    if field.dim() != 2 {
        return Err(invalid("the finite-element pipeline is planar (n = 2)"));
    }
    let rule = field.quadrature();
    Ok((0..mesh.triangle_count())
        .into_par_iter()
        .map(|e| {
            let t = mesh.corners(e);
            match rule {
                CoefficientQuadrature::Centroid => sym2_at(field, mesh.centroid(e)),
                CoefficientQuadrature::ThreePoint => edge_midpoint_rule(field, t),
                CoefficientQuadrature::Layered { width } => layered_average(field, t, width, 0),
            }
        })
        .collect())
}

/// Compressed-row symmetric matrix with merged duplicates.
#[derive(Debug, Clone)]
struct Csr {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Csr {
    fn from_entries(n: usize, mut entries: Vec<(usize, usize, f64)>) -> Self {
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(entries.len());
        let mut vals: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in entries {
            if last == Some((i, j)) {
                *vals.last_mut().expect("entry exists") += v;
            } else {
                cols.push(j);
                vals.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { n, row_ptr, cols, vals }
    }

    fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.cols[k], self.vals[k]))
    }

    fn mul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).find(|&(j, _)| j == i).map_or(0.0, |(_, v)| v)).collect()
    }
}

fn element_stiffness(mesh: &DiskMesh, e: usize, a: Sym2) -> [[f64; 3]; 3] {
    let g = mesh.hat_gradients(e);
    let area = mesh.area(e);
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        let ag = [a[0] * g[i][0] + a[1] * g[i][1], a[1] * g[i][0] + a[2] * g[i][1]];
        for j in 0..3 {
            k[i][j] = area * (ag[0] * g[j][0] + ag[1] * g[j][1]);
        }
    }
    k
}

/// Factorized Dirichlet problem for one mesh and one coefficient field.
pub struct DirichletSolver {
    mesh: Arc<DiskMesh>,
    coefficients: Arc<Vec<Sym2>>,
    field_name: String,
    stiffness: Csr,
    /// Interior-interior block (interior numbering).
    interior_block: Csr,
    /// Global index → interior index.
    interior_of: Vec<Option<usize>>,
    interior: Vec<usize>,
    factor: Option<Llt<usize, f64>>,
}

/// Relative residual above which a solve is reported as failed.
pub const SOLVER_TOLERANCE: f64 = 1e-10;
const ITERATIVE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct FemSolution {
    pub values: Vec<f64>,
    pub trace: Vec<f64>,
    pub field_name: String,
    /// `uᵀKu`, the assembled energy over the whole mesh.
    pub energy: f64,
    /// Relative Galerkin residual over interior hat functions.
    pub residual: f64,
    /// Excess of interior values over the trace range, relative to that range.
    pub max_principle_excess: f64,
    mesh: Arc<DiskMesh>,
}

impl FemSolution {
    pub fn mesh(&self) -> &DiskMesh {
        &self.mesh
    }

    pub fn value_at(&self, x: Point) -> Option<f64> {
        self.mesh.interpolate(&self.values, x)
    }
}

impl DirichletSolver {
    pub fn new(mesh: Arc<DiskMesh>, field: &dyn Coefficients) -> Result<Self> {
        let coefficients = Arc::new(element_coefficients(&mesh, field)?);
        Self::with_coefficients(mesh, coefficients, field.name())
    }

    /// Builds the solver from precomputed element coefficients.
    pub fn with_coefficients(mesh: Arc<DiskMesh>, coefficients: Arc<Vec<Sym2>>, field_name: &str) -> Result<Self> {
        if coefficients.len() != mesh.triangle_count() {
            return Err(invalid("coefficient count does not match the mesh"));
        }
        for (e, a) in coefficients.iter().enumerate() {
            let det = a[0] * a[2] - a[1] * a[1];
            if !(a[0] > 0.0 && det > 0.0 && det.is_finite()) {
                return Err(Error::Singular(format!("element {e} has a non-positive coefficient matrix")));
            }
        }
        let n = mesh.vertex_count();
        let locals: Vec<[[f64; 3]; 3]> =
            (0..mesh.triangle_count()).into_par_iter().map(|e| element_stiffness(&mesh, e, coefficients[e])).collect();
        let mut entries = Vec::with_capacity(9 * locals.len());
        for (e, k) in locals.iter().enumerate() {
            let t = mesh.triangles()[e];
            for i in 0..3 {
                for j in 0..3 {
                    entries.push((t[i], t[j], k[i][j]));
                }
            }
        }
        let stiffness = Csr::from_entries(n, entries);

        let boundary = mesh.boundary();
        let interior: Vec<usize> = (0..n).filter(|v| !boundary.contains(v)).collect();
        let mut interior_of = vec![None; n];
        for (k, &v) in interior.iter().enumerate() {
            interior_of[v] = Some(k);
        }
        let mut block = Vec::new();
        for (k, &v) in interior.iter().enumerate() {
            for (j, val) in stiffness.row(v) {
                if let Some(kj) = interior_of[j] {
                    block.push((k, kj, val));
                }
            }
        }
        let interior_block = Csr::from_entries(interior.len(), block);
        let triplets: Vec<Triplet<usize, usize, f64>> = (0..interior_block.n)
            .flat_map(|i| interior_block.row(i).map(move |(j, v)| Triplet::new(i, j, v)))
            .collect();
        let factor = if interior.is_empty() {
            None
        } else {
            faer::set_global_parallelism(faer::Par::Seq);
            let matrix = SparseColMat::<usize, f64>::try_new_from_triplets(interior.len(), interior.len(), &triplets)
                .map_err(|e| Error::Singular(format!("sparse assembly failed: {e:?}")))?;
            matrix.sp_cholesky(Side::Lower).ok()
        };
        Ok(Self {
            mesh,
            coefficients,
            field_name: field_name.to_string(),
            stiffness,
            interior_block,
            interior_of,
            interior,
            factor,
        })
    }

    pub fn mesh(&self) -> &Arc<DiskMesh> {
        &self.mesh
    }

    pub fn coefficients(&self) -> &Arc<Vec<Sym2>> {
        &self.coefficients
    }

    pub fn field_name(&self) -> &str {
        &self.field_name
    }

    /// `uᵀKv` over the whole mesh.
    pub fn energy(&self, u: &[f64], v: &[f64]) -> f64 {
        self.stiffness.mul(v).iter().zip(u).map(|(a, b)| a * b).sum()
    }

    fn solve_interior(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        match &self.factor {
            Some(llt) => {
                let mut x = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
                llt.solve_in_place(x.as_mut());
                let mut x: Vec<f64> = (0..rhs.len()).map(|i| x[(i, 0)]).collect();
                // One step of iterative refinement.
                let ax = self.interior_block.mul(&x);
                let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
                let mut c = Mat::from_fn(r.len(), 1, |i, _| r[i]);
                llt.solve_in_place(c.as_mut());
                for (i, xi) in x.iter_mut().enumerate() {
                    *xi += c[(i, 0)];
                }
                Ok(x)
            }
            None => self.conjugate_gradient(rhs),
        }
    }

    /// Jacobi-preconditioned conjugate gradients, used when factorization fails.
    fn conjugate_gradient(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let a = &self.interior_block;
        let diag = a.diagonal();
        let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
        let norm_b = dot(rhs, rhs).sqrt();
        let mut x = vec![0.0; rhs.len()];
        if norm_b == 0.0 {
            return Ok(x);
        }
        let mut r = rhs.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        for _ in 0..(10 * rhs.len()).max(1000) {
            let ap = a.mul(&p);
            let alpha = rz / dot(&p, &ap);
            for i in 0..x.len() {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let res = dot(&r, &r).sqrt() / norm_b;
            if res <= ITERATIVE_TOLERANCE {
                return Ok(x);
            }
            z = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..p.len() {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(Error::NonConvergent { residual: dot(&r, &r).sqrt() / norm_b })
    }

    /// Solves with the given boundary values (one per boundary vertex, in ring order).
    pub fn solve(&self, trace: &[f64]) -> Result<FemSolution> {
        let boundary = self.mesh.boundary();
        if trace.len() != boundary.len() {
            return Err(invalid(format!("trace has {} values, boundary has {}", trace.len(), boundary.len())));
        }
        if trace.iter().any(|v| !v.is_finite()) {
            return Err(invalid("trace values must be finite"));
        }
        let n = self.mesh.vertex_count();
        let mut values = vec![0.0; n];
        for (k, v) in boundary.clone().enumerate() {
            values[v] = trace[k];
        }
        let mut rhs = vec![0.0; self.interior.len()];
        for (k, &v) in self.interior.iter().enumerate() {
            rhs[k] = -self.stiffness.row(v).filter(|(j, _)| boundary.contains(j)).map(|(j, a)| a * values[j]).sum::<f64>();
        }
        let x = self.solve_interior(&rhs)?;
        for (k, &v) in self.interior.iter().enumerate() {
            values[v] = x[k];
        }

        let ku = self.stiffness.mul(&values);
        let interior_residual: f64 = self.interior.iter().map(|&v| ku[v] * ku[v]).sum::<f64>().sqrt();
        let scale: f64 = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        let residual = if scale == 0.0 { interior_residual } else { interior_residual / scale };
        if residual > SOLVER_TOLERANCE {
            return Err(Error::NonConvergent { residual });
        }
        let energy: f64 = ku.iter().zip(&values).map(|(a, b)| a * b).sum();

        let (tmin, tmax) = trace.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let (imin, imax) = self
            .interior
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(values[v]), b.max(values[v])));
        let range = (tmax - tmin).max(f64::MIN_POSITIVE);
        let excess = ((imax - tmax).max(tmin - imin) / range).max(0.0);
        let excess = if self.interior.is_empty() || tmax == tmin { 0.0 } else { excess };

        Ok(FemSolution {
            values,
            trace: trace.to_vec(),
            field_name: self.field_name.clone(),
            energy,
            residual,
            max_principle_excess: excess,
            mesh: self.mesh.clone(),
        })
    }

    /// Solves with boundary data `f(x, y)` sampled at the boundary vertices.
    pub fn solve_with(&self, f: impl Fn(f64, f64) -> f64) -> Result<FemSolution> {
        let trace: Vec<f64> = self.mesh.boundary().map(|v| self.mesh.vertices()[v]).map(|p| f(p[0], p[1])).collect();
        self.solve(&trace)
    }

    /// Interior index of a vertex, if it is not on the boundary.
    pub fn interior_index(&self, v: usize) -> Option<usize> {
        self.interior_of[v]
    }
}

/// Solves on `mesh` with the given coefficient field and trace.
pub fn solve_dirichlet(mesh: Arc<DiskMesh>, field: &dyn Coefficients, trace: &[f64]) -> Result<FemSolution> {
    DirichletSolver::new(mesh, field)?.solve(trace)
}

/// Energy gap between the solutions for two coefficient fields with a common trace.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ApproximationGap {
    /// `∫ a∇(u − v)·∇(u − v)` with `a` the first field.
    pub gap: f64,
    /// `∫ a∇u·∇u`.
    pub base_energy: f64,
    pub relative: f64,
}

pub fn approximation_error(
    mesh: Arc<DiskMesh>,
    field_a: &dyn Coefficients,
    field_b: &dyn Coefficients,
    trace: &[f64],
) -> Result<ApproximationGap> {
    let solver_a = DirichletSolver::new(mesh.clone(), field_a)?;
    let u = solver_a.solve(trace)?;
    let v = DirichletSolver::new(mesh, field_b)?.solve(trace)?;
    let diff: Vec<f64> = u.values.iter().zip(&v.values).map(|(a, b)| a - b).collect();
    let gap = solver_a.energy(&diff, &diff).max(0.0);
    let base_energy = u.energy;
    Ok(ApproximationGap { gap, base_energy, relative: if base_energy > 0.0 { gap / base_energy } else { gap } })
}

/// Energy-norm error `(∫ |∇(u − u_h)|²)^{1/2}` against an exact gradient.
pub fn energy_norm_error(mesh: &DiskMesh, values: &[f64], exact_gradient: impl Fn(Point) -> Point) -> f64 {
    // Degree-4 symmetric rule on the reference triangle (6 points).
    const W: [f64; 2] = [0.223_381_589_678_011, 0.109_951_743_655_322];
    const A: [f64; 2] = [0.445_948_490_915_965, 0.091_576_213_509_771];
    let total: f64 = (0..mesh.triangle_count())
        .map(|e| {
            let g = mesh.gradient(values, e);
            let [p0, p1, p2] = mesh.corners(e);
            let mut acc = 0.0;
            for k in 0..2 {
                let (a, b) = (A[k], 1.0 - 2.0 * A[k]);
                for bary in [[a, a, b], [a, b, a], [b, a, a]] {
                    let x = [
                        bary[0] * p0[0] + bary[1] * p1[0] + bary[2] * p2[0],
                        bary[0] * p0[1] + bary[1] * p1[1] + bary[2] * p2[1],
                    ];
                    let ex = exact_gradient(x);
                    acc += W[k] * ((g[0] - ex[0]).powi(2) + (g[1] - ex[1]).powi(2));
                }
            }
            acc * mesh.area(e)
        })
        .sum();
    total.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::CoefficientField;

    #[test]
    fn constants_and_linear_functions_are_reproduced() {
        let mesh = Arc::new(mesh_disk(1.0, 0.1).unwrap());
        let id = CoefficientField::identity(2);
        let solver = DirichletSolver::new(mesh.clone(), &id).unwrap();
        let one = solver.solve_with(|_, _| 1.0).unwrap();
        assert!(one.values.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let x = solver.solve_with(|x, _| x).unwrap();
        for (v, p) in x.values.iter().zip(mesh.vertices()) {
            assert!((v - p[0]).abs() < 1e-12);
        }
        assert!(x.residual <= SOLVER_TOLERANCE);
        assert_eq!(x.max_principle_excess, 0.0);
    }

    #[test]
    fn solves_are_bit_identical() {
        let mesh = Arc::new(mesh_disk(1.0, 0.08).unwrap());
        let f = CoefficientField::checkerboard(2, 0.5, 1.0, 3.0).unwrap();
        let a = solve_dirichlet(mesh.clone(), &f, &vec![0.5; mesh.boundary().len()]).unwrap();
        let s = DirichletSolver::new(mesh.clone(), &f).unwrap();
        let b = s.solve_with(|x, y| x * y + x).unwrap();
        let c = DirichletSolver::new(mesh, &f).unwrap().solve_with(|x, y| x * y + x).unwrap();
        assert_eq!(b.values, c.values);
        assert!(a.values.iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn conjugate_gradient_matches_factorization() {
        let mesh = Arc::new(mesh_disk(1.0, 0.1).unwrap());
        let f = CoefficientField::conic_decay(nalgebra::DMatrix::identity(2, 2), 1.0, 0.5).unwrap();
        let s = DirichletSolver::new(mesh, &f).unwrap();
        let rhs: Vec<f64> = (0..s.interior.len()).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let direct = s.solve_interior(&rhs).unwrap();
        let iterative = s.conjugate_gradient(&rhs).unwrap();
        let err = direct.iter().zip(&iterative).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn identical_fields_have_zero_gap() {
        let mesh = Arc::new(mesh_disk(1.0, 0.1).unwrap());
        let f = CoefficientField::radial_piecewise(2, vec![0.5], vec![1.0, 2.0]).unwrap();
        let trace: Vec<f64> = mesh.boundary().map(|v| mesh.vertices()[v][0]).collect();
        let g = approximation_error(mesh, &f, &f, &trace).unwrap();
        assert!(g.gap < 1e-20);
    }

    #[test]
    fn layered_average_matches_fine_sampling() {
        let f = CoefficientField::checkerboard(2, 1.0, 1.0, 2.0).unwrap();
        let m = crate::fields::mollify(&f, 0.2, 1.0, 0.5).unwrap();
        let tri = [[-0.05, -0.03], [0.06, -0.02], [0.0, 0.07]];
        let avg = layered_average(&m, tri, m.kernel_width, 0);
        // Brute-force barycentric grid.
        let n = 400;
        let mut acc = [0.0; 3];
        let mut count = 0.0;
        for i in 0..n {
            for j in 0..n - i {
                let (l1, l2) = ((i as f64 + 1.0 / 3.0) / n as f64, (j as f64 + 1.0 / 3.0) / n as f64);
                let l0 = 1.0 - l1 - l2;
                let x = [
                    l0 * tri[0][0] + l1 * tri[1][0] + l2 * tri[2][0],
                    l0 * tri[0][1] + l1 * tri[1][1] + l2 * tri[2][1],
                ];
                let s = sym2_at(&m, x);
                for k in 0..3 {
                    acc[k] += s[k];
                }
                count += 1.0;
            }
        }
        for k in 0..3 {
            assert!((avg[k] - acc[k] / count).abs() < 2e-3, "{k}: {} vs {}", avg[k], acc[k] / count);
        }
    }

    #[test]
    fn transmission_probe_value() {
        let f = CoefficientField::radial_piecewise(2, vec![0.5], vec![1.0, 2.0]).unwrap();
        let mesh = Arc::new(mesh_disk_with_rings(1.0, 0.02, &[0.5]).unwrap());
        let u = DirichletSolver::new(mesh, &f).unwrap().solve_with(|x, _| x).unwrap();
        let v = u.value_at([0.25, 0.0]).unwrap();
        assert!((v - 4.0 / 13.0).abs() < 2e-3, "{v}");
        assert!(u.max_principle_excess <= 0.01);
    }

    #[test]
    fn energy_error_halves_with_h() {
        let id = CoefficientField::identity(2);
        let errors: Vec<f64> = [0.1, 0.05, 0.025]
            .iter()
            .map(|&h| {
                let mesh = Arc::new(mesh_disk(1.0, h).unwrap());
                let u = DirichletSolver::new(mesh.clone(), &id).unwrap().solve_with(|x, y| x * x * x - 3.0 * x * y * y).unwrap();
                energy_norm_error(&mesh, &u.values, |p| [3.0 * (p[0] * p[0] - p[1] * p[1]), -6.0 * p[0] * p[1]])
            })
            .collect();
        for w in errors.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.7..=2.3).contains(&ratio), "{errors:?}");
        }
    }
}
