//! Conformal reformulation of `div(a∇u) = 0` as a weighted Laplacian
//! `div_g(φ∇_g u) = 0` for the metric `g^{ij} = w·a^{ij}`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::fields::{CoefficientQuadrature, Coefficients};
use crate::pde::{element_coefficients, DiskMesh, Point, Sym2};

/// Pointwise metric data built from the coefficient matrix.
#[derive(Debug, Clone)]
pub struct ConformalData {
    /// `Σ a^{ij} ρ_i ρ_j`.
    pub w: f64,
    /// `w^{(n−2)/2} √det a`.
    pub phi: f64,
    pub g_inv: DMatrix<f64>,
    pub g: DMatrix<f64>,
    /// `det(g_{ij})`.
    pub det_g: f64,
    /// Set when `x = 0` and the radial direction was replaced by `e₁`.
    pub at_origin: bool,
}

fn radial_direction(x: &[f64]) -> (DVector<f64>, bool) {
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r == 0.0 {
        let mut e = DVector::zeros(x.len());
        e[0] = 1.0;
        (e, true)
    } else {
        (DVector::from_iterator(x.len(), x.iter().map(|v| v / r)), false)
    }
}

pub fn conformal_data(field: &dyn Coefficients, x: &[f64]) -> Result<ConformalData> {
    if x.len() != field.dim() {
        return Err(invalid("point dimension does not match the field"));
    }
    let a = field.eval(x);
    let n = a.nrows();
    let (rho, at_origin) = radial_direction(x);
    let w = (rho.transpose() * &a * &rho)[(0, 0)];
    let det_a = a.determinant();
    let phi = w.powf((n as f64 - 2.0) / 2.0) * det_a.sqrt();
    let g_inv = &a * w;
    let g = g_inv.clone().try_inverse().ok_or_else(|| Error::Singular("metric is not invertible".into()))?;
    let det_g = g.determinant();
    Ok(ConformalData { w, phi, g_inv, g, det_g, at_origin })
}

/// `|∇_g ρ| = (g^{ij} ρ_i ρ_j)^{1/2}`, which equals `w`.
pub fn radial_gradient_norm(field: &dyn Coefficients, x: &[f64]) -> Result<f64> {
    let c = conformal_data(field, x)?;
    let (rho, _) = radial_direction(x);
    Ok((rho.transpose() * &c.g_inv * &rho)[(0, 0)].sqrt())
}

/// Residuals of `∮ f dA₀ = ∮ f φ dA_g` on `∂B(t)` for a battery of test functions.
#[derive(Debug, Clone, Serialize)]
pub struct WeightIdentity {
    pub t: f64,
    pub quadrature_size: usize,
    pub euclidean: Vec<f64>,
    pub weighted: Vec<f64>,
    /// Largest absolute difference over the battery.
    pub residual: f64,
}

/// Names of the test functions used by [`boundary_weight_identity`].
pub const WEIGHT_TEST_FUNCTIONS: [&str; 5] = ["1", "cos θ", "sin 2θ", "x² − y/2", "exp(x/t)"];

fn weight_test_function(k: usize, theta: f64, t: f64) -> f64 {
    let (x, y) = (t * theta.cos(), t * theta.sin());
    match k {
        0 => 1.0,
        1 => theta.cos(),
        2 => (2.0 * theta).sin(),
        3 => x * x - 0.5 * y,
        _ => (x / t).exp(),
    }
}

/// Planar check of the co-area identity `dA₀ = φ dA_g` with trapezoidal quadrature.
pub fn boundary_weight_identity(field: &dyn Coefficients, t: f64, quadrature_size: usize) -> Result<WeightIdentity> {
    if field.dim() != 2 {
        return Err(invalid("boundary quadrature is planar (n = 2)"));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(invalid("radius must be positive"));
    }
    if quadrature_size < 3 {
        return Err(invalid("need at least 3 quadrature points"));
    }
    let ds = 2.0 * PI * t / quadrature_size as f64;
    let k = WEIGHT_TEST_FUNCTIONS.len();
    let mut euclidean = vec![0.0; k];
    let mut weighted = vec![0.0; k];
    for j in 0..quadrature_size {
        let theta = 2.0 * PI * j as f64 / quadrature_size as f64;
        let x = [t * theta.cos(), t * theta.sin()];
        let c = conformal_data(field, &x)?;
        let tau = DVector::from_column_slice(&[-theta.sin(), theta.cos()]);
        // Induced length element of g on the circle.
        let da_g = (tau.transpose() * &c.g * &tau)[(0, 0)].sqrt() * ds;
        for (i, (e, wgt)) in euclidean.iter_mut().zip(weighted.iter_mut()).enumerate() {
            let f = weight_test_function(i, theta, t);
            *e += f * ds;
            *wgt += f * c.phi * da_g;
        }
    }
    let residual = euclidean.iter().zip(&weighted).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(WeightIdentity { t, quadrature_size, euclidean, weighted, residual })
}

/// `D_t(u_i, u_j)` with its radius and basis indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyValue {
    pub value: f64,
    pub t: f64,
    pub i: usize,
    pub j: usize,
}

fn bilinear(a: Sym2, p: Point, q: Point) -> f64 {
    p[0] * (a[0] * q[0] + a[1] * q[1]) + p[1] * (a[1] * q[0] + a[2] * q[1])
}

/// Cached element coefficients and `B(t)` fractions for repeated energy evaluations.
pub struct EnergyForm<'a> {
    mesh: &'a DiskMesh,
    coefficients: Vec<Sym2>,
}

impl<'a> EnergyForm<'a> {
    pub fn new(mesh: &'a DiskMesh, field: &dyn Coefficients) -> Result<Self> {
        Ok(Self { mesh, coefficients: element_coefficients(mesh, field)? })
    }

    pub fn from_coefficients(mesh: &'a DiskMesh, coefficients: Vec<Sym2>) -> Self {
        Self { mesh, coefficients }
    }

    pub fn mesh(&self) -> &DiskMesh {
        self.mesh
    }

    pub fn coefficients(&self) -> &[Sym2] {
        &self.coefficients
    }

    /// Euclidean form `∫_{B(t)} a∇u·∇v` for every pair of the given functions.
    pub fn gram(&self, functions: &[&[f64]], t: f64) -> Result<DMatrix<f64>> {
        self.mesh.ensure_covers(t)?;
        let fractions = self.mesh.disk_fractions(t);
        let k = functions.len();
        let mut out = DMatrix::zeros(k, k);
        let mut grads = vec![[0.0; 2]; k];
        for e in 0..self.mesh.triangle_count() {
            let f = fractions[e];
            if f == 0.0 {
                continue;
            }
            let weight = f * self.mesh.area(e);
            for (g, u) in grads.iter_mut().zip(functions) {
                *g = self.mesh.gradient(u, e);
            }
            for i in 0..k {
                for j in i..k {
                    out[(i, j)] += weight * bilinear(self.coefficients[e], grads[i], grads[j]);
                }
            }
        }
        for i in 0..k {
            for j in 0..i {
                out[(i, j)] = out[(j, i)];
            }
        }
        Ok(out)
    }

    pub fn energy(&self, u: &[f64], v: &[f64], t: f64) -> Result<f64> {
        Ok(self.gram(&[u, v], t)?[(0, 1)])
    }
}

/// Point rule matching the field's element quadrature.
fn quadrature_points(mesh: &DiskMesh, e: usize, rule: CoefficientQuadrature) -> Vec<Point> {
    let [a, b, c] = mesh.corners(e);
    let mid = |p: Point, q: Point| [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
    match rule {
        CoefficientQuadrature::Centroid => vec![mesh.centroid(e)],
        _ => vec![mid(a, b), mid(b, c), mid(c, a)],
    }
}

/// Both sides of the energy-form identity on `B(t)` with a common point rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FormPair {
    /// `∫ a^{ij} u_i v_j dx`.
    pub euclidean: f64,
    /// `∫ ⟨∇_g u, ∇_g v⟩ φ dV_g`.
    pub riemannian: f64,
    /// `(D(u,u) D(v,v))^{1/2}`, the natural scale of either value.
    pub scale: f64,
}

impl FormPair {
    pub fn relative_difference(&self) -> f64 {
        if self.scale == 0.0 {
            (self.euclidean - self.riemannian).abs()
        } else {
            (self.euclidean - self.riemannian).abs() / self.scale
        }
    }
}

fn riemannian_integrand(c: &ConformalData, gu: Point, gv: Point) -> f64 {
    // ⟨∇_g u, ∇_g v⟩ = g^{ij} u_i v_j and dV_g = √det g dx.
    let gi = &c.g_inv;
    let form = gu[0] * (gi[(0, 0)] * gv[0] + gi[(0, 1)] * gv[1]) + gu[1] * (gi[(1, 0)] * gv[0] + gi[(1, 1)] * gv[1]);
    form * c.phi * c.det_g.sqrt()
}

/// Evaluates both energy forms element by element at shared quadrature points.
pub fn energy_forms(field: &dyn Coefficients, u: &[f64], v: &[f64], t: f64, mesh: &DiskMesh) -> Result<FormPair> {
    mesh.ensure_covers(t)?;
    let fractions = mesh.disk_fractions(t);
    let rule = field.quadrature();
    let (mut euclidean, mut riemannian, mut uu, mut vv) = (0.0, 0.0, 0.0, 0.0);
    for e in 0..mesh.triangle_count() {
        if fractions[e] == 0.0 {
            continue;
        }
        let (gu, gv) = (mesh.gradient(u, e), mesh.gradient(v, e));
        let points = quadrature_points(mesh, e, rule);
        let weight = fractions[e] * mesh.area(e) / points.len() as f64;
        for x in points {
            let m = field.eval(&x);
            let a = [m[(0, 0)], m[(0, 1)], m[(1, 1)]];
            euclidean += weight * bilinear(a, gu, gv);
            uu += weight * bilinear(a, gu, gu);
            vv += weight * bilinear(a, gv, gv);
            riemannian += weight * riemannian_integrand(&conformal_data(field, &x)?, gu, gv);
        }
    }
    Ok(FormPair { euclidean, riemannian, scale: (uu * vv).sqrt() })
}

/// Relative tolerance of the energy-form identity.
pub const FORM_TOLERANCE: f64 = 1e-10;

/// Elements on which [`weighted_energy`] cross-checks the Riemannian form.
const FORM_CHECK_STRIDE: usize = 97;

/// `D_t(u, v)` computed in Euclidean form, cross-checked against the
/// Riemannian form on a deterministic sample of elements.
pub fn weighted_energy(field: &dyn Coefficients, u: &[f64], v: &[f64], t: f64, mesh: &DiskMesh) -> Result<EnergyValue> {
    let form = EnergyForm::new(mesh, field)?;
    let value = form.energy(u, v, t)?;
    for e in (0..mesh.triangle_count()).step_by(FORM_CHECK_STRIDE) {
        let x = mesh.centroid(e);
        let (gu, gv) = (mesh.gradient(u, e), mesh.gradient(v, e));
        let m = field.eval(&x);
        let a = [m[(0, 0)], m[(0, 1)], m[(1, 1)]];
        let euclidean = bilinear(a, gu, gv);
        let riemannian = riemannian_integrand(&conformal_data(field, &x)?, gu, gv);
        let scale = (bilinear(a, gu, gu) * bilinear(a, gv, gv)).sqrt();
        if (euclidean - riemannian).abs() > FORM_TOLERANCE * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::FormMismatch { euclidean, riemannian });
        }
    }
    Ok(EnergyValue { value, t, i: 0, j: 1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{mollify, CoefficientField};
    use crate::pde::mesh_disk;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn diag(a: f64, b: f64) -> CoefficientField {
        CoefficientField::diagonal(&[a, b]).unwrap()
    }

    #[test]
    fn conformal_data_examples() {
        let id = CoefficientField::identity(2);
        let c = conformal_data(&id, &[0.3, -2.0]).unwrap();
        assert_eq!((c.w, c.phi), (1.0, 1.0));
        assert_eq!(c.g_inv, DMatrix::identity(2, 2));

        let f = diag(1.0, 4.0);
        let c = conformal_data(&f, &[1.0, 0.0]).unwrap();
        assert_eq!((c.w, c.phi), (1.0, 2.0));
        assert_eq!(c.g_inv, DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 4.0])));
        let c = conformal_data(&f, &[0.0, 1.0]).unwrap();
        assert_eq!((c.w, c.phi), (4.0, 2.0));
        assert_eq!(c.g_inv, DMatrix::from_diagonal(&DVector::from_column_slice(&[4.0, 16.0])));
        assert!(!c.at_origin);

        let c = conformal_data(&f, &[0.0, 0.0]).unwrap();
        assert!(c.at_origin);
        assert_eq!(c.w, 1.0);
    }

    #[test]
    fn metric_round_trip_and_planar_phi() {
        let fields = [
            diag(1.0, 4.0),
            CoefficientField::seeded_random(0.5, 3.0, 0.2, 9).unwrap(),
            CoefficientField::checkerboard(2, 1.0, 1.0, 2.0).unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for f in &fields {
            for _ in 0..1000 {
                let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
                let c = conformal_data(f, &x).unwrap();
                assert!((&c.g * &c.g_inv - DMatrix::identity(2, 2)).amax() < 1e-12);
                assert_eq!(c.phi, f.eval(&x).determinant().sqrt());
            }
        }
    }

    #[test]
    fn radial_gradient_examples() {
        let id = CoefficientField::identity(2);
        assert!((radial_gradient_norm(&id, &[0.2, 0.7]).unwrap() - 1.0).abs() < 1e-15);
        assert!((radial_gradient_norm(&diag(1.0, 4.0), &[0.0, 1.0]).unwrap() - 4.0).abs() < 1e-15);
    }

    #[test]
    fn boundary_weight_examples() {
        let id = CoefficientField::identity(2);
        let r = boundary_weight_identity(&id, 1.0, 256).unwrap();
        assert!((r.euclidean[0] - 2.0 * PI).abs() < 1e-12 && r.residual < 1e-12);
        let r = boundary_weight_identity(&diag(1.0, 4.0), 1.0, 4096).unwrap();
        assert!(r.residual <= 1e-8);
        let scalar = CoefficientField::scalar(2, 2.0).unwrap();
        let r = boundary_weight_identity(&scalar, 2.0, 4096).unwrap();
        assert!(r.euclidean[1].abs() < 1e-10 && r.weighted[1].abs() < 1e-10);
        assert!(r.residual <= 1e-8);
    }

    #[test]
    fn weighted_energy_examples() {
        let mesh = mesh_disk(1.0, 0.05).unwrap();
        let id = CoefficientField::identity(2);
        let x: Vec<f64> = mesh.vertices().iter().map(|p| p[0]).collect();
        let y: Vec<f64> = mesh.vertices().iter().map(|p| p[1]).collect();
        let one = vec![1.0; mesh.vertex_count()];
        let e = weighted_energy(&id, &x, &x, 1.0, &mesh).unwrap();
        // The polygonal mesh loses a sliver of the disk near the boundary.
        assert!((e.value - PI).abs() < 2e-3, "{}", e.value);
        let e = weighted_energy(&id, &x, &x, 0.7, &mesh).unwrap();
        assert!((e.value - PI * 0.49).abs() < 1e-10);
        assert!(weighted_energy(&id, &one, &one, 1.0, &mesh).unwrap().value.abs() < 1e-20);
        assert!(weighted_energy(&id, &x, &y, 1.0, &mesh).unwrap().value.abs() < 1e-12);
        assert!(matches!(weighted_energy(&id, &x, &x, 1.5, &mesh), Err(Error::MeshCoverage { .. })));
    }

    #[test]
    fn energy_forms_agree_and_grow_with_t() {
        let mesh = mesh_disk(2.0, 0.2).unwrap();
        let cb = CoefficientField::checkerboard(2, 1.0, 1.0, 2.0).unwrap();
        let fields: Vec<Box<dyn Coefficients>> = vec![
            Box::new(diag(1.0, 2.0)),
            Box::new(CoefficientField::conic_decay(DMatrix::identity(2, 2), 1.0, 1.0).unwrap()),
            Box::new(mollify(&cb, 0.1, 2.0, 1.0).unwrap()),
            Box::new(cb),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for f in &fields {
            let u: Vec<f64> = (0..mesh.vertex_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..mesh.vertex_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = energy_forms(f.as_ref(), &u, &v, 2.0, &mesh).unwrap();
            assert!(p.relative_difference() < FORM_TOLERANCE);
            let form = EnergyForm::new(&mesh, f.as_ref()).unwrap();
            let mut prev = 0.0;
            for t in [0.25, 0.5, 1.0, 1.5, 2.0] {
                let e = form.energy(&u, &u, t).unwrap();
                assert!(e >= prev);
                prev = e;
            }
        }
    }
}
