//! Spectrum of the weighted boundary operator `φ⁻¹div(φ∇̄)` on circles `∂B(t)`.
//!
//! On `∂B(t)` the Rayleigh quotient reduces to
//! `∮ κ (df/ds)² ds / ∮ f² ds` with `κ = φ/√(τᵀgτ)`, using `φ dA_g = ds`.
//! It is discretized with periodic P1 elements on a uniform angle grid.

use std::f64::consts::PI;
use std::fmt::Write as _;

use faer::{Mat, Side};
use serde::Serialize;

use crate::counting::sphere_eigenvalue;
use crate::error::{invalid, Error, Result};
use crate::fields::{CoefficientQuadrature, Coefficients};
use crate::geometry::conformal_data;

/// Largest grid handled by the dense generalized eigensolver.
pub const DENSE_GRID_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenMethod {
    Dense,
    Bisection,
}

/// Symmetric cyclic tridiagonal matrix: `diag[j]`, and `off[j]` coupling `j` and `j+1 mod N`.
#[derive(Debug, Clone, PartialEq)]
pub struct CyclicTridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl CyclicTridiagonal {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|j| {
                let prev = (j + n - 1) % n;
                self.diag[j] * x[j] + self.off[j] * x[(j + 1) % n] + self.off[prev] * x[prev]
            })
            .collect()
    }

    pub fn form(&self, x: &[f64], y: &[f64]) -> f64 {
        self.mul(y).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    fn shifted(&self, mass: &Self, sigma: f64) -> Self {
        Self {
            diag: self.diag.iter().zip(&mass.diag).map(|(k, m)| k - sigma * m).collect(),
            off: self.off.iter().zip(&mass.off).map(|(k, m)| k - sigma * m).collect(),
        }
    }
}

/// Symmetric elimination of a cyclic tridiagonal matrix, bordering the last row.
struct BorderedLdl {
    pivots: Vec<f64>,
    /// `(i, i+1)` entries after elimination.
    upper: Vec<f64>,
    /// `(i, N−1)` entries after elimination.
    border: Vec<f64>,
}

fn safe_pivot(p: f64, scale: f64) -> f64 {
    if p.abs() < f64::EPSILON * scale {
        if p < 0.0 {
            -f64::EPSILON * scale
        } else {
            f64::EPSILON * scale
        }
    } else {
        p
    }
}

impl BorderedLdl {
    fn new(t: &CyclicTridiagonal) -> Self {
        let n = t.len();
        assert!(n >= 3, "cyclic systems need at least three nodes");
        let scale = t.diag.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let mut pivots = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut border = vec![0.0; n];
        let mut p = t.diag[0];
        let mut f = t.off[n - 1];
        let mut last = t.diag[n - 1];
        for i in 0..n - 2 {
            p = safe_pivot(p, scale);
            pivots[i] = p;
            upper[i] = t.off[i];
            border[i] = f;
            last -= f * f / p;
            let next_p = t.diag[i + 1] - t.off[i] * t.off[i] / p;
            let carry = if i + 1 == n - 2 { t.off[n - 2] } else { 0.0 };
            f = carry - t.off[i] * f / p;
            p = next_p;
        }
        p = safe_pivot(p, scale);
        pivots[n - 2] = p;
        border[n - 2] = f;
        last -= f * f / p;
        pivots[n - 1] = safe_pivot(last, scale);
        Self { pivots, upper, border }
    }

    fn negative_count(&self) -> usize {
        self.pivots.iter().filter(|&&p| p < 0.0).count()
    }

    /// Applies the inverse of the unit lower factor in place.
    fn forward(&self, y: &mut [f64]) {
        let n = y.len();
        for i in 0..n - 2 {
            let l_next = self.upper[i] / self.pivots[i];
            let l_last = self.border[i] / self.pivots[i];
            y[i + 1] -= l_next * y[i];
            y[n - 1] -= l_last * y[i];
        }
        y[n - 1] -= self.border[n - 2] / self.pivots[n - 2] * y[n - 2];
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let mut y = rhs.to_vec();
        self.forward(&mut y);
        let mut x = vec![0.0; n];
        x[n - 1] = y[n - 1] / self.pivots[n - 1];
        x[n - 2] = (y[n - 2] - self.border[n - 2] * x[n - 1]) / self.pivots[n - 2];
        for i in (0..n - 2).rev() {
            x[i] = (y[i] - self.upper[i] * x[i + 1] - self.border[i] * x[n - 1]) / self.pivots[i];
        }
        x
    }
}

/// Low end of the spectrum of the discretized boundary operator.
#[derive(Debug, Clone)]
pub struct BoundarySpectrum {
    pub t: f64,
    pub field_name: String,
    pub grid_size: usize,
    pub method: EigenMethod,
    /// `η_1 ≤ … ≤ η_m`.
    pub eigenvalues: Vec<f64>,
    /// Nodal eigenvectors, orthonormal in the Euclidean mass form.
    pub eigenvectors: Vec<Vec<f64>>,
    pub stiffness: CyclicTridiagonal,
    pub mass: CyclicTridiagonal,
}

impl BoundarySpectrum {
    pub fn count(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Grid angles `θ_j = 2πj/N`.
    pub fn angles(&self) -> Vec<f64> {
        grid_angles(self.grid_size)
    }

    /// CSV table `k,eta,oracle,margin` against the bound `λ²·η_k(1)/t²`.
    pub fn to_csv(&self, lambda_r0: f64) -> String {
        let mut out = String::from("k,eta,oracle,margin\n");
        for m in verify_eigen_lower_bound(self, lambda_r0, self.t) {
            let _ = writeln!(out, "{},{:.16e},{:.16e},{:.16e}", m.k, m.eta, m.oracle, m.margin);
        }
        out
    }
}

fn grid_angles(n: usize) -> Vec<f64> {
    (0..n).map(|j| 2.0 * PI * j as f64 / n as f64).collect()
}

/// `κ = φ/√(τᵀgτ)` and `μ = φ√(τᵀgτ)` at angle `θ` on `∂B(t)`.
fn tangential_weights(field: &dyn Coefficients, t: f64, theta: f64) -> Result<(f64, f64)> {
    let x = [t * theta.cos(), t * theta.sin()];
    let c = conformal_data(field, &x)?;
    let tau = [-theta.sin(), theta.cos()];
    let g = &c.g;
    let gtt = tau[0] * (g[(0, 0)] * tau[0] + g[(0, 1)] * tau[1]) + tau[1] * (g[(1, 0)] * tau[0] + g[(1, 1)] * tau[1]);
    let s = gtt.sqrt();
    Ok((c.phi / s, c.phi * s))
}

/// Element averages of `(κ, μ)` over each grid cell.
fn cell_weights(field: &dyn Coefficients, t: f64, n: usize) -> Result<Vec<(f64, f64)>> {
    let dtheta = 2.0 * PI / n as f64;
    let ds = t * dtheta;
    (0..n)
        .map(|j| {
            let mid = (j as f64 + 0.5) * dtheta;
            let sub = match field.quadrature() {
                CoefficientQuadrature::Layered { width } => {
                    let x = [t * mid.cos(), t * mid.sin()];
                    if field.feature_distance(&x) < ds + width {
                        ((ds / (0.25 * width)).ceil() as usize).clamp(1, 256)
                    } else {
                        1
                    }
                }
                _ => 1,
            };
            let mut acc = (0.0, 0.0);
            for q in 0..sub {
                let theta = j as f64 * dtheta + (q as f64 + 0.5) * dtheta / sub as f64;
                let (k, m) = tangential_weights(field, t, theta)?;
                acc.0 += k;
                acc.1 += m;
            }
            Ok((acc.0 / sub as f64, acc.1 / sub as f64))
        })
        .collect()
}

fn assemble(weights: &[f64], ds: f64, stiffness: bool) -> CyclicTridiagonal {
    let n = weights.len();
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n];
    for j in 0..n {
        let k = (j + 1) % n;
        let (d, o) = if stiffness { (weights[j] / ds, -weights[j] / ds) } else { (weights[j] * ds / 3.0, weights[j] * ds / 6.0) };
        diag[j] += d;
        diag[k] += d;
        off[j] += o;
    }
    CyclicTridiagonal { diag, off }
}

/// Mass matrix assembled with the weight `φ dA_g` instead of `ds`.
pub fn weighted_mass(field: &dyn Coefficients, t: f64, grid_size: usize) -> Result<CyclicTridiagonal> {
    check_inputs(field, t, 1, grid_size)?;
    let ds = 2.0 * PI * t / grid_size as f64;
    let mu: Vec<f64> = cell_weights(field, t, grid_size)?.into_iter().map(|w| w.1).collect();
    Ok(assemble(&mu, ds, false))
}

/// Euclidean consistent mass matrix on `∂B(t)`.
pub fn euclidean_mass(t: f64, grid_size: usize) -> CyclicTridiagonal {
    let ds = 2.0 * PI * t / grid_size as f64;
    assemble(&vec![1.0; grid_size], ds, false)
}

fn check_inputs(field: &dyn Coefficients, t: f64, m: usize, grid_size: usize) -> Result<()> {
    if field.dim() != 2 {
        return Err(invalid("the boundary eigensolver is planar (n = 2)"));
    }
    if !field.has_boundary_traces() {
        return Err(Error::NoTraces(field.name().to_string()));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(invalid("radius must be positive"));
    }
    if m < 1 {
        return Err(invalid("need at least one eigenvalue"));
    }
    if grid_size < 8 * m {
        return Err(invalid(format!("grid size {grid_size} cannot resolve {m} modes (need at least {})", 8 * m)));
    }
    Ok(())
}

/// First `m` eigenvalues of the weighted boundary operator on `∂B(t)`.
pub fn boundary_spectrum(field: &dyn Coefficients, t: f64, m: usize, grid_size: usize) -> Result<BoundarySpectrum> {
    check_inputs(field, t, m, grid_size)?;
    let ds = 2.0 * PI * t / grid_size as f64;
    let kappa: Vec<f64> = cell_weights(field, t, grid_size)?.into_iter().map(|w| w.0).collect();
    let stiffness = assemble(&kappa, ds, true);
    let mass = euclidean_mass(t, grid_size);
    let (method, (eigenvalues, eigenvectors)) = if grid_size <= DENSE_GRID_LIMIT {
        (EigenMethod::Dense, dense_eigen(&stiffness, &mass, m)?)
    } else {
        (EigenMethod::Bisection, bisection_eigen(&stiffness, &mass, m)?)
    };
    Ok(BoundarySpectrum {
        t,
        field_name: field.name().to_string(),
        grid_size,
        method,
        eigenvalues,
        eigenvectors,
        stiffness,
        mass,
    })
}

/// Eigenvalues from the dense reduction `D^{-1/2}L⁻¹KL⁻ᵀD^{-1/2}` with `M = LDLᵀ`,
/// eigenvectors by inverse iteration on the cyclic system.
fn dense_eigen(k: &CyclicTridiagonal, m: &CyclicTridiagonal, count: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = k.len();
    let fac = BorderedLdl::new(m);
    if fac.pivots.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::Eigen("mass matrix is not positive definite".into()));
    }
    let scale: Vec<f64> = fac.pivots.iter().map(|p| p.sqrt().recip()).collect();
    let reduce = |col: &mut Vec<f64>| {
        fac.forward(col);
        col.iter_mut().zip(&scale).for_each(|(v, s)| *v *= s);
    };
    // Columns of D^{-1/2}L⁻¹K, stored as rows of its transpose.
    let mut half = Mat::<f64>::zeros(n, n);
    let mut col = vec![0.0; n];
    for j in 0..n {
        col.iter_mut().for_each(|v| *v = 0.0);
        let prev = (j + n - 1) % n;
        col[j] = k.diag[j];
        col[(j + 1) % n] += k.off[j];
        col[prev] += k.off[prev];
        reduce(&mut col);
        for (i, v) in col.iter().enumerate() {
            half[(j, i)] = *v;
        }
    }
    let mut c = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        col.iter_mut().enumerate().for_each(|(i, v)| *v = half[(i, j)]);
        reduce(&mut col);
        for (i, v) in col.iter().enumerate() {
            c[(i, j)] = *v;
        }
    }
    let c = Mat::from_fn(n, n, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]));
    let mut values = c.self_adjoint_eigenvalues(Side::Lower).map_err(|e| Error::Eigen(format!("{e:?}")))?;
    values.sort_by(f64::total_cmp);
    values.truncate(count);
    let vectors = inverse_iteration(k, m, &values)?;
    Ok((values, vectors))
}

/// Inertia bisection on `K − σM` followed by inverse iteration.
fn bisection_eigen(k: &CyclicTridiagonal, m: &CyclicTridiagonal, count: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = k.len();
    let below = |sigma: f64| BorderedLdl::new(&k.shifted(m, sigma)).negative_count();
    // Gershgorin bound for K over the smallest mass eigenvalue.
    let kmax = (0..n).map(|j| k.diag[j].abs() + k.off[j].abs() + k.off[(j + n - 1) % n].abs()).fold(0.0, f64::max);
    let mmin = (0..n).map(|j| m.diag[j] - m.off[j].abs() - m.off[(j + n - 1) % n].abs()).fold(f64::INFINITY, f64::min);
    if mmin <= 0.0 {
        return Err(Error::Eigen("mass matrix is not diagonally dominant".into()));
    }
    let upper = kmax / mmin;
    let mut values = Vec::with_capacity(count);
    for idx in 1..=count {
        let (mut lo, mut hi) = (-1e-6 * upper.max(1.0), upper * (1.0 + 1e-12));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if below(mid) >= idx {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-15 * hi.abs().max(1e-300) + f64::MIN_POSITIVE {
                break;
            }
        }
        values.push(0.5 * (lo + hi));
    }

    let vectors = inverse_iteration(k, m, &values)?;
    Ok((values, vectors))
}

/// `M`-orthonormal eigenvectors for known eigenvalues; repeated values are separated by orthogonalization.
fn inverse_iteration(k: &CyclicTridiagonal, m: &CyclicTridiagonal, values: &[f64]) -> Result<Vec<Vec<f64>>> {
    let n = k.len();
    let mass_dot = |x: &[f64], y: &[f64]| m.form(x, y);
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(values.len());
    for (idx, &eta) in values.iter().enumerate() {
        let shift = eta + 1e-9 * eta.abs().max(1.0) * if idx % 2 == 0 { 1.0 } else { -1.0 };
        let ldl = BorderedLdl::new(&k.shifted(m, shift));
        let mut x: Vec<f64> = (0..n).map(|j| ((j * 7919 + idx * 104_729) % 1000) as f64 / 1000.0 - 0.5).collect();
        for _ in 0..6 {
            for v in &vectors {
                let c = mass_dot(&x, v);
                x.iter_mut().zip(v).for_each(|(a, b)| *a -= c * b);
            }
            x = ldl.solve(&m.mul(&x));
            let norm = mass_dot(&x, &x).sqrt();
            if !(norm.is_finite() && norm > 0.0) {
                return Err(Error::Eigen("inverse iteration broke down".into()));
            }
            x.iter_mut().for_each(|v| *v /= norm);
        }
        for v in &vectors {
            let c = mass_dot(&x, v);
            x.iter_mut().zip(v).for_each(|(a, b)| *a -= c * b);
        }
        let norm = mass_dot(&x, &x).sqrt();
        x.iter_mut().for_each(|v| *v /= norm);
        vectors.push(x);
    }
    Ok(vectors)
}

/// `sphere_eigenvalue(n, k)/t²`.
pub fn euclidean_sphere_oracle(n: u32, t: f64, k: u64) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(invalid("radius must be positive"));
    }
    Ok(sphere_eigenvalue(n, k)? / (t * t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EigenMargin {
    pub k: usize,
    pub eta: f64,
    /// `η_k(1)/t²`.
    pub oracle: f64,
    /// `λ_{r0}²·η_k(1)/t²`.
    pub bound: f64,
    pub margin: f64,
}

/// Margins `η_k − λ_{r0}²η_k(1)t⁻²` of the comparison bound.
pub fn verify_eigen_lower_bound(spectrum: &BoundarySpectrum, lambda_r0: f64, t: f64) -> Vec<EigenMargin> {
    spectrum
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &eta)| {
            let oracle = sphere_eigenvalue(2, i as u64 + 1).expect("n = 2 and k ≥ 1") / (t * t);
            let bound = lambda_r0 * lambda_r0 * oracle;
            EigenMargin { k: i + 1, eta, oracle, bound, margin: eta - bound }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{mollify, CoefficientField};

    fn rel(a: f64, b: f64) -> f64 {
        if b == 0.0 {
            a.abs()
        } else {
            (a - b).abs() / b.abs()
        }
    }

    #[test]
    fn identity_circle_spectrum() {
        let id = CoefficientField::identity(2);
        let s = boundary_spectrum(&id, 1.0, 5, 2048).unwrap();
        let expected = [0.0, 1.0, 1.0, 4.0, 4.0];
        for (eta, want) in s.eigenvalues.iter().zip(expected) {
            assert!(rel(*eta, want) < 1e-3 && (want != 0.0 || eta.abs() < 1e-8), "{eta} vs {want}");
        }
        let s2 = boundary_spectrum(&id, 2.0, 3, 256).unwrap();
        for (eta, want) in s2.eigenvalues.iter().zip([0.0, 0.25, 0.25]) {
            assert!((eta - want).abs() < 1e-3);
        }
        // Constant eigenvector.
        let v = &s.eigenvectors[0];
        assert!(v.iter().all(|x| (x - v[0]).abs() < 1e-8 * v[0].abs()));
    }

    #[test]
    fn scalar_field_scaling_law() {
        for c in [2.0, 0.5, 3.0] {
            let f = CoefficientField::scalar(2, c).unwrap();
            let s = boundary_spectrum(&f, 1.5, 9, 1024).unwrap();
            for (k, eta) in s.eigenvalues.iter().enumerate().skip(1) {
                let want = c * c * sphere_eigenvalue(2, k as u64 + 1).unwrap() / 2.25;
                assert!(rel(*eta, want) < 1e-3);
            }
        }
    }

    #[test]
    fn bisection_agrees_with_dense() {
        let fields = [
            CoefficientField::diagonal(&[1.0, 2.0]).unwrap(),
            CoefficientField::conic_decay(nalgebra::DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]), 1.5, 0.7)
                .unwrap(),
        ];
        for f in &fields {
            let ds = 2.0 * PI / 512.0;
            let kappa: Vec<f64> = cell_weights(f, 1.0, 512).unwrap().into_iter().map(|w| w.0).collect();
            let k = assemble(&kappa, ds, true);
            let m = euclidean_mass(1.0, 512);
            let (dv, dvec) = dense_eigen(&k, &m, 12).unwrap();
            let (bv, bvec) = bisection_eigen(&k, &m, 12).unwrap();
            for i in 0..12 {
                assert!((dv[i] - bv[i]).abs() < 1e-8 * dv[i].abs().max(1.0), "{i}: {} vs {}", dv[i], bv[i]);
                // Rayleigh quotient of the inverse-iteration vector.
                let rq = k.form(&bvec[i], &bvec[i]) / m.form(&bvec[i], &bvec[i]);
                assert!((rq - dv[i]).abs() < 1e-7 * dv[i].abs().max(1.0));
                assert!((m.form(&dvec[i], &dvec[i]) - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn large_grid_uses_bisection() {
        let id = CoefficientField::identity(2);
        let s = boundary_spectrum(&id, 1.0, 5, 8192).unwrap();
        assert_eq!(s.method, EigenMethod::Bisection);
        for (eta, want) in s.eigenvalues.iter().zip([0.0, 1.0, 1.0, 4.0, 4.0]) {
            assert!((eta - want).abs() < 1e-6, "{eta}");
        }
    }

    #[test]
    fn refinement_does_not_raise_eigenvalues() {
        let f = CoefficientField::conic_decay(nalgebra::DMatrix::identity(2, 2), 1.0, 1.0).unwrap();
        let coarse = boundary_spectrum(&f, 1.0, 8, 256).unwrap();
        let fine = boundary_spectrum(&f, 1.0, 8, 512).unwrap();
        for (c, f) in coarse.eigenvalues.iter().zip(&fine.eigenvalues) {
            assert!(*f <= c + 1e-6 * c.max(1.0));
        }
    }

    #[test]
    fn weighted_mass_equals_euclidean_mass() {
        let fields = [
            CoefficientField::diagonal(&[1.0, 4.0]).unwrap(),
            CoefficientField::seeded_random(0.5, 2.0, 0.3, 4).unwrap(),
        ];
        for f in &fields {
            let m = mollify(f, 0.1, 2.0, 1.0).unwrap();
            let w = weighted_mass(&m, 1.3, 512).unwrap();
            let e = euclidean_mass(1.3, 512);
            let dev = w.diag.iter().zip(&e.diag).chain(w.off.iter().zip(&e.off)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(dev < 1e-12, "{dev}");
        }
    }

    #[test]
    fn comparison_bound_margins() {
        let id = CoefficientField::identity(2);
        let s = boundary_spectrum(&id, 1.0, 9, 1024).unwrap();
        assert!(verify_eigen_lower_bound(&s, 1.0, 1.0).iter().all(|m| m.margin.abs() < 1e-3 * m.oracle.max(1.0)));
        let d = CoefficientField::diagonal(&[1.0, 2.0]).unwrap();
        let s = boundary_spectrum(&d, 1.0, 50, 2048).unwrap();
        assert!(verify_eigen_lower_bound(&s, 1.0, 1.0).iter().all(|m| m.margin >= -1e-6));
    }

    #[test]
    fn rejects_fields_without_traces() {
        let cb = CoefficientField::checkerboard(2, 1.0, 1.0, 2.0).unwrap();
        assert!(matches!(boundary_spectrum(&cb, 1.0, 3, 64), Err(Error::NoTraces(_))));
        let m = mollify(&cb, 0.1, 2.0, 0.5).unwrap();
        let s = boundary_spectrum(&m, 1.0, 3, 512).unwrap();
        assert!(s.eigenvalues[0].abs() < 1e-8);
        assert!(boundary_spectrum(&CoefficientField::identity(2), 1.0, 10, 64).is_err());
    }

    #[test]
    fn sphere_oracle_examples() {
        assert_eq!(euclidean_sphere_oracle(2, 1.0, 4).unwrap(), 4.0);
        assert_eq!(euclidean_sphere_oracle(2, 2.0, 4).unwrap(), 1.0);
        assert_eq!(euclidean_sphere_oracle(3, 1.0, 5).unwrap(), 6.0);
    }
}
