//! Solution spaces of polynomial growth, their Dirichlet-Gram matrices and
//! the inequalities relating Gram growth to boundary spectra.

mod report;

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::counting::{eigen_rootsum_lower_bound, GrowthPartition};
use crate::error::{invalid, Error, Result};
use crate::fields::{CoefficientField, Coefficients, Family};
use crate::geometry::EnergyForm;
use crate::pde::{mesh_disk_with_rings, DirichletSolver, DiskMesh, Sym2};
use crate::spectral::{boundary_spectrum, BoundarySpectrum};

pub use report::{theorem2_report, BoundReport, CheckResult, DimRow, DimSource, ReportConfig, RhsTrace};

/// Gram matrices with a larger condition number count as degenerate.
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Cos,
    Sin,
    /// Linear combination produced by orthonormalization.
    Mixed,
}

#[derive(Debug, Clone, Serialize)]
pub struct BasisMember {
    /// Degree of the boundary trace (highest degree involved for mixed members).
    pub degree: u32,
    pub mode: Mode,
    #[serde(skip)]
    pub values: Vec<f64>,
    /// Interpolated value at the origin before it was subtracted.
    pub origin_value: f64,
    pub growth_exponent: Option<f64>,
}

/// Dirichlet solutions with traces `R^p cos pθ`, `R^p sin pθ` on `∂B(R)`, shifted to vanish at 0.
#[derive(Clone)]
pub struct HarmonicBasis<'a> {
    field: &'a dyn Coefficients,
    radius: f64,
    mesh: Arc<DiskMesh>,
    coefficients: Arc<Vec<Sym2>>,
    members: Vec<BasisMember>,
    orthonormal_at: Option<f64>,
    warnings: Vec<String>,
}

impl std::fmt::Debug for HarmonicBasis<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HarmonicBasis")
            .field("field", &self.field.name())
            .field("radius", &self.radius)
            .field("members", &self.members)
            .field("orthonormal_at", &self.orthonormal_at)
            .finish()
    }
}

impl<'a> HarmonicBasis<'a> {
    pub fn field(&self) -> &'a dyn Coefficients {
        self.field
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn mesh(&self) -> &Arc<DiskMesh> {
        &self.mesh
    }

    pub fn coefficients(&self) -> &Arc<Vec<Sym2>> {
        &self.coefficients
    }

    pub fn members(&self) -> &[BasisMember] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Radius at which the members are `D_t`-orthonormal, if any.
    pub fn orthonormal_at(&self) -> Option<f64> {
        self.orthonormal_at
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn max_degree(&self) -> u32 {
        self.members.iter().map(|m| m.degree).max().unwrap_or(0)
    }

    /// The members with the given indices.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.members.len()) {
            return Err(invalid(format!("basis has no member {bad}")));
        }
        let mut out = self.clone();
        out.members = indices.iter().map(|&i| self.members[i].clone()).collect();
        Ok(out)
    }

    /// Members whose trace degree is at most `p`.
    pub fn up_to_degree(&self, p: u32) -> Self {
        let mut out = self.clone();
        out.members.retain(|m| m.degree <= p);
        out
    }

    fn functions(&self) -> Vec<&[f64]> {
        self.members.iter().map(|m| m.values.as_slice()).collect()
    }

    fn energy_form(&self) -> EnergyForm<'_> {
        EnergyForm::from_coefficients(&self.mesh, self.coefficients.as_ref().clone())
    }

    /// Recombines the members with `transform` (columns are new members).
    fn recombine(&self, transform: &DMatrix<f64>, orthonormal_at: Option<f64>) -> Self {
        let k = self.members.len();
        let nv = self.mesh.vertex_count();
        let members = (0..transform.ncols())
            .map(|j| {
                let mut values = vec![0.0; nv];
                let mut degree = 0;
                for i in 0..k {
                    let c = transform[(i, j)];
                    if c != 0.0 {
                        degree = degree.max(self.members[i].degree);
                        values.iter_mut().zip(&self.members[i].values).for_each(|(v, u)| *v += c * u);
                    }
                }
                BasisMember { degree, mode: Mode::Mixed, values, origin_value: 0.0, growth_exponent: None }
            })
            .collect();
        Self { members, orthonormal_at, ..self.clone() }
    }

    /// `D_t`-orthonormal recombination of the members.
    pub fn orthonormalized(&self, t: f64) -> Result<Self> {
        let g = gram_matrix(self, t)?.matrix;
        let l = g.cholesky().ok_or_else(|| Error::RankDeficient(format!("D_{t} Gram is not positive definite")))?.l();
        let linv = l
            .solve_lower_triangular(&DMatrix::identity(self.len(), self.len()))
            .ok_or_else(|| Error::RankDeficient("singular Cholesky factor".into()))?;
        Ok(self.recombine(&linv.transpose(), Some(t)))
    }

    /// Removes from each member its `D_rho`-projection onto the members of lower degree.
    ///
    /// The span is unchanged. Lower-degree parts picked up from the Dirichlet data at `R`
    /// would otherwise dominate the growth of higher-degree members inside the disk.
    pub fn graded(&self, rho: f64) -> Result<Self> {
        let g = gram_matrix(self, rho)?.matrix;
        let k = self.len();
        let mut transform = DMatrix::identity(k, k);
        for (i, m) in self.members.iter().enumerate() {
            let lower: Vec<usize> = (0..k).filter(|&j| self.members[j].degree < m.degree).collect();
            if lower.is_empty() {
                continue;
            }
            let gll = DMatrix::from_fn(lower.len(), lower.len(), |a, b| g[(lower[a], lower[b])]);
            let gli = DVector::from_fn(lower.len(), |a, _| g[(lower[a], i)]);
            let c = gll
                .svd(true, true)
                .solve(&gli, 1e-12 * g.diagonal().max())
                .map_err(|e| Error::RankDeficient(format!("lower-degree projection: {e}")))?;
            for (a, &j) in lower.iter().enumerate() {
                transform[(j, i)] = -c[a];
            }
        }
        let mut out = self.recombine(&transform, None);
        for (new, old) in out.members.iter_mut().zip(&self.members) {
            new.mode = old.mode;
        }
        Ok(out)
    }

    /// `sup_{∂B(r)} |u|` for every member, sampled at `samples` angles.
    pub fn circle_sup(&self, r: f64, samples: usize) -> Result<Vec<f64>> {
        self.mesh.ensure_covers(r)?;
        self.members
            .iter()
            .map(|m| {
                (0..samples)
                    .map(|j| {
                        let th = 2.0 * PI * j as f64 / samples as f64;
                        self.mesh
                            .interpolate(&m.values, [r * th.cos(), r * th.sin()])
                            .map(f64::abs)
                            .ok_or(Error::MeshCoverage { mesh_radius: self.radius, radius: r })
                    })
                    .try_fold(0.0f64, |acc, v| v.map(|v| acc.max(v)))
            })
            .collect()
    }

    /// Log-log slope of `sup_{∂B(r)}|u|` over `radii`, stored on each member.
    pub fn measure_growth(&mut self, radii: &[f64]) -> Result<()> {
        if radii.len() < 2 {
            return Err(invalid("growth measurement needs at least two radii"));
        }
        let sups: Vec<Vec<f64>> = radii.iter().map(|&r| self.circle_sup(r, 512)).collect::<Result<_>>()?;
        let xs: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
        for (i, m) in self.members.iter_mut().enumerate() {
            let ys: Vec<f64> = sups.iter().map(|s| s[i].max(f64::MIN_POSITIVE).ln()).collect();
            m.growth_exponent = Some(least_squares_slope(&xs, &ys));
        }
        Ok(())
    }
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// `Re`, `Im` of `(x + iy)^p`.
fn complex_power(x: f64, y: f64, p: u32) -> (f64, f64) {
    let (mut re, mut im) = (1.0, 0.0);
    for _ in 0..p {
        (re, im) = (re * x - im * y, re * y + im * x);
    }
    (re, im)
}

/// Solves the Dirichlet problem for every circular harmonic of degree `1..=d` on `∂B(R)`.
pub fn build_polynomial_basis<'a>(field: &'a dyn Coefficients, d: u32, radius: f64, mesh: Arc<DiskMesh>) -> Result<HarmonicBasis<'a>> {
    if d < 1 {
        return Err(invalid("the basis needs degree d ≥ 1"));
    }
    if field.dim() != 2 {
        return Err(invalid("solution bases are planar (n = 2)"));
    }
    if (mesh.radius() - radius).abs() > 1e-12 * radius {
        return Err(invalid(format!("mesh radius {} does not match R = {radius}", mesh.radius())));
    }
    let solver = DirichletSolver::new(mesh.clone(), field)?;
    let jobs: Vec<(u32, Mode)> = (1..=d).flat_map(|p| [(p, Mode::Cos), (p, Mode::Sin)]).collect();
    let members = jobs
        .par_iter()
        .map(|&(p, mode)| {
            let sol = solver.solve_with(|x, y| {
                let (re, im) = complex_power(x, y, p);
                if mode == Mode::Cos {
                    re
                } else {
                    im
                }
            })?;
            let origin = mesh.interpolate(&sol.values, [0.0, 0.0]).expect("the origin is inside the mesh");
            let values = sol.values.iter().map(|v| v - origin).collect();
            Ok(BasisMember { degree: p, mode, values, origin_value: origin, growth_exponent: None })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut basis = HarmonicBasis {
        field,
        radius,
        coefficients: solver.coefficients().clone(),
        mesh,
        members,
        orthonormal_at: None,
        warnings: Vec::new(),
    };
    let g = gram_matrix(&basis, radius)?;
    if !(g.condition <= CONDITION_LIMIT) {
        basis.warnings.push(format!("near-dependent basis: Gram condition number {:.3e} at R = {radius}", g.condition));
    }
    Ok(basis)
}

/// Mesh of `B(R)` that resolves the jump circles of radial fields.
pub fn mesh_for_field(field: &CoefficientField, radius: f64, h: f64) -> Result<Arc<DiskMesh>> {
    let rings: Vec<f64> = match field.family() {
        Family::RadialPiecewise { breakpoints, .. } => breakpoints.iter().copied().filter(|&b| b < radius).collect(),
        _ => Vec::new(),
    };
    Ok(Arc::new(mesh_disk_with_rings(radius, h, &rings)?))
}

#[derive(Debug, Clone, Serialize)]
pub struct GramRecord {
    pub t: f64,
    #[serde(serialize_with = "serialize_matrix")]
    pub matrix: DMatrix<f64>,
    /// `ln det D_t`; `-inf` when the matrix is not positive definite.
    pub log_det: f64,
    /// `ln det_{D_{r0}} D_t` for the reference radius of a series.
    pub log_det_rel: Option<f64>,
    pub condition: f64,
}

fn serialize_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    rows.serialize(s)
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let ev = SymmetricEigen::new(m.clone()).eigenvalues;
    let (lo, hi) = ev.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v.abs())));
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// `D_t(u_i, u_j)` for the basis members.
pub fn gram_matrix(basis: &HarmonicBasis<'_>, t: f64) -> Result<GramRecord> {
    if !(t > 0.0) || t > basis.radius * (1.0 + 1e-12) {
        return Err(invalid(format!("radius {t} is outside (0, R = {}]", basis.radius)));
    }
    let matrix = basis.energy_form().gram(&basis.functions(), t)?;
    let log_det = match matrix.clone().cholesky() {
        Some(c) => 2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>(),
        None => f64::NEG_INFINITY,
    };
    let condition = condition_number(&matrix);
    Ok(GramRecord { t, matrix, log_det, log_det_rel: None, condition })
}

/// Gram records over `radii`, with log-determinants relative to the first radius.
pub fn gram_series(basis: &HarmonicBasis<'_>, radii: &[f64]) -> Result<Vec<GramRecord>> {
    let mut records: Vec<GramRecord> = radii.par_iter().map(|&t| gram_matrix(basis, t)).collect::<Result<_>>()?;
    if let Some(reference) = records.first().map(|r| r.log_det) {
        for r in &mut records {
            r.log_det_rel = Some(r.log_det - reference);
        }
    }
    Ok(records)
}

/// `n` radii spaced geometrically from `a` to `b`.
pub fn geometric_radii(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| if i + 1 == n { b } else { a * (b / a).powf(i as f64 / (n - 1) as f64) }).collect()
}

/// Exponent `s` for the block structure of a basis with degrees `1..=d`, two members per degree.
pub fn planar_growth_budget(d: u32) -> Result<f64> {
    let partition = GrowthPartition::unit(d)?.with_block_dims(vec![2; d as usize])?;
    Ok(partition.growth_exponent(2).expect("block dimensions are set"))
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthFit {
    pub slope: f64,
    pub s: f64,
    /// `s − slope`.
    pub margin: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub radii: Vec<f64>,
    pub excluded_radii: Vec<f64>,
    /// `(ln r, ln det_{D_{r0}} D_r)` pairs used in the fit.
    pub series: Vec<(f64, f64)>,
}

/// Least-squares slope of `ln det_{D_{r0}} D_r` against `ln r`, with `r0` the first record.
pub fn det_growth_exponent(records: &[GramRecord], s: f64, tolerance: f64) -> Result<GrowthFit> {
    if records.len() < 4 {
        return Err(invalid("the growth fit needs at least four radii"));
    }
    if records.windows(2).any(|w| w[0].t >= w[1].t) {
        return Err(invalid("radii must be increasing"));
    }
    let reference = records[0].log_det;
    if !reference.is_finite() || !(records[0].condition <= CONDITION_LIMIT) {
        return Err(Error::RankDeficient(format!("reference Gram at r0 = {} is degenerate", records[0].t)));
    }
    let (used, excluded): (Vec<&GramRecord>, Vec<&GramRecord>) =
        records.iter().partition(|r| r.log_det.is_finite() && r.condition <= CONDITION_LIMIT);
    if used.len() < 4 {
        return Err(Error::RankDeficient(format!("only {} non-degenerate radii", used.len())));
    }
    let series: Vec<(f64, f64)> = used.iter().map(|r| (r.t.ln(), r.log_det - reference)).collect();
    let xs: Vec<f64> = series.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = series.iter().map(|p| p.1).collect();
    let slope = least_squares_slope(&xs, &ys);
    Ok(GrowthFit {
        slope,
        s,
        margin: s - slope,
        tolerance,
        pass: slope <= s + tolerance,
        radii: used.iter().map(|r| r.t).collect(),
        excluded_radii: excluded.iter().map(|r| r.t).collect(),
        series,
    })
}

const GAUSS4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_85),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_85),
];

/// `B_jk = ∮_{∂B(t)} w·a∇u_j·∇u_k ds`, which equals `∮ ⟨∇u_j, ∇u_k⟩_g φ dA_g`.
fn boundary_gradient_matrix(basis: &HarmonicBasis<'_>, t: f64) -> Result<DMatrix<f64>> {
    basis.mesh.ensure_covers(t)?;
    let k = basis.len();
    let arcs = basis.mesh.circle_arcs(t);
    let mut out = DMatrix::zeros(k, k);
    let mut grads = vec![[0.0; 2]; k];
    for (e, th0, th1) in arcs {
        for (g, m) in grads.iter_mut().zip(&basis.members) {
            *g = basis.mesh.gradient(&m.values, e);
        }
        let half = 0.5 * (th1 - th0);
        for (xi, wq) in GAUSS4 {
            let th = th0 + half * (1.0 + xi);
            let (c, s) = (th.cos(), th.sin());
            let a = basis.field.eval(&[t * c, t * s]);
            let w = a[(0, 0)] * c * c + 2.0 * a[(0, 1)] * c * s + a[(1, 1)] * s * s;
            let weight = wq * half * t * w;
            let ag: Vec<[f64; 2]> = grads
                .iter()
                .map(|g| [a[(0, 0)] * g[0] + a[(0, 1)] * g[1], a[(1, 0)] * g[0] + a[(1, 1)] * g[1]])
                .collect();
            for i in 0..k {
                for j in i..k {
                    out[(i, j)] += weight * (ag[i][0] * grads[j][0] + ag[i][1] * grads[j][1]);
                }
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

/// Values of every member on the angle grid of a boundary spectrum.
fn traces_on_grid(basis: &HarmonicBasis<'_>, spectrum: &BoundarySpectrum) -> Result<DMatrix<f64>> {
    let t = spectrum.t;
    let angles = spectrum.angles();
    let mut out = DMatrix::zeros(angles.len(), basis.len());
    for (j, m) in basis.members.iter().enumerate() {
        for (i, th) in angles.iter().enumerate() {
            out[(i, j)] = basis
                .mesh
                .interpolate(&m.values, [t * th.cos(), t * th.sin()])
                .ok_or(Error::MeshCoverage { mesh_radius: basis.radius, radius: t })?;
        }
    }
    Ok(out)
}

fn random_orthogonal(k: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
    g.qr().q()
}

/// Unit vector spanning the (approximate) null space of `rows`.
fn null_vector(rows: &[Vec<f64>], k: usize) -> Vec<f64> {
    if rows.is_empty() {
        let mut v = vec![0.0; k];
        v[0] = 1.0;
        return v;
    }
    let a = DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]);
    let eig = SymmetricEigen::new(a.transpose() * &a);
    let idx = eig.eigenvalues.imin();
    eig.eigenvectors.column(idx).iter().copied().collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Lemma1Check {
    pub t: f64,
    pub k: usize,
    /// `2 Σ_{i≤k} η_i^{1/2}`.
    pub lhs: f64,
    /// `Σ ∮ |∇u_i|² φ dA` over a `D_t`-orthonormal basis.
    pub rhs: f64,
    pub margin: f64,
    pub tolerance: f64,
    /// `|RHS(UQ) − RHS(U)|/max(RHS, 1)` for a random orthogonal `Q`.
    pub invariance_deviation: f64,
    pub invariance_tolerance: f64,
    /// `∮|∇̄u_i|² − η_i∮u_i²` (discrete forms) for the constructed basis, relative to their scale.
    pub construction_margins: Vec<f64>,
    pub grid_size: usize,
    pub pass: bool,
}

pub const LEMMA1_TOLERANCE: f64 = 1e-3;

/// Both sides of the Lemma 1 inequality on `∂B(t)` for the span of the basis.
pub fn lemma1_check(basis: &HarmonicBasis<'_>, t: f64, spectrum: &BoundarySpectrum, seed: u64) -> Result<Lemma1Check> {
    let k = basis.len();
    if k == 0 {
        return Err(invalid("empty basis"));
    }
    if spectrum.count() < k {
        return Err(invalid(format!("spectrum has {} eigenvalues, need {k}", spectrum.count())));
    }
    if (spectrum.t - t).abs() > 1e-12 * t {
        return Err(invalid("spectrum was computed on a different circle"));
    }
    if t >= basis.radius {
        return Err(invalid("the circle must lie strictly inside B(R)"));
    }
    let g = gram_matrix(basis, t)?.matrix;
    let l = g.cholesky().ok_or_else(|| Error::RankDeficient(format!("D_{t} Gram is not positive definite")))?.l();
    let c = l
        .solve_lower_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::RankDeficient("singular Cholesky factor".into()))?
        .transpose();
    let b = boundary_gradient_matrix(basis, t)?;
    let rhs = (c.transpose() * &b * &c).trace();
    let cq = &c * random_orthogonal(k, seed);
    let rhs_q = (cq.transpose() * &b * &cq).trace();
    let lhs = 2.0 * spectrum.eigenvalues[..k].iter().map(|e| e.max(0.0).sqrt()).sum::<f64>();

    // u_k, …, u_1: each M-orthogonal to the eigenvectors w_j (j < i) and D-orthogonal to the later ones.
    let traces = traces_on_grid(basis, spectrum)? * &c;
    let mw: Vec<Vec<f64>> = spectrum.eigenvectors[..k - 1].iter().map(|w| spectrum.mass.mul(w)).collect();
    let constraint: Vec<Vec<f64>> =
        mw.iter().map(|v| (0..k).map(|j| traces.column(j).iter().zip(v).map(|(a, b)| a * b).sum()).collect()).collect();
    let mut chosen: Vec<Vec<f64>> = Vec::new();
    let mut construction_margins = vec![0.0; k];
    for i in (0..k).rev() {
        let rows: Vec<Vec<f64>> = constraint[..i].iter().chain(chosen.iter()).cloned().collect();
        let y = null_vector(&rows, k);
        let f: Vec<f64> = (0..traces.nrows()).map(|r| (0..k).map(|j| traces[(r, j)] * y[j]).sum()).collect();
        let kf = spectrum.stiffness.form(&f, &f);
        let mf = spectrum.mass.form(&f, &f);
        let eta = spectrum.eigenvalues[i];
        construction_margins[i] = (kf - eta * mf) / (kf + eta.abs() * mf).max(f64::MIN_POSITIVE);
        chosen.push(y);
    }

    let margin = rhs - lhs;
    let invariance_deviation = (rhs_q - rhs).abs() / rhs.max(1.0);
    let pass = margin >= -LEMMA1_TOLERANCE && invariance_deviation <= 1e-8 && construction_margins.iter().all(|&m| m >= -1e-8);
    Ok(Lemma1Check {
        t,
        k,
        lhs,
        rhs,
        margin,
        tolerance: LEMMA1_TOLERANCE,
        invariance_deviation,
        invariance_tolerance: 1e-8,
        construction_margins,
        grid_size: spectrum.grid_size,
        pass,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct IntegratedCheck {
    pub r0: f64,
    pub r: f64,
    pub k: usize,
    pub lambda_r0: f64,
    #[serde(rename = "Lambda_r0")]
    pub big_lambda_r0: f64,
    /// `2λ_{r0}·(root-sum bound at h'_d)·ln(r/r0)`.
    pub chain_lower: f64,
    /// `2∫ Σ η_i^{1/2} dt`.
    pub lhs: f64,
    /// `Λ_{r0} ln det_{D_{r0}} D_r`.
    pub rhs: f64,
    /// `rhs − lhs`.
    pub margin: f64,
    /// `lhs − chain_lower`.
    pub chain_margin: f64,
    pub tolerance: f64,
    pub points_per_octave: f64,
    pub grid_size: usize,
    pub pass: bool,
    /// `(t, Σ η_i^{1/2}(t))`.
    pub series: Vec<(f64, f64)>,
}

pub const MIN_POINTS_PER_OCTAVE: usize = 8;
pub const INTEGRATED_TOLERANCE: f64 = 1e-3;

/// `2∫_{r0}^r Σ η_i^{1/2} dt ≤ Λ_{r0} ln det_{D_{r0}} D_r`, with the eigenvalue lower chain.
///
/// The radial integral uses the trapezoidal rule in `ln t` over `radius_grid`.
pub fn integrated_eigen_check(basis: &HarmonicBasis<'_>, r0: f64, r: f64, radius_grid: &[f64], grid_size: usize) -> Result<IntegratedCheck> {
    if !(r0 > 0.0 && r0 < r) {
        return Err(invalid("need 0 < r0 < r"));
    }
    if r > basis.radius * (1.0 + 1e-12) {
        return Err(invalid("r exceeds the basis radius"));
    }
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b;
    if radius_grid.len() < 2 || !close(radius_grid[0], r0) || !close(*radius_grid.last().unwrap(), r) {
        return Err(invalid("radius grid must run from r0 to r"));
    }
    if radius_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("radius grid must be increasing"));
    }
    let points_per_octave = (radius_grid.len() - 1) as f64 / (r / r0).log2();
    if points_per_octave < MIN_POINTS_PER_OCTAVE as f64 {
        return Err(Error::CoarseGrid { points_per_octave, required: MIN_POINTS_PER_OCTAVE });
    }
    let k = basis.len();
    let field = basis.field;
    let sums: Vec<f64> = radius_grid
        .par_iter()
        .map(|&t| {
            let s = boundary_spectrum(field, t, k, grid_size)?;
            Ok(s.eigenvalues.iter().map(|e| e.max(0.0).sqrt()).sum())
        })
        .collect::<Result<_>>()?;
    let mut integral = 0.0;
    for i in 1..radius_grid.len() {
        let (a, b) = (radius_grid[i - 1], radius_grid[i]);
        integral += 0.5 * (b / a).ln() * (sums[i - 1] * a + sums[i] * b);
    }
    let lhs = 2.0 * integral;
    let records = gram_series(basis, &[r0, r])?;
    let log_det = records[1].log_det_rel.expect("set by gram_series");
    let (lambda_r0, big_lambda_r0) = field.analytic_bounds_outside(r0).unwrap_or_else(|| field.bounds());
    let rhs = big_lambda_r0 * log_det;
    let chain_lower = 2.0 * lambda_r0 * eigen_rootsum_lower_bound(2, k as u64)? * (r / r0).ln();
    let margin = rhs - lhs;
    let chain_margin = lhs - chain_lower;
    Ok(IntegratedCheck {
        r0,
        r,
        k,
        lambda_r0,
        big_lambda_r0,
        chain_lower,
        lhs,
        rhs,
        margin,
        chain_margin,
        tolerance: INTEGRATED_TOLERANCE,
        points_per_octave,
        grid_size,
        pass: margin >= -INTEGRATED_TOLERANCE && chain_margin >= -INTEGRATED_TOLERANCE,
        series: radius_grid.iter().copied().zip(sums).collect(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DimConfig {
    /// Outer radius `R` of the basis.
    pub radius: f64,
    pub h: f64,
    /// Radius of the Gram used for the rank.
    pub r0: f64,
    /// Number of radii in the growth window `[1, R/2]`.
    pub growth_radii: usize,
    /// Relative singular-value cutoff.
    pub rank_threshold: f64,
    /// Members with growth exponent up to `p + exponent_margin` count toward `h_p`.
    pub exponent_margin: f64,
    /// Circles the mesh should resolve.
    pub interfaces: Vec<f64>,
    /// Radius of the Gram used to strip lower-degree parts before measuring growth.
    pub grading_radius: f64,
}

impl Default for DimConfig {
    fn default() -> Self {
        Self { radius: 4.0, h: 0.1, r0: 1.0, growth_radii: 8, rank_threshold: 1e-6, exponent_margin: 0.5, interfaces: Vec::new(), grading_radius: 0.5 }
    }
}

impl DimConfig {
    /// Defaults with the jump circles of radial fields added.
    pub fn for_field(field: &CoefficientField) -> Self {
        let interfaces = match field.family() {
            Family::RadialPiecewise { breakpoints, .. } => breakpoints.clone(),
            _ => Vec::new(),
        };
        Self { interfaces, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.radius >= 2.0 && self.h > 0.0 && self.r0 > 0.0 && self.r0 < self.radius) {
            return Err(invalid("need R ≥ 2, h > 0 and 0 < r0 < R"));
        }
        if !(self.grading_radius > 0.0 && self.grading_radius < self.radius) {
            return Err(invalid("the grading radius must lie in (0, R)"));
        }
        if self.growth_radii < 2 || !(self.rank_threshold > 0.0 && self.rank_threshold < 1.0) || !(self.exponent_margin > 0.0) {
            return Err(invalid("invalid growth window or rank threshold"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DegreeEstimate {
    pub degree: u32,
    /// `1 + rank` of the filtered Gram.
    pub estimate: u64,
    pub kept: usize,
    pub rank: usize,
    /// Singular values of the diagonally scaled Gram relative to the largest.
    pub relative_singular_values: Vec<f64>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DimEstimate {
    pub field_name: String,
    pub config: DimConfig,
    pub mesh_vertices: usize,
    pub members: Vec<BasisMember>,
    pub per_degree: Vec<DegreeEstimate>,
}

impl DimEstimate {
    pub fn estimate(&self, p: u32) -> Option<u64> {
        self.per_degree.iter().find(|e| e.degree == p).map(|e| e.estimate)
    }

    pub fn flagged(&self) -> bool {
        self.per_degree.iter().any(|e| !e.flags.is_empty())
    }
}

/// Numerical `h_p` for `p = 0..=d` from growth-filtered solution bases.
pub fn estimate_dims(field: &dyn Coefficients, d: u32, config: &DimConfig) -> Result<DimEstimate> {
    config.validate()?;
    if d > 4 {
        return Err(invalid(format!("dimension estimates are limited to d ≤ 4 (got {d})")));
    }
    let zero = DegreeEstimate { degree: 0, estimate: 1, kept: 0, rank: 0, relative_singular_values: Vec::new(), flags: Vec::new() };
    if d == 0 {
        return Ok(DimEstimate { field_name: field.name().into(), config: config.clone(), mesh_vertices: 0, members: Vec::new(), per_degree: vec![zero] });
    }
    let rings: Vec<f64> = config.interfaces.iter().copied().filter(|&b| b > 0.0 && b < config.radius).collect();
    let mesh = Arc::new(mesh_disk_with_rings(config.radius, config.h, &rings)?);
    let mut basis = build_polynomial_basis(field, d, config.radius, mesh.clone())?.graded(config.grading_radius)?;
    basis.measure_growth(&geometric_radii(1.0, 0.5 * config.radius, config.growth_radii))?;
    let mut per_degree = vec![zero];
    for p in 1..=d {
        let cutoff = f64::from(p) + config.exponent_margin;
        let mut flags = Vec::new();
        let mut kept = Vec::new();
        for (i, m) in basis.members().iter().enumerate() {
            let e = m.growth_exponent.expect("measured above");
            if (e - cutoff).abs() < 0.1 {
                flags.push(format!("near-threshold member (degree {}, {:?}): exponent {e:.4} vs cutoff {cutoff}", m.degree, m.mode));
            }
            if e <= cutoff {
                kept.push(i);
            }
        }
        let (rank, rel) = if kept.is_empty() {
            (0, Vec::new())
        } else {
            let g = gram_matrix(&basis.subset(&kept)?, config.r0)?.matrix;
            scaled_rank(&g, config.rank_threshold, &mut flags)
        };
        per_degree.push(DegreeEstimate { degree: p, estimate: 1 + rank as u64, kept: kept.len(), rank, relative_singular_values: rel, flags });
    }
    Ok(DimEstimate {
        field_name: field.name().into(),
        config: config.clone(),
        mesh_vertices: mesh.vertex_count(),
        members: basis.members().to_vec(),
        per_degree,
    })
}

/// Rank of `S G S` with `S = diag(G)^{-1/2}` at a relative cutoff, flagging values within a decade.
fn scaled_rank(g: &DMatrix<f64>, threshold: f64, flags: &mut Vec<String>) -> (usize, Vec<f64>) {
    let k = g.nrows();
    let s: Vec<f64> = (0..k).map(|i| 1.0 / g[(i, i)].max(f64::MIN_POSITIVE).sqrt()).collect();
    let scaled = DMatrix::from_fn(k, k, |i, j| s[i] * g[(i, j)] * s[j]);
    let mut sv: Vec<f64> = SymmetricEigen::new(scaled).eigenvalues.iter().map(|v| v.abs()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let top = sv[0].max(f64::MIN_POSITIVE);
    let rel: Vec<f64> = sv.iter().map(|v| v / top).collect();
    for &v in &rel {
        if v > 0.1 * threshold && v < 10.0 * threshold {
            flags.push(format!("ambiguous rank: relative singular value {v:.3e} within a decade of {threshold:e}"));
        }
    }
    (rel.iter().filter(|&&v| v > threshold).count(), rel)
}
