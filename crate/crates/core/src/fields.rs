//! Measurable coefficient fields `(a^{ij}(x))`, their ellipticity profiles,
//! and smooth mollified replacements.
//!
//! Piecewise families evaluate with the "closed on the outer/upper side"
//! convention: at a jump the value of the cell beyond the locus is used.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{invalid, Error, Result};
use crate::linalg::{clip_spectrum, eig_range};

/// How the finite-element code should average a field over a triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoefficientQuadrature {
    /// Single centroid sample; exact for fields constant on each element.
    Centroid,
    /// Three-point rule for smooth fields.
    ThreePoint,
    /// Smooth field with transition layers of the given width near the
    /// loci reported by [`Coefficients::feature_distance`].
    Layered { width: f64 },
}

/// Anything that can serve as the coefficient matrix of `div(a∇·)`.
pub trait Coefficients: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    /// Symmetric matrix at `x`.
    fn eval(&self, x: &[f64]) -> DMatrix<f64>;
    /// Global ellipticity bounds `(λ, Λ)`.
    fn bounds(&self) -> (f64, f64);
    fn quadrature(&self) -> CoefficientQuadrature;
    /// Distance from `x` to the nearest jump locus (infinite for smooth fields).
    fn feature_distance(&self, x: &[f64]) -> f64;
    /// Whether restrictions to circles are well defined.
    fn has_boundary_traces(&self) -> bool;
    /// Whether the field is the same matrix everywhere.
    fn is_constant(&self) -> bool;
    /// Ellipticity bounds on `{|x| ≥ r}` when known in closed form.
    fn analytic_bounds_outside(&self, r: f64) -> Option<(f64, f64)>;
}

/// The shipped coefficient families.
#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    Identity,
    ConstantSpd { matrix: DMatrix<f64> },
    /// `α(ρ)·I` with `α = values[k]` on `[breakpoints[k−1], breakpoints[k])`.
    RadialPiecewise { breakpoints: Vec<f64>, values: Vec<f64> },
    /// `even` where `Σ⌊x_i/period⌋` is even, `odd` elsewhere.
    PeriodicCheckerboard { period: f64, even: DMatrix<f64>, odd: DMatrix<f64> },
    /// `base·(1 + amplitude·e^{−ρ/scale})`.
    ConicDecay { base: DMatrix<f64>, amplitude: f64, scale: f64 },
    /// Piecewise-constant SPD cells of side `cell` drawn from a seeded stream.
    SeededRandom { cell: f64 },
}

impl Family {
    pub fn tag(&self) -> &'static str {
        match self {
            Family::Identity => "identity",
            Family::ConstantSpd { .. } => "constant_spd",
            Family::RadialPiecewise { .. } => "radial_piecewise",
            Family::PeriodicCheckerboard { .. } => "periodic_checkerboard",
            Family::ConicDecay { .. } => "conic_decay",
            Family::SeededRandom { .. } => "seeded_random",
        }
    }
}

/// Declared limits `λ∞`, `Λ∞` for families without a closed-form tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeclaredTail {
    pub lambda_inf: f64,
    #[serde(rename = "Lambda_inf")]
    pub big_lambda_inf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    name: String,
    n: usize,
    family: Family,
    lambda: f64,
    big_lambda: f64,
    tail: Option<DeclaredTail>,
    seed: Option<u64>,
}

fn scalar_matrix(n: usize, c: f64) -> DMatrix<f64> {
    DMatrix::from_diagonal_element(n, n, c)
}

fn check_spd(m: &DMatrix<f64>, key: &str) -> Result<()> {
    if !m.is_square() || m.nrows() < 1 {
        return Err(Error::FieldSpec { key: key.into(), message: "matrix must be square".into() });
    }
    if m.iter().any(|v| !v.is_finite()) || (m - m.transpose()).amax() > 0.0 {
        return Err(Error::FieldSpec { key: key.into(), message: "matrix must be finite and symmetric".into() });
    }
    if eig_range(m).0 <= 0.0 {
        return Err(Error::FieldSpec { key: key.into(), message: "matrix must be positive definite".into() });
    }
    Ok(())
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl CoefficientField {
    fn build(name: &str, n: usize, family: Family) -> Result<Self> {
        if n < 1 {
            return Err(invalid("dimension must be positive"));
        }
        let mut field = Self {
            name: name.to_string(),
            n,
            family,
            lambda: 0.0,
            big_lambda: 0.0,
            tail: None,
            seed: None,
        };
        field.validate_family()?;
        if let Some((lo, hi)) = field.analytic_bounds_outside(0.0) {
            field.lambda = lo;
            field.big_lambda = hi;
        }
        Ok(field)
    }

    pub fn identity(n: usize) -> Self {
        Self::build("identity", n, Family::Identity).expect("identity is valid")
    }

    pub fn constant(matrix: DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        Self::build("constant_spd", n, Family::ConstantSpd { matrix })
    }

    /// `c·I` in dimension `n`.
    pub fn scalar(n: usize, c: f64) -> Result<Self> {
        Self::constant(scalar_matrix(n, c))
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        Self::constant(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag)))
    }

    pub fn radial_piecewise(n: usize, breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Self::build("radial_piecewise", n, Family::RadialPiecewise { breakpoints, values })
    }

    /// Checkerboard of two scalar multiples of the identity.
    pub fn checkerboard(n: usize, period: f64, even: f64, odd: f64) -> Result<Self> {
        Self::build(
            "periodic_checkerboard",
            n,
            Family::PeriodicCheckerboard { period, even: scalar_matrix(n, even), odd: scalar_matrix(n, odd) },
        )
    }

    pub fn checkerboard_matrices(period: f64, even: DMatrix<f64>, odd: DMatrix<f64>) -> Result<Self> {
        let n = even.nrows();
        Self::build("periodic_checkerboard", n, Family::PeriodicCheckerboard { period, even, odd })
    }

    pub fn conic_decay(base: DMatrix<f64>, amplitude: f64, scale: f64) -> Result<Self> {
        let n = base.nrows();
        Self::build("conic_decay", n, Family::ConicDecay { base, amplitude, scale })
    }

    /// Planar random field; eigenvalues of every cell lie in `[lambda, big_lambda]`.
    pub fn seeded_random(lambda: f64, big_lambda: f64, cell: f64, seed: u64) -> Result<Self> {
        if !(lambda > 0.0 && big_lambda >= lambda && big_lambda.is_finite()) {
            return Err(Error::FieldSpec { key: "lambda".into(), message: "need 0 < lambda ≤ Lambda < ∞".into() });
        }
        let mut field = Self::build("seeded_random", 2, Family::SeededRandom { cell })?;
        field.lambda = lambda;
        field.big_lambda = big_lambda;
        field.seed = Some(seed);
        Ok(field)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Widens the declared global bounds; they must contain the family's range.
    pub fn with_bounds(mut self, lambda: f64, big_lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && big_lambda >= lambda && big_lambda.is_finite()) {
            return Err(Error::FieldSpec { key: "lambda".into(), message: "need 0 < lambda ≤ Lambda < ∞".into() });
        }
        let (lo, hi) = match self.analytic_bounds_outside(0.0) {
            Some(b) => b,
            None => (self.lambda, self.big_lambda),
        };
        if lambda > lo * (1.0 + 1e-12) {
            return Err(Error::FieldSpec {
                key: "lambda".into(),
                message: format!("declared {lambda} exceeds the field's minimum eigenvalue {lo}"),
            });
        }
        if big_lambda < hi * (1.0 - 1e-12) {
            return Err(Error::FieldSpec {
                key: "Lambda".into(),
                message: format!("declared {big_lambda} is below the field's maximum eigenvalue {hi}"),
            });
        }
        self.lambda = lambda;
        self.big_lambda = big_lambda;
        Ok(self)
    }

    pub fn with_tail(mut self, tail: DeclaredTail) -> Result<Self> {
        if !(tail.lambda_inf >= self.lambda && tail.big_lambda_inf <= self.big_lambda && tail.lambda_inf <= tail.big_lambda_inf)
        {
            return Err(Error::FieldSpec {
                key: "tail".into(),
                message: "need lambda ≤ lambda_inf ≤ Lambda_inf ≤ Lambda".into(),
            });
        }
        self.tail = Some(tail);
        Ok(self)
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn declared_tail(&self) -> Option<DeclaredTail> {
        self.tail
    }

    fn validate_family(&self) -> Result<()> {
        let n = self.n;
        let param = |k: &str, m: &str| Error::FieldSpec { key: format!("params.{k}"), message: m.to_string() };
        match &self.family {
            Family::Identity => Ok(()),
            Family::ConstantSpd { matrix } => {
                check_spd(matrix, "params.matrix")?;
                if matrix.nrows() != n {
                    return Err(param("matrix", "matrix size must equal n"));
                }
                Ok(())
            }
            Family::RadialPiecewise { breakpoints, values } => {
                if values.len() != breakpoints.len() + 1 {
                    return Err(param("values", "need exactly one more value than breakpoints"));
                }
                if breakpoints.iter().any(|b| !(b.is_finite() && *b > 0.0))
                    || breakpoints.windows(2).any(|w| w[0] >= w[1])
                {
                    return Err(param("breakpoints", "breakpoints must be positive and strictly increasing"));
                }
                if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(param("values", "values must be positive"));
                }
                Ok(())
            }
            Family::PeriodicCheckerboard { period, even, odd } => {
                if !(period.is_finite() && *period > 0.0) {
                    return Err(param("period", "period must be positive"));
                }
                check_spd(even, "params.values")?;
                check_spd(odd, "params.values")?;
                if even.nrows() != n || odd.nrows() != n {
                    return Err(param("values", "matrix size must equal n"));
                }
                Ok(())
            }
            Family::ConicDecay { base, amplitude, scale } => {
                check_spd(base, "params.base")?;
                if base.nrows() != n {
                    return Err(param("base", "matrix size must equal n"));
                }
                if !(amplitude.is_finite() && *amplitude > -1.0) {
                    return Err(param("amplitude", "amplitude must exceed -1"));
                }
                if !(scale.is_finite() && *scale > 0.0) {
                    return Err(param("scale", "scale must be positive"));
                }
                Ok(())
            }
            Family::SeededRandom { cell } => {
                if n != 2 {
                    return Err(Error::FieldSpec { key: "n".into(), message: "seeded_random is planar (n = 2)".into() });
                }
                if !(cell.is_finite() && *cell > 0.0) {
                    return Err(param("cell", "cell size must be positive"));
                }
                Ok(())
            }
        }
    }

    fn random_cell(&self, i: i64, j: i64) -> DMatrix<f64> {
        let seed = self.seed.unwrap_or(0);
        let key = splitmix(seed ^ splitmix((i as u64).wrapping_mul(0x9E37_79B9) ^ splitmix(j as u64)));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let l1 = rng.random_range(self.lambda..=self.big_lambda);
        let l2 = rng.random_range(self.lambda..=self.big_lambda);
        let angle = rng.random_range(0.0..PI);
        let (c, s) = (angle.cos(), angle.sin());
        let a = l1 * c * c + l2 * s * s;
        let b = (l1 - l2) * c * s;
        let d = l1 * s * s + l2 * c * c;
        DMatrix::from_row_slice(2, 2, &[a, b, b, d])
    }

    /// Spacing of the jump lattice for planar lattice families.
    fn lattice_spacing(&self) -> Option<f64> {
        match &self.family {
            Family::PeriodicCheckerboard { period, .. } => Some(*period),
            Family::SeededRandom { cell } => Some(*cell),
            _ => None,
        }
    }

    /// Total length of jump loci inside `B(r)` (planar fields).
    pub fn discontinuity_length(&self, r: f64) -> f64 {
        match &self.family {
            Family::RadialPiecewise { breakpoints, .. } => {
                breakpoints.iter().filter(|&&b| b < r).map(|b| 2.0 * PI * b).sum()
            }
            Family::PeriodicCheckerboard { .. } | Family::SeededRandom { .. } => {
                let p = self.lattice_spacing().expect("lattice family");
                let kmax = (r / p).floor() as i64;
                let chords: f64 = (-kmax..=kmax)
                    .map(|k| {
                        let c = k as f64 * p;
                        2.0 * (r * r - c * c).max(0.0).sqrt()
                    })
                    .sum();
                2.0 * chords
            }
            _ => 0.0,
        }
    }

    fn radial_value(breakpoints: &[f64], values: &[f64], rho: f64) -> f64 {
        values[breakpoints.partition_point(|&b| b <= rho)]
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn lattice_distance(x: &[f64], p: f64) -> f64 {
    x.iter()
        .map(|&t| {
            let k = (t / p).round();
            (t - k * p).abs()
        })
        .fold(f64::INFINITY, f64::min)
}

impl Coefficients for CoefficientField {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        debug_assert_eq!(x.len(), self.n);
        match &self.family {
            Family::Identity => DMatrix::identity(self.n, self.n),
            Family::ConstantSpd { matrix } => matrix.clone(),
            Family::RadialPiecewise { breakpoints, values } => {
                scalar_matrix(self.n, Self::radial_value(breakpoints, values, norm(x)))
            }
            Family::PeriodicCheckerboard { period, even, odd } => {
                let parity: i64 = x.iter().map(|t| (t / period).floor() as i64).sum();
                if parity.rem_euclid(2) == 0 {
                    even.clone()
                } else {
                    odd.clone()
                }
            }
            Family::ConicDecay { base, amplitude, scale } => base * (1.0 + amplitude * (-norm(x) / scale).exp()),
            Family::SeededRandom { cell } => {
                self.random_cell((x[0] / cell).floor() as i64, (x[1] / cell).floor() as i64)
            }
        }
    }

    fn bounds(&self) -> (f64, f64) {
        (self.lambda, self.big_lambda)
    }

    fn quadrature(&self) -> CoefficientQuadrature {
        match self.family {
            Family::ConicDecay { .. } => CoefficientQuadrature::ThreePoint,
            _ => CoefficientQuadrature::Centroid,
        }
    }

    fn feature_distance(&self, x: &[f64]) -> f64 {
        match &self.family {
            Family::RadialPiecewise { breakpoints, .. } => {
                let rho = norm(x);
                breakpoints.iter().map(|b| (rho - b).abs()).fold(f64::INFINITY, f64::min)
            }
            Family::PeriodicCheckerboard { period, .. } => lattice_distance(x, *period),
            Family::SeededRandom { cell } => lattice_distance(x, *cell),
            _ => f64::INFINITY,
        }
    }

    fn has_boundary_traces(&self) -> bool {
        !matches!(self.family, Family::PeriodicCheckerboard { .. } | Family::SeededRandom { .. })
    }

    fn is_constant(&self) -> bool {
        matches!(self.family, Family::Identity | Family::ConstantSpd { .. })
    }

    fn analytic_bounds_outside(&self, r: f64) -> Option<(f64, f64)> {
        match &self.family {
            Family::Identity => Some((1.0, 1.0)),
            Family::ConstantSpd { matrix } => Some(eig_range(matrix)),
            Family::RadialPiecewise { breakpoints, values } => {
                let first = breakpoints.partition_point(|&b| b <= r);
                let tail = &values[first..];
                Some((
                    tail.iter().copied().fold(f64::INFINITY, f64::min),
                    tail.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                ))
            }
            Family::PeriodicCheckerboard { even, odd, .. } => {
                let (a, b) = eig_range(even);
                let (c, d) = eig_range(odd);
                Some((a.min(c), b.max(d)))
            }
            Family::ConicDecay { base, amplitude, scale } => {
                let (lo, hi) = eig_range(base);
                let f = 1.0 + amplitude * (-r / scale).exp();
                Some((lo * f.min(1.0), hi * f.max(1.0)))
            }
            Family::SeededRandom { .. } => None,
        }
    }
}

impl CoefficientField {
    /// Closed-form limits `(λ∞, Λ∞)` where the family provides them.
    pub fn analytic_limits(&self) -> Option<(f64, f64)> {
        match &self.family {
            Family::RadialPiecewise { values, .. } => {
                let v = *values.last().expect("validated");
                Some((v, v))
            }
            Family::ConicDecay { base, .. } => Some(eig_range(base)),
            Family::SeededRandom { .. } => None,
            _ => self.analytic_bounds_outside(0.0),
        }
    }
}

// ---------------------------------------------------------------------------
// Ellipticity profile
// ---------------------------------------------------------------------------

/// Where `λ∞`, `Λ∞` came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TailProvenance {
    AnalyticTail,
    DeclaredTail,
    SampledAtRmax { r_max: f64 },
}

impl TailProvenance {
    pub fn label(&self) -> String {
        match self {
            TailProvenance::AnalyticTail => "analytic tail".into(),
            TailProvenance::DeclaredTail => "declared tail".into(),
            TailProvenance::SampledAtRmax { r_max } => format!("sampled at R_max = {r_max}"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EllipticityProfile {
    pub radii: Vec<f64>,
    pub lambda_r: Vec<f64>,
    #[serde(rename = "Lambda_r")]
    pub big_lambda_r: Vec<f64>,
    pub lambda_inf: f64,
    #[serde(rename = "Lambda_inf")]
    pub big_lambda_inf: f64,
    pub ratio_inf: f64,
    pub provenance: TailProvenance,
    pub r_max: f64,
    pub samples_per_annulus: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ProfileOptions {
    pub samples_per_annulus: usize,
    /// Sampling cutoff; defaults to `max(2·r_last, r_last + 8)`.
    pub r_max: Option<f64>,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self { samples_per_annulus: 4096, r_max: None }
    }
}

const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

/// Deterministic, area-uniform sample points of the annulus `inner ≤ |x| ≤ outer`.
fn annulus_samples(n: usize, inner: f64, outer: f64, count: usize, stream: u64) -> Vec<Vec<f64>> {
    if n == 2 {
        return (0..count)
            .map(|j| {
                let u = (j as f64 + 0.5) / count as f64;
                let rho = (inner * inner + (outer * outer - inner * inner) * u).sqrt();
                let theta = j as f64 * GOLDEN_ANGLE;
                vec![rho * theta.cos(), rho * theta.sin()]
            })
            .collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    (0..count)
        .map(|_| {
            let dir: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let len = norm(&dir).max(1e-300);
            let rho = rng.random_range(inner..=outer);
            dir.iter().map(|v| v * rho / len).collect()
        })
        .collect()
}

/// `λ_r`, `Λ_r` over a radius grid together with the limits at infinity.
pub fn ellipticity_profile(
    field: &CoefficientField,
    radii: &[f64],
    options: ProfileOptions,
) -> Result<EllipticityProfile> {
    if radii.is_empty() {
        return Err(invalid("radius grid is empty"));
    }
    if radii.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || radii.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("radii must be nonnegative and strictly increasing"));
    }
    if options.samples_per_annulus < 1000 {
        return Err(invalid("sampling budget must be at least 1000 points per annulus"));
    }
    let last = *radii.last().expect("non-empty");
    let r_max = options.r_max.unwrap_or((2.0 * last).max(last + 8.0));
    if r_max <= last {
        return Err(invalid("R_max must exceed the largest radius"));
    }
    let n = field.dim();
    // Annulus i covers [radii[i], radii[i+1]); the last one runs to R_max.
    let annuli: Vec<(f64, f64)> = radii
        .iter()
        .enumerate()
        .map(|(i, &r)| (r, radii.get(i + 1).copied().unwrap_or(r_max)))
        .collect();
    let per_annulus: Vec<(f64, f64)> = annuli
        .par_iter()
        .enumerate()
        .map(|(i, &(lo, hi))| {
            annulus_samples(n, lo, hi, options.samples_per_annulus, i as u64)
                .iter()
                .map(|x| eig_range(&field.eval(x)))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (c, d)| (a.min(c), b.max(d)))
        })
        .collect();

    let mut lambda_r = vec![0.0; radii.len()];
    let mut big_lambda_r = vec![0.0; radii.len()];
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in (0..radii.len()).rev() {
        lo = lo.min(per_annulus[i].0);
        hi = hi.max(per_annulus[i].1);
        lambda_r[i] = lo;
        big_lambda_r[i] = hi;
    }
    if let Some(_) = field.analytic_bounds_outside(0.0) {
        for (i, &r) in radii.iter().enumerate() {
            let (alo, ahi) = field.analytic_bounds_outside(r).expect("analytic family");
            lambda_r[i] = lambda_r[i].min(alo);
            big_lambda_r[i] = big_lambda_r[i].max(ahi);
        }
        // Re-establish monotonicity after combining both sources.
        for i in (0..radii.len().saturating_sub(1)).rev() {
            lambda_r[i] = lambda_r[i].min(lambda_r[i + 1]);
            big_lambda_r[i] = big_lambda_r[i].max(big_lambda_r[i + 1]);
        }
    }

    let (lambda_inf, big_lambda_inf, provenance) = if let Some((a, b)) = field.analytic_limits() {
        (a, b, TailProvenance::AnalyticTail)
    } else if let Some(t) = field.declared_tail() {
        (t.lambda_inf, t.big_lambda_inf, TailProvenance::DeclaredTail)
    } else {
        let (a, b) = per_annulus[radii.len() - 1];
        (a, b, TailProvenance::SampledAtRmax { r_max })
    };

    Ok(EllipticityProfile {
        radii: radii.to_vec(),
        lambda_r,
        big_lambda_r,
        lambda_inf,
        big_lambda_inf,
        ratio_inf: big_lambda_inf / lambda_inf,
        provenance,
        r_max,
        samples_per_annulus: options.samples_per_annulus,
    })
}

/// `(λ_r, Λ_r)` at a single radius.
pub fn bounds_outside(field: &CoefficientField, r: f64) -> Result<(f64, f64)> {
    if let Some(b) = field.analytic_bounds_outside(r) {
        return Ok(b);
    }
    let p = ellipticity_profile(field, &[r], ProfileOptions::default())?;
    Ok((p.lambda_r[0], p.big_lambda_r[0]))
}

// ---------------------------------------------------------------------------
// Mollification
// ---------------------------------------------------------------------------

/// CDF of the triweight kernel `(35/32)(1−s²)³` on `[−1, 1]`.
fn smooth_step(u: f64) -> f64 {
    if u <= -1.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        let u2 = u * u;
        0.5 + 35.0 / 32.0 * u * (1.0 - u2 + 0.6 * u2 * u2 - u2 * u2 * u2 / 7.0)
    }
}

/// Smooth field `(b^{ij})` close to a measurable field off a small set.
///
/// The base field is convolved in closed form with a tensor-product
/// triweight bump of half-width `kernel_width` (radially for radial
/// families), then its eigenvalues are clipped into `[λ, Λ]` and, for
/// `|x| ≥ r0`, into `[λ_{r0}, Λ_{r0}]`.
#[derive(Debug, Clone)]
pub struct MollifiedField {
    base: CoefficientField,
    name: String,
    pub epsilon: f64,
    pub r: f64,
    pub r0: f64,
    pub kernel_width: f64,
    pub discontinuity_length: f64,
    /// Upper bound for the measure of the set where `|a − b| ≥ ε`.
    pub exceptional_set_measure: f64,
    pub annulus_bounds: (f64, f64),
}

/// Kernel widths below this fraction of the radius are treated as unresolvable.
const MIN_RELATIVE_WIDTH: f64 = 1e-9;

pub fn mollify(field: &CoefficientField, epsilon: f64, r: f64, r0: f64) -> Result<MollifiedField> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(invalid("epsilon must be positive"));
    }
    if !(r0 > 0.0 && r0 < r && r.is_finite()) {
        return Err(invalid("need 0 < r0 < r"));
    }
    if field.dim() != 2 {
        return Err(invalid("mollification is implemented for planar fields"));
    }
    let length = field.discontinuity_length(r);
    let spacing = match field.family() {
        Family::RadialPiecewise { breakpoints, .. } => {
            let gaps = breakpoints.windows(2).map(|w| w[1] - w[0]);
            gaps.fold(breakpoints.first().copied().unwrap_or(f64::INFINITY), f64::min)
        }
        _ => field.lattice_spacing().unwrap_or(f64::INFINITY),
    };
    let (width, measure) = if length > 0.0 {
        let w = (epsilon / (4.0 * length)).min(spacing / 4.0);
        let floor = MIN_RELATIVE_WIDTH * r.max(1.0);
        if w < floor {
            return Err(Error::MollifierBudget { required: w, floor, refinement: floor / w });
        }
        (w, 2.0 * w * length)
    } else {
        (0.0, 0.0)
    };
    let annulus_bounds = bounds_outside(field, r0)?;
    Ok(MollifiedField {
        name: format!("{}~eps={}", field.name(), epsilon),
        base: field.clone(),
        epsilon,
        r,
        r0,
        kernel_width: width,
        discontinuity_length: length,
        exceptional_set_measure: measure,
        annulus_bounds,
    })
}

impl MollifiedField {
    pub fn base(&self) -> &CoefficientField {
        &self.base
    }

    fn smoothed(&self, x: &[f64]) -> DMatrix<f64> {
        let w = self.kernel_width;
        if w == 0.0 {
            return self.base.eval(x);
        }
        match self.base.family() {
            Family::RadialPiecewise { breakpoints, values } => {
                let rho = norm(x);
                let mut alpha = values[0];
                for (k, b) in breakpoints.iter().enumerate() {
                    alpha += (values[k + 1] - values[k]) * smooth_step((rho - b) / w);
                }
                scalar_matrix(2, alpha)
            }
            Family::PeriodicCheckerboard { period, even, odd } => {
                // a = M + D·s(x)s(y) with s = ±1 square waves; the bump is separable.
                let square = |t: f64| {
                    let k = (t / period).round();
                    let sign = if (k as i64).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                    sign * (2.0 * smooth_step((t - k * period) / w) - 1.0)
                };
                let s = square(x[0]) * square(x[1]);
                (even + odd) * 0.5 + (even - odd) * (0.5 * s)
            }
            Family::SeededRandom { cell } => {
                let weights = |t: f64| {
                    let i0 = (t / cell).floor() as i64;
                    [i0 - 1, i0, i0 + 1].map(|i| {
                        let lo = i as f64 * cell;
                        (i, smooth_step((t - lo) / w) - smooth_step((t - lo - cell) / w))
                    })
                };
                let mut acc = DMatrix::zeros(2, 2);
                for (i, wx) in weights(x[0]) {
                    if wx == 0.0 {
                        continue;
                    }
                    for (j, wy) in weights(x[1]) {
                        if wy != 0.0 {
                            acc += self.base.random_cell(i, j) * (wx * wy);
                        }
                    }
                }
                acc
            }
            _ => self.base.eval(x),
        }
    }

    /// Max-entry difference `|a^{ij} − b^{ij}|` at `x`.
    pub fn deviation(&self, x: &[f64]) -> f64 {
        (self.base.eval(x) - self.eval(x)).amax()
    }
}

impl Coefficients for MollifiedField {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let (lo, hi) = self.base.bounds();
        let mut m = clip_spectrum(self.smoothed(x), lo, hi);
        if norm(x) >= self.r0 {
            m = clip_spectrum(m, self.annulus_bounds.0, self.annulus_bounds.1);
        }
        m
    }

    fn bounds(&self) -> (f64, f64) {
        self.base.bounds()
    }

    fn quadrature(&self) -> CoefficientQuadrature {
        if self.kernel_width == 0.0 {
            self.base.quadrature()
        } else {
            CoefficientQuadrature::Layered { width: self.kernel_width }
        }
    }

    fn feature_distance(&self, x: &[f64]) -> f64 {
        self.base.feature_distance(x)
    }

    fn has_boundary_traces(&self) -> bool {
        true
    }

    fn is_constant(&self) -> bool {
        self.base.is_constant()
    }

    fn analytic_bounds_outside(&self, r: f64) -> Option<(f64, f64)> {
        // Clipping keeps the mollified field inside the base bounds.
        let (lo, hi) = self.base.analytic_bounds_outside(r)?;
        if r >= self.r0 {
            Some((lo.max(self.annulus_bounds.0), hi.min(self.annulus_bounds.1)))
        } else {
            Some((lo, hi))
        }
    }
}

// ---------------------------------------------------------------------------
// Field specification files
// ---------------------------------------------------------------------------

fn spec_err(key: &str, message: impl Into<String>) -> Error {
    Error::FieldSpec { key: key.to_string(), message: message.into() }
}

fn get_f64(obj: &Map<String, Value>, key: &str, path: &str) -> Result<f64> {
    obj.get(key)
        .ok_or_else(|| spec_err(path, "missing"))?
        .as_f64()
        .ok_or_else(|| spec_err(path, "expected a number"))
}

fn parse_matrix(v: &Value, n: usize, path: &str) -> Result<DMatrix<f64>> {
    if let Some(c) = v.as_f64() {
        return Ok(scalar_matrix(n, c));
    }
    let rows = v.as_array().ok_or_else(|| spec_err(path, "expected a number or a matrix (array of rows)"))?;
    if rows.len() != n {
        return Err(spec_err(path, format!("expected {n} rows")));
    }
    let mut data = Vec::with_capacity(n * n);
    for row in rows {
        let row = row.as_array().ok_or_else(|| spec_err(path, "rows must be arrays"))?;
        if row.len() != n {
            return Err(spec_err(path, format!("expected {n} columns")));
        }
        for e in row {
            data.push(e.as_f64().ok_or_else(|| spec_err(path, "entries must be numbers"))?);
        }
    }
    let m = DMatrix::from_row_slice(n, n, &data);
    check_spd(&m, path)?;
    Ok(m)
}

fn parse_list(obj: &Map<String, Value>, key: &str, path: &str) -> Result<Vec<f64>> {
    obj.get(key)
        .ok_or_else(|| spec_err(path, "missing"))?
        .as_array()
        .ok_or_else(|| spec_err(path, "expected an array of numbers"))?
        .iter()
        .map(|v| v.as_f64().ok_or_else(|| spec_err(path, "expected an array of numbers")))
        .collect()
}

const TOP_KEYS: [&str; 7] = ["family", "n", "lambda", "Lambda", "params", "tail", "seed"];

impl CoefficientField {
    /// Parses a field specification document.
    ///
    /// Keys: `family`, `n`, `lambda`, `Lambda`, `params{…}`, `tail{…}`, `seed`.
    pub fn from_spec_str(text: &str) -> Result<Self> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| spec_err("<document>", format!("not valid JSON: {e}")))?;
        Self::from_spec_value(&value)
    }

    pub fn from_spec_value(value: &Value) -> Result<Self> {
        let obj = value.as_object().ok_or_else(|| spec_err("<document>", "expected a JSON object"))?;
        if let Some(k) = obj.keys().find(|k| !TOP_KEYS.contains(&k.as_str())) {
            return Err(spec_err(k, "unknown key"));
        }
        let family = obj
            .get("family")
            .ok_or_else(|| spec_err("family", "missing"))?
            .as_str()
            .ok_or_else(|| spec_err("family", "expected a string"))?;
        let n = obj
            .get("n")
            .ok_or_else(|| spec_err("n", "missing"))?
            .as_u64()
            .filter(|&n| n >= 1)
            .ok_or_else(|| spec_err("n", "expected a positive integer"))? as usize;
        let empty = Map::new();
        let params = match obj.get("params") {
            None => &empty,
            Some(p) => p.as_object().ok_or_else(|| spec_err("params", "expected an object"))?,
        };
        let seed = match obj.get("seed") {
            None | Some(Value::Null) => None,
            Some(s) => Some(s.as_u64().ok_or_else(|| spec_err("seed", "expected a nonnegative integer"))?),
        };
        let lambda = obj.get("lambda").map(|v| v.as_f64().ok_or_else(|| spec_err("lambda", "expected a number")));
        let big_lambda = obj.get("Lambda").map(|v| v.as_f64().ok_or_else(|| spec_err("Lambda", "expected a number")));
        let lambda = lambda.transpose()?;
        let big_lambda = big_lambda.transpose()?;

        let mut field = match family {
            "identity" => Self::identity(n),
            "constant_spd" => {
                let m = params.get("matrix").ok_or_else(|| spec_err("params.matrix", "missing"))?;
                Self::constant(parse_matrix(m, n, "params.matrix")?)?
            }
            "radial_piecewise" => Self::radial_piecewise(
                n,
                parse_list(params, "breakpoints", "params.breakpoints")?,
                parse_list(params, "values", "params.values")?,
            )?,
            "periodic_checkerboard" => {
                let period = get_f64(params, "period", "params.period")?;
                let values = params
                    .get("values")
                    .ok_or_else(|| spec_err("params.values", "missing"))?
                    .as_array()
                    .filter(|a| a.len() == 2)
                    .ok_or_else(|| spec_err("params.values", "expected [even, odd]"))?;
                Self::checkerboard_matrices(
                    period,
                    parse_matrix(&values[0], n, "params.values")?,
                    parse_matrix(&values[1], n, "params.values")?,
                )?
            }
            "conic_decay" => {
                let base = match params.get("base") {
                    Some(b) => parse_matrix(b, n, "params.base")?,
                    None => DMatrix::identity(n, n),
                };
                let amplitude = get_f64(params, "amplitude", "params.amplitude")?;
                let scale = params.get("scale").map_or(Ok(1.0), |_| get_f64(params, "scale", "params.scale"))?;
                Self::conic_decay(base, amplitude, scale)?
            }
            "seeded_random" => {
                if n != 2 {
                    return Err(spec_err("n", "seeded_random is planar (n = 2)"));
                }
                let lo = lambda.ok_or_else(|| spec_err("lambda", "required for seeded_random"))?;
                let hi = big_lambda.ok_or_else(|| spec_err("Lambda", "required for seeded_random"))?;
                let seed = seed.ok_or_else(|| spec_err("seed", "required for seeded_random"))?;
                Self::seeded_random(lo, hi, get_f64(params, "cell", "params.cell")?, seed)?
            }
            other => return Err(spec_err("family", format!("unknown family `{other}`"))),
        };
        if family != "seeded_random" {
            let (lo, hi) = field.bounds();
            field = field.with_bounds(lambda.unwrap_or(lo), big_lambda.unwrap_or(hi))?;
            field.seed = seed;
        }
        if let Some(t) = obj.get("tail") {
            let t = t.as_object().ok_or_else(|| spec_err("tail", "expected an object"))?;
            let tail = DeclaredTail {
                lambda_inf: get_f64(t, "lambda_inf", "tail.lambda_inf")?,
                big_lambda_inf: get_f64(t, "Lambda_inf", "tail.Lambda_inf")?,
            };
            field = field.with_tail(tail)?;
        }
        Ok(field)
    }

    pub fn from_spec_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("field").to_string();
        Ok(Self::from_spec_str(&text)?.with_name(stem))
    }

    /// Identification record for reports.
    pub fn describe(&self) -> Value {
        serde_json::json!({
            "name": self.name,
            "family": self.family.tag(),
            "n": self.n,
            "lambda": self.lambda,
            "Lambda": self.big_lambda,
            "seed": self.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m2(a: f64, b: f64, c: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[a, b, b, c])
    }

    #[test]
    fn eval_examples() {
        let id = CoefficientField::identity(2);
        assert_eq!(id.eval(&[3.0, -1.0]), DMatrix::identity(2, 2));
        let step = CoefficientField::radial_piecewise(2, vec![0.5], vec![1.0, 2.0]).unwrap();
        assert_eq!(step.eval(&[0.3, 0.0]), DMatrix::identity(2, 2));
        // Closed on the outer side.
        assert_eq!(step.eval(&[0.5, 0.0]), scalar_matrix(2, 2.0));
        let diag = CoefficientField::diagonal(&[1.0, 4.0]).unwrap();
        assert_eq!(diag.eval(&[0.1, 7.0]), m2(1.0, 0.0, 4.0));
    }

    #[test]
    fn checkerboard_parity_and_convention() {
        let cb = CoefficientField::checkerboard(2, 1.0, 1.0, 2.0).unwrap();
        assert_eq!(cb.eval(&[0.5, 0.5])[(0, 0)], 1.0);
        assert_eq!(cb.eval(&[-0.5, 0.5])[(0, 0)], 2.0);
        assert_eq!(cb.eval(&[-0.5, -0.5])[(0, 0)], 1.0);
        // On the locus x = 0 the value of the cell above is used.
        assert_eq!(cb.eval(&[0.0, 0.5])[(0, 0)], 1.0);
    }

    #[test]
    fn random_field_is_deterministic_and_bounded() {
        let f = CoefficientField::seeded_random(1.0, 3.0, 0.25, 7).unwrap();
        let g = CoefficientField::seeded_random(1.0, 3.0, 0.25, 7).unwrap();
        let h = CoefficientField::seeded_random(1.0, 3.0, 0.25, 8).unwrap();
        let x = [0.37, -1.2];
        assert_eq!(f.eval(&x), g.eval(&x));
        assert_ne!(f.eval(&x), h.eval(&x));
        for i in 0..500 {
            let p = [(i as f64 * 0.137).sin() * 3.0, (i as f64 * 0.291).cos() * 3.0];
            let m = f.eval(&p);
            assert_eq!(m, m.transpose());
            let (lo, hi) = eig_range(&m);
            assert!(lo >= 1.0 - 1e-12 && hi <= 3.0 + 1e-12);
        }
    }

    #[test]
    fn profile_examples() {
        let radii = [0.5, 1.0, 2.0, 4.0];
        let p = ellipticity_profile(&CoefficientField::identity(2), &radii, ProfileOptions::default()).unwrap();
        assert!(p.lambda_r.iter().chain(&p.big_lambda_r).all(|&v| v == 1.0));
        assert_eq!(p.ratio_inf, 1.0);

        let conic = CoefficientField::conic_decay(DMatrix::identity(2, 2), 1.0, 1.0).unwrap();
        let p = ellipticity_profile(&conic, &radii, ProfileOptions::default()).unwrap();
        for (i, r) in radii.iter().enumerate() {
            assert_eq!(p.lambda_r[i], 1.0);
            assert!((p.big_lambda_r[i] - (1.0 + (-r).exp())).abs() < 1e-15);
        }
        assert_eq!((p.lambda_inf, p.big_lambda_inf), (1.0, 1.0));
        assert_eq!(p.provenance, TailProvenance::AnalyticTail);

        let diag = CoefficientField::diagonal(&[1.0, 4.0]).unwrap();
        let p = ellipticity_profile(&diag, &radii, ProfileOptions::default()).unwrap();
        assert_eq!(p.lambda_r, vec![1.0; 4]);
        assert_eq!(p.big_lambda_r, vec![4.0; 4]);
        assert_eq!(p.ratio_inf, 4.0);
    }

    #[test]
    fn sampled_profile_is_monotone_and_labelled() {
        let f = CoefficientField::seeded_random(1.0, 2.0, 0.5, 3).unwrap();
        let radii: Vec<f64> = (0..8).map(|i| 0.5 * f64::from(i)).collect();
        let p = ellipticity_profile(&f, &radii, ProfileOptions { samples_per_annulus: 2000, r_max: Some(8.0) }).unwrap();
        for w in 0..radii.len() - 1 {
            assert!(p.lambda_r[w] <= p.lambda_r[w + 1]);
            assert!(p.big_lambda_r[w] >= p.big_lambda_r[w + 1]);
        }
        assert!(matches!(p.provenance, TailProvenance::SampledAtRmax { .. }));
        assert!(p.lambda_r.iter().all(|&v| v >= 1.0) && p.big_lambda_r.iter().all(|&v| v <= 2.0));
        let tailed = f.clone().with_tail(DeclaredTail { lambda_inf: 1.0, big_lambda_inf: 2.0 }).unwrap();
        let p = ellipticity_profile(&tailed, &radii, ProfileOptions { samples_per_annulus: 1000, r_max: None }).unwrap();
        assert_eq!(p.provenance, TailProvenance::DeclaredTail);
        assert_eq!(p.ratio_inf, 2.0);
    }

    #[test]
    fn profile_rejects_bad_grids() {
        let f = CoefficientField::identity(2);
        assert!(ellipticity_profile(&f, &[], ProfileOptions::default()).is_err());
        assert!(ellipticity_profile(&f, &[1.0, 1.0], ProfileOptions::default()).is_err());
        let tiny = ProfileOptions { samples_per_annulus: 10, r_max: None };
        assert!(ellipticity_profile(&f, &[1.0], tiny).is_err());
    }

    #[test]
    fn mollifying_a_constant_field_is_exact() {
        let f = CoefficientField::diagonal(&[1.0, 4.0]).unwrap();
        let m = mollify(&f, 0.1, 2.0, 1.0).unwrap();
        assert_eq!(m.exceptional_set_measure, 0.0);
        for x in [[0.0, 0.0], [1.5, -0.3], [0.2, 0.9]] {
            assert_eq!(m.eval(&x), f.eval(&x));
        }
    }

    #[test]
    fn checkerboard_mollifier_meets_measure_budget() {
        let f = CoefficientField::checkerboard(2, 1.0, 1.0, 2.0).unwrap();
        let m = mollify(&f, 0.1, 1.0, 0.5).unwrap();
        assert!(m.exceptional_set_measure <= 0.1);
        // Monte Carlo estimate of |{|a − b| ≥ ε} ∩ B(1)|.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let total = 200_000;
        let mut bad = 0usize;
        for _ in 0..total {
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            if norm(&x) < 1.0 && m.deviation(&x) >= 0.1 {
                bad += 1;
            }
        }
        let measure = 4.0 * bad as f64 / total as f64;
        assert!(measure <= 0.1, "exceptional measure {measure}");
        // Far from the loci the fields agree exactly.
        assert_eq!(m.deviation(&[0.3, 0.4]), 0.0);
    }

    #[test]
    fn mollified_eigenvalues_respect_bounds() {
        let fields = [
            CoefficientField::checkerboard(2, 1.0, 1.0, 3.0).unwrap(),
            CoefficientField::seeded_random(0.5, 2.0, 0.3, 5).unwrap(),
            CoefficientField::radial_piecewise(2, vec![0.5, 1.2], vec![1.0, 2.0, 1.5]).unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for f in &fields {
            let m = mollify(f, 0.05, 2.0, 1.0).unwrap();
            let (lo, hi) = f.bounds();
            let (alo, ahi) = m.annulus_bounds;
            for _ in 0..10_000 {
                let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
                let b = m.eval(&x);
                assert_eq!(b, b.transpose());
                let (e0, e1) = eig_range(&b);
                assert!(e0 >= lo - 1e-12 && e1 <= hi + 1e-12);
                if norm(&x) >= 1.0 {
                    assert!(e0 >= alo - 1e-12 && e1 <= ahi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn mollifier_rejects_bad_arguments() {
        let f = CoefficientField::checkerboard(2, 1.0, 1.0, 2.0).unwrap();
        assert!(mollify(&f, 0.0, 1.0, 0.5).is_err());
        assert!(mollify(&f, 0.1, 1.0, 1.0).is_err());
        assert!(matches!(mollify(&f, 1e-12, 1.0, 0.5), Err(Error::MollifierBudget { .. })));
    }

    #[test]
    fn smooth_step_is_a_cdf() {
        assert_eq!(smooth_step(-1.0), 0.0);
        assert_eq!(smooth_step(1.0), 1.0);
        assert!((smooth_step(0.0) - 0.5).abs() < 1e-15);
        let mut prev = 0.0;
        for i in 0..=200 {
            let v = smooth_step(-1.0 + i as f64 / 100.0);
            assert!(v >= prev);
            prev = v;
        }
        assert!((smooth_step(1.0 - 1e-12) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spec_parsing() {
        let f = CoefficientField::from_spec_str(
            r#"{"family":"constant_spd","n":2,"params":{"matrix":[[1,0],[0,2]]}}"#,
        )
        .unwrap();
        assert_eq!(f.bounds(), (1.0, 2.0));
        let f = CoefficientField::from_spec_str(
            r#"{"family":"radial_piecewise","n":2,"lambda":0.5,"Lambda":3,"params":{"breakpoints":[0.5],"values":[1,2]}}"#,
        )
        .unwrap();
        assert_eq!(f.bounds(), (0.5, 3.0));
        let err = |s: &str| match CoefficientField::from_spec_str(s) {
            Err(Error::FieldSpec { key, .. }) => key,
            other => panic!("expected a spec error, got {other:?}"),
        };
        assert_eq!(err(r#"{"n":2}"#), "family");
        assert_eq!(err(r#"{"family":"identity"}"#), "n");
        assert_eq!(err(r#"{"family":"identity","n":2,"colour":1}"#), "colour");
        assert_eq!(err(r#"{"family":"constant_spd","n":2,"params":{"matrix":[[1,2],[0,1]]}}"#), "params.matrix");
        assert_eq!(err(r#"{"family":"conic_decay","n":2,"params":{}}"#), "params.amplitude");
        assert_eq!(err(r#"{"family":"identity","n":2,"lambda":2}"#), "lambda");
        assert_eq!(err(r#"{"family":"seeded_random","n":2,"lambda":1,"Lambda":2,"params":{"cell":0.5}}"#), "seed");
        assert_eq!(err(r#"{"family":"warp","n":2}"#), "family");
    }
}
