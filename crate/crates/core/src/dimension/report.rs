//! Assembly of the dimension-bound report.

use num_traits::ToPrimitive;
use serde::Serialize;
use serde_json::{json, Value};

use super::{
    build_polynomial_basis, det_growth_exponent, estimate_dims, gram_series, geometric_radii, integrated_eigen_check, lemma1_check,
    mesh_for_field, planar_growth_budget, DimConfig, DimEstimate, GrowthFit, IntegratedCheck, Lemma1Check,
};
use crate::counting::{
    cumulative_harmonic_dim, liminf_bound, maximize_rhs_2_12, rhs_2_12, BoundEnvelope, GrowthPartition,
};
use crate::error::{invalid, Result};
use crate::fields::{ellipticity_profile, mollify, CoefficientField, Coefficients, ProfileOptions};
use crate::spectral::{boundary_spectrum, verify_eigen_lower_bound, EigenMargin};

#[derive(Debug, Clone, Serialize)]
pub struct ReportConfig {
    /// Run the finite-element and spectral sub-checks (planar fields only).
    pub numerics: bool,
    pub dims: DimConfig,
    /// Mollification parameter for fields without boundary traces.
    pub epsilon: f64,
    /// Degree of the basis used by the numerical sub-checks (capped by `d`).
    pub numeric_degree: u32,
    pub spectrum_grid: usize,
    pub lemma_t: f64,
    pub eigen_radii: Vec<f64>,
    pub eigen_count: usize,
    /// Outer radius of the integrated check, which starts at `dims.r0`.
    pub integrated_r: f64,
    pub points_per_octave: usize,
    pub growth_radii: usize,
    pub seed: u64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            numerics: true,
            dims: DimConfig::default(),
            epsilon: 0.05,
            numeric_degree: 2,
            spectrum_grid: 512,
            lemma_t: 1.0,
            eigen_radii: vec![1.0, 2.0],
            eigen_count: 20,
            integrated_r: 2.0,
            points_per_octave: 16,
            growth_radii: 8,
            seed: 0,
        }
    }
}

impl ReportConfig {
    pub fn for_field(field: &CoefficientField) -> Self {
        Self { dims: DimConfig::for_field(field), ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DimSource {
    /// Constant coefficients: a linear change of variables maps solutions to harmonic polynomials.
    Exact,
    Estimated,
}

#[derive(Debug, Clone, Serialize)]
pub struct DimRow {
    pub degree: u32,
    pub exact: Option<u64>,
    pub estimated: Option<u64>,
    /// The value entering the bounds.
    pub used: u64,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs − lhs`; the check passes when `margin ≥ −tolerance`.
    pub margin: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub parameters: Value,
}

impl CheckResult {
    fn new(name: &str, lhs: f64, rhs: f64, tolerance: f64, parameters: Value) -> Self {
        let margin = rhs - lhs;
        Self { name: name.into(), lhs, rhs, margin, tolerance, pass: margin >= -tolerance, parameters }
    }
}

/// Maximization of the rearranged right-hand side in `h'_d`.
#[derive(Debug, Clone, Serialize)]
pub struct RhsTrace {
    pub hprime_d: f64,
    /// `Σ (a_i − a_{i−1}) h'_{a_{i−1}}`.
    pub lhs: f64,
    /// `(d − 1 + n/2)h' − (λ∞/Λ∞)(c·h'^{n/(n−1)} − (n − 1)h')`.
    pub middle: f64,
    pub rhs_at_hprime: f64,
    pub h_opt: f64,
    pub max_value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Ellipticity {
    pub lambda_inf: f64,
    #[serde(rename = "Lambda_inf")]
    pub big_lambda_inf: f64,
    pub ratio_inf: f64,
    pub provenance: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Sharpness {
    /// `h_d / d^{n−1}`.
    pub normalized_dim: f64,
    pub liminf_bound: f64,
    /// Whether `h_d/d^{n−1} ≤ liminf·(1 + n/d)`, i.e. the bound is attained up to lower order.
    pub sharp: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Numerics {
    pub field_name: String,
    pub degree: u32,
    pub radius: f64,
    pub h: f64,
    pub mesh_vertices: usize,
    pub epsilon: Option<f64>,
    pub growth: GrowthFit,
    pub lemma1: Lemma1Check,
    pub eigen28: Vec<EigenSeries>,
    pub integrated: IntegratedCheck,
    pub estimates: Option<DimEstimate>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EigenSeries {
    pub t: f64,
    pub lambda_r0: f64,
    pub grid_size: usize,
    pub tolerance: f64,
    pub margins: Vec<EigenMargin>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub field: Value,
    pub field_name: String,
    pub n: u32,
    pub d: u32,
    pub ellipticity: Ellipticity,
    pub partition: GrowthPartition,
    pub dims_source: DimSource,
    pub dims: Vec<DimRow>,
    pub envelopes: Vec<BoundEnvelope>,
    pub maximization: RhsTrace,
    pub sharpness: Sharpness,
    pub numerics: Option<Numerics>,
    pub checks: Vec<CheckResult>,
    pub pass: bool,
}

impl BoundReport {
    pub fn failed_checks(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }

    /// `(d, h_d)` pairs.
    pub fn dims_series(&self) -> Vec<(u32, u64)> {
        self.dims.iter().map(|r| (r.degree, r.used)).collect()
    }
}

fn exact_dims(n: u32, d: u32) -> Result<Vec<u64>> {
    (0..=d)
        .map(|i| cumulative_harmonic_dim(n, i)?.to_u64().ok_or_else(|| invalid("dimension exceeds 64 bits")))
        .collect()
}

/// Dimensions, bounds and margins for degree `d`.
///
/// Constant fields use exact dimensions; other planar fields use
/// numerical estimates, which are limited to `d ≤ 4`.
pub fn theorem2_report(field: &CoefficientField, d: u32, partition: Option<GrowthPartition>, config: &ReportConfig) -> Result<BoundReport> {
    let n = field.dim() as u32;
    let partition = match partition {
        Some(p) => {
            if (p.top() - f64::from(d)).abs() > 1e-12 {
                return Err(invalid(format!("partition ends at {} but d = {d}", p.top())));
            }
            p
        }
        None => GrowthPartition::unit(d)?,
    };

    let profile = ellipticity_profile(field, &[1.0, 2.0, 4.0, 8.0], ProfileOptions::default())?;
    let ratio = profile.ratio_inf;
    let ellipticity = Ellipticity {
        lambda_inf: profile.lambda_inf,
        big_lambda_inf: profile.big_lambda_inf,
        ratio_inf: ratio,
        provenance: profile.provenance.label(),
    };

    if !field.is_constant() && (n != 2 || d > 4) {
        return Err(invalid(format!("dimension estimates need n = 2 and d ≤ 4 (got n = {n}, d = {d})")));
    }
    let numerics = if config.numerics && n == 2 { Some(run_numerics(field, d, config)?) } else { None };

    let (dims_source, dims) = if field.is_constant() {
        let exact = exact_dims(n, d)?;
        let est = numerics.as_ref().and_then(|m| m.estimates.as_ref());
        let rows: Vec<DimRow> = (0..=d)
            .map(|p| DimRow {
                degree: p,
                exact: Some(exact[p as usize]),
                estimated: est.and_then(|e| e.estimate(p)),
                used: exact[p as usize],
                flags: est.and_then(|e| e.per_degree.iter().find(|r| r.degree == p)).map(|r| r.flags.clone()).unwrap_or_default(),
            })
            .collect();
        (DimSource::Exact, rows)
    } else {
        let est = match numerics.as_ref().and_then(|m| m.estimates.clone()) {
            Some(e) => e,
            None => estimate_dims(field, d, &config.dims)?,
        };
        let rows: Vec<DimRow> = est
            .per_degree
            .iter()
            .map(|r| DimRow { degree: r.degree, exact: None, estimated: Some(r.estimate), used: r.estimate, flags: r.flags.clone() })
            .collect();
        (DimSource::Estimated, rows)
    };
    let h = |a: f64| dims[a.floor() as usize].used as f64;
    let hd = dims[d as usize].used as f64;
    let nf = f64::from(n);
    let df = f64::from(d);
    let provenance = json!({ "ratio_inf": ratio, "provenance": ellipticity.provenance, "dims": dims_source });

    let mut checks = Vec::new();
    let weighted = BoundEnvelope::weighted(n, &partition, ratio)?;
    checks.push(CheckResult::new(
        "theorem2_weighted_sum",
        partition.weighted_sum(h),
        weighted.value,
        0.0,
        json!({ "partition": partition.degrees(), "context": provenance }),
    ));
    let dim_sum = BoundEnvelope::dim_sum(n, d, ratio)?;
    let partial: f64 = (1..=d).map(|i| h(f64::from(i))).sum();
    checks.push(CheckResult::new("theorem2_dim_sum", partial, dim_sum.value, 0.0, provenance.clone()));

    let liminf = BoundEnvelope::liminf(n, ratio)?;
    checks.push(CheckResult::new(
        "liminf_partial_sum",
        nf * partial / df.powi(n as i32),
        liminf.value * (1.0 + 2.0 * nf / df).powi(n as i32),
        1e-12 * liminf.value,
        provenance.clone(),
    ));

    let hprime = |a: f64| h(a) - 1.0;
    let lhs_prime = partition.weighted_sum(hprime);
    let hp = hd - 1.0;
    let c = (crate::counting::factorial(n - 1) / 2.0).powf(1.0 / (nf - 1.0)) * (nf - 1.0) / nf;
    let middle = (df - 1.0 + nf / 2.0) * hp - (c * hp.powf(nf / (nf - 1.0)) - (nf - 1.0) * hp) / ratio;
    let rhs_at = rhs_2_12(n, df, ratio, hp)?;
    let max = maximize_rhs_2_12(n, df, ratio)?;
    let scale = 1e-12 * max.max_value.abs().max(1.0);
    checks.push(CheckResult::new("rearranged_middle", lhs_prime, middle, scale, provenance.clone()));
    checks.push(CheckResult::new("rearranged_relaxed", middle, rhs_at, scale, provenance.clone()));
    checks.push(CheckResult::new("rearranged_maximum", rhs_at, max.max_value, scale, provenance.clone()));
    let maximization = RhsTrace { hprime_d: hp, lhs: lhs_prime, middle, rhs_at_hprime: rhs_at, h_opt: max.h_opt, max_value: max.max_value };

    let normalized_dim = hd / df.powi(n as i32 - 1);
    let lb = liminf_bound(n, ratio)?;
    let sharpness = Sharpness { normalized_dim, liminf_bound: lb, sharp: d > 0 && normalized_dim <= lb * (1.0 + nf / df) };

    if let Some(m) = &numerics {
        let params = json!({ "field": m.field_name, "degree": m.degree, "R": m.radius, "h": m.h, "epsilon": m.epsilon });
        let g = &m.growth;
        checks.push(CheckResult::new("det_growth", g.slope, g.s, g.tolerance, json!({ "radii": g.radii, "setup": params })));
        let l = &m.lemma1;
        checks.push(CheckResult::new("lemma1", l.lhs, l.rhs, l.tolerance, json!({ "t": l.t, "grid": l.grid_size, "setup": params })));
        checks.push(CheckResult::new(
            "lemma1_invariance",
            l.invariance_deviation,
            0.0,
            l.invariance_tolerance,
            json!({ "t": l.t, "setup": params }),
        ));
        let worst = l.construction_margins.iter().copied().fold(f64::INFINITY, f64::min);
        checks.push(CheckResult::new("lemma1_construction", -worst, 0.0, 1e-8, json!({ "t": l.t, "setup": params })));
        for s in &m.eigen28 {
            let (lhs, rhs) = s
                .margins
                .iter()
                .map(|e| (e.bound, e.eta))
                .min_by(|a, b| (a.1 - a.0).total_cmp(&(b.1 - b.0)))
                .expect("at least one eigenvalue");
            checks.push(CheckResult::new(
                "eigen_comparison",
                lhs,
                rhs,
                s.tolerance,
                json!({ "t": s.t, "lambda_r0": s.lambda_r0, "count": s.margins.len(), "grid": s.grid_size, "setup": params }),
            ));
        }
        let ic = &m.integrated;
        let iparams = json!({ "r0": ic.r0, "r": ic.r, "points_per_octave": ic.points_per_octave, "grid": ic.grid_size, "setup": params });
        checks.push(CheckResult::new("integrated", ic.lhs, ic.rhs, ic.tolerance, iparams.clone()));
        checks.push(CheckResult::new("integrated_chain", ic.chain_lower, ic.lhs, ic.tolerance, iparams));
        if field.is_constant() {
            if let Some(est) = &m.estimates {
                for r in &est.per_degree {
                    let exact = dims[r.degree as usize].used as f64;
                    checks.push(CheckResult::new(
                        "estimate_matches_exact",
                        (r.estimate as f64 - exact).abs(),
                        0.0,
                        0.0,
                        json!({ "degree": r.degree }),
                    ));
                }
            }
        }
    }

    let pass = checks.iter().all(|c| c.pass);
    Ok(BoundReport {
        field: field.describe(),
        field_name: field.name().to_string(),
        n,
        d,
        ellipticity,
        partition,
        dims_source,
        dims,
        envelopes: vec![weighted, dim_sum, liminf],
        maximization,
        sharpness,
        numerics,
        checks,
        pass,
    })
}

fn run_numerics(field: &CoefficientField, d: u32, config: &ReportConfig) -> Result<Numerics> {
    let cfg = &config.dims;
    let mollified = if field.has_boundary_traces() { None } else { Some(mollify(field, config.epsilon, cfg.radius, cfg.r0)?) };
    let working: &dyn Coefficients = match &mollified {
        Some(m) => m,
        None => field,
    };
    let degree = d.clamp(1, config.numeric_degree.max(1));
    let mesh = mesh_for_field(field, cfg.radius, cfg.h)?;
    let basis = build_polynomial_basis(working, degree, cfg.radius, mesh.clone())?;

    let records = gram_series(&basis, &geometric_radii(cfg.r0, cfg.radius, config.growth_radii))?;
    let s = planar_growth_budget(degree)?;
    let growth = det_growth_exponent(&records, s, 0.05 * s)?;

    let lemma_spectrum = boundary_spectrum(working, config.lemma_t, basis.len(), config.spectrum_grid)?;
    let lemma1 = lemma1_check(&basis, config.lemma_t, &lemma_spectrum, config.seed)?;

    let (lambda_r0, _) = working.analytic_bounds_outside(cfg.r0).unwrap_or_else(|| working.bounds());
    let eigen28 = config
        .eigen_radii
        .iter()
        .map(|&t| {
            let grid = config.spectrum_grid.max(8 * config.eigen_count);
            let spectrum = boundary_spectrum(working, t, config.eigen_count, grid)?;
            Ok(EigenSeries { t, lambda_r0, grid_size: grid, tolerance: 1e-6, margins: verify_eigen_lower_bound(&spectrum, lambda_r0, t) })
        })
        .collect::<Result<Vec<_>>>()?;
    for s in &eigen28 {
        if s.t < cfg.r0 {
            return Err(invalid("comparison radii must lie outside r0"));
        }
    }

    let octaves = (config.integrated_r / cfg.r0).log2();
    let points = (octaves * config.points_per_octave as f64).ceil() as usize + 1;
    let grid = geometric_radii(cfg.r0, config.integrated_r, points);
    let integrated = integrated_eigen_check(&basis, cfg.r0, config.integrated_r, &grid, config.spectrum_grid)?;

    let estimates = if d <= 4 {
        Some(if mollified.is_some() { estimate_dims(working, d, cfg)? } else { estimate_dims(field, d, cfg)? })
    } else {
        None
    };

    Ok(Numerics {
        field_name: working.name().to_string(),
        degree,
        radius: cfg.radius,
        h: cfg.h,
        mesh_vertices: mesh.vertex_count(),
        epsilon: mollified.as_ref().map(|m| m.epsilon),
        growth,
        lemma1,
        eigen28,
        integrated,
        estimates,
    })
}
