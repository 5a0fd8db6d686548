use std::fmt::Write as _;
use std::path::Path;

use lharmonic::counting::GrowthPartition;
use lharmonic::dimension::{
    build_polynomial_basis, det_growth_exponent, estimate_dims, geometric_radii, gram_series, integrated_eigen_check, lemma1_check,
    mesh_for_field, planar_growth_budget, theorem2_report, CheckResult, DimRow, ReportConfig,
};
use lharmonic::fields::{bounds_outside, ellipticity_profile, mollify, CoefficientField, Coefficients, MollifiedField, ProfileOptions};
use lharmonic::pde::{write_solution_csv, DirichletSolver};
use lharmonic::spectral::{boundary_spectrum, verify_eigen_lower_bound};
use serde_json::json;

use crate::output::{config, load_field, margin_csv, num, positive, Failure, Row, Sink};
use crate::{DimsArgs, Eigen28Args, Growth21Args, IntegratedArgs, Lemma1Args, ProfileArgs, SolveArgs, SpectrumArgs, Theorem2Args};

/// Radius of the annulus on which mollified fields keep the exterior bounds.
const MOLLIFIER_R0: f64 = 1.0;

/// Smooths fields without boundary traces; others are used as given.
fn smoothed(field: &CoefficientField, epsilon: f64, radius: f64) -> Result<Option<MollifiedField>, Failure> {
    if field.has_boundary_traces() {
        return Ok(None);
    }
    let epsilon = positive("epsilon", epsilon)?;
    Ok(Some(mollify(field, epsilon, radius, MOLLIFIER_R0.min(0.5 * radius))?))
}

fn working<'a>(field: &'a CoefficientField, mollified: &'a Option<MollifiedField>) -> &'a dyn Coefficients {
    match mollified {
        Some(m) => m,
        None => field,
    }
}

fn field_record(field: &CoefficientField, mollified: &Option<MollifiedField>) -> serde_json::Value {
    json!({ "spec": field.describe(), "mollified_epsilon": mollified.as_ref().map(|m| m.epsilon) })
}

fn opt(v: Option<u64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn dims_csv(rows: &[DimRow]) -> String {
    let mut out = String::from("d,exact,estimated,flags\n");
    for r in rows {
        let flags = r.flags.join("; ").replace('"', "'");
        let flags = if flags.is_empty() { flags } else { format!("\"{flags}\"") };
        let _ = writeln!(out, "{},{},{},{flags}", r.degree, opt(r.exact), opt(r.estimated));
    }
    out
}

pub fn dims(a: &DimsArgs) -> Result<bool, Failure> {
    let field = load_field(&a.common.field)?;
    let sink = Sink::new(a.common.out.as_deref())?;
    let mut cfg = ReportConfig::for_field(&field);
    cfg.numerics = a.numerics;
    cfg.seed = a.common.seed;
    if let Some(h) = a.h {
        cfg.dims.h = positive("h", h)?;
    }
    if let Some(r) = a.r {
        cfg.dims.radius = positive("r", r)?;
    }
    let n = field.dim() as u32;
    let estimable = n == 2 && a.d <= 4;

    if a.d == 0 {
        let exact = if field.is_constant() { Some(1) } else { None };
        let estimated = if estimable { estimate_dims(&field, 0, &cfg.dims)?.estimate(0) } else { None };
        let rows = vec![DimRow { degree: 0, exact, estimated, used: 1, flags: Vec::new() }];
        sink.table("dims.csv", &dims_csv(&rows))?;
        sink.json("report.json", &json!({ "field": field.describe(), "n": n, "d": 0, "dims": rows, "checks": [], "pass": true }))?;
        return Ok(true);
    }

    let mut report = theorem2_report(&field, a.d, None, &cfg)?;
    if estimable && report.dims.iter().any(|r| r.estimated.is_none()) {
        let est = estimate_dims(&field, a.d, &cfg.dims)?;
        for row in &mut report.dims {
            row.estimated = est.estimate(row.degree);
            if let Some(e) = est.per_degree.iter().find(|e| e.degree == row.degree) {
                row.flags = e.flags.clone();
            }
        }
        for row in &report.dims {
            if let (Some(x), Some(e)) = (row.exact, row.estimated) {
                let lhs = (e as f64 - x as f64).abs();
                report.checks.push(CheckResult {
                    name: "estimate_matches_exact".into(),
                    lhs,
                    rhs: 0.0,
                    margin: -lhs,
                    tolerance: 0.0,
                    pass: lhs == 0.0,
                    parameters: json!({ "degree": row.degree }),
                });
            }
        }
        report.pass = report.checks.iter().all(|c| c.pass);
    }
    sink.table("dims.csv", &dims_csv(&report.dims))?;
    sink.json("report.json", &report)?;
    for c in report.failed_checks() {
        eprintln!("check {} failed: lhs {} rhs {}", c.name, c.lhs, c.rhs);
    }
    Ok(report.pass)
}

fn finish(sink: &Sink, stem: &str, rows: &[Row], detail: serde_json::Value) -> Result<bool, Failure> {
    sink.table(&format!("{stem}.csv"), &margin_csv(rows))?;
    sink.json(&format!("{stem}.json"), &json!({ "rows": rows, "detail": detail }))?;
    Ok(rows.iter().all(|r| r.pass))
}

pub fn lemma1(a: &Lemma1Args) -> Result<bool, Failure> {
    let field = load_field(&a.common.field)?;
    let sink = Sink::new(a.common.out.as_deref())?;
    let t = positive("t", a.t)?;
    let radius = a.r.unwrap_or((2.0 * t).max(4.0));
    if radius <= t {
        return Err(config(format!("basis radius {radius} must exceed t = {t}")));
    }
    if a.d == 0 {
        return Err(config("--d must be at least 1"));
    }
    let mollified = smoothed(&field, a.mollify.epsilon, radius)?;
    let w = working(&field, &mollified);
    let mesh = mesh_for_field(&field, radius, positive("h", a.h)?)?;
    let basis = build_polynomial_basis(w, a.d, radius, mesh)?;
    let spectrum = boundary_spectrum(w, t, basis.len(), a.grid)?;
    let check = lemma1_check(&basis, t, &spectrum, a.common.seed)?;

    let mut rows = vec![
        Row::new("lemma1", check.lhs, check.rhs, check.tolerance),
        Row::new("invariance", check.invariance_deviation, 0.0, check.invariance_tolerance),
    ];
    for (i, m) in check.construction_margins.iter().enumerate() {
        rows.push(Row::new(format!("construction_{}", i + 1), -m, 0.0, 1e-8));
    }
    let tol = a.tol.map(|t| positive("tol", t)).transpose()?;
    let rows: Vec<Row> = rows.into_iter().map(|r| r.with_tolerance(tol)).collect();
    let detail = json!({ "field": field_record(&field, &mollified), "basis_radius": radius, "h": a.h, "check": check });
    finish(&sink, "lemma1", &rows, detail)
}

pub fn eigen28(a: &Eigen28Args) -> Result<bool, Failure> {
    let field = load_field(&a.common.field)?;
    let sink = Sink::new(a.common.out.as_deref())?;
    let t = positive("t", a.t)?;
    let r0 = positive("r0", a.r0)?;
    if t < r0 {
        return Err(config(format!("t = {t} must be at least r0 = {r0}")));
    }
    if a.k == 0 {
        return Err(config("--k must be at least 1"));
    }
    let tol = positive("tol", a.tol)?;
    let grid = a.grid.unwrap_or((8 * a.k).max(512));
    let (lambda_r0, _) = bounds_outside(&field, r0)?;
    let mollified = smoothed(&field, a.mollify.epsilon, (2.0 * t).max(4.0))?;
    let spectrum = boundary_spectrum(working(&field, &mollified), t, a.k, grid)?;
    let margins = verify_eigen_lower_bound(&spectrum, lambda_r0, t);

    let mut csv = String::from("k,eta,oracle,bound,margin,tolerance,pass\n");
    for m in &margins {
        let _ = writeln!(csv, "{},{},{},{},{},{},{}", m.k, num(m.eta), num(m.oracle), num(m.bound), num(m.margin), num(tol), m.margin >= -tol);
    }
    sink.table("eigen28.csv", &csv)?;
    let detail = json!({
        "field": field_record(&field, &mollified),
        "t": t, "r0": r0, "lambda_r0": lambda_r0, "grid": grid, "tolerance": tol, "margins": margins,
    });
    sink.json("eigen28.json", &detail)?;
    Ok(margins.iter().all(|m| m.margin >= -tol))
}

pub fn growth21(a: &Growth21Args) -> Result<bool, Failure> {
    let field = load_field(&a.common.field)?;
    let sink = Sink::new(a.common.out.as_deref())?;
    let r = positive("r", a.r)?;
    let r0 = positive("r0", a.r0)?;
    if r0 >= r {
        return Err(config(format!("r0 = {r0} must be below r = {r}")));
    }
    if a.d == 0 {
        return Err(config("--d must be at least 1"));
    }
    let mesh = mesh_for_field(&field, r, positive("h", a.h)?)?;
    let basis = build_polynomial_basis(&field, a.d, r, mesh)?;
    let records = gram_series(&basis, &geometric_radii(r0, r, a.points))?;
    let s = planar_growth_budget(a.d)?;
    let tol = a.tol.map_or(Ok(0.05 * s), |t| positive("tol", t))?;
    let fit = det_growth_exponent(&records, s, tol)?;

    let mut series = String::from("t,log_det,log_det_rel,condition\n");
    for rec in &records {
        let _ = writeln!(series, "{},{},{},{}", num(rec.t), num(rec.log_det), rec.log_det_rel.map_or(String::new(), num), num(rec.condition));
    }
    sink.file("growth21_series.csv", &series)?;
    let rows = [Row::new("det_growth", fit.slope, fit.s, fit.tolerance)];
    let detail = json!({ "field": field.describe(), "d": a.d, "h": a.h, "fit": fit, "warnings": basis.warnings() });
    finish(&sink, "growth21", &rows, detail)
}

pub fn integrated(a: &IntegratedArgs) -> Result<bool, Failure> {
    let field = load_field(&a.common.field)?;
    let sink = Sink::new(a.common.out.as_deref())?;
    let r = positive("r", a.r)?;
    let r0 = positive("r0", a.r0)?;
    if r0 >= r {
        return Err(config(format!("r0 = {r0} must be below r = {r}")));
    }
    if a.d == 0 {
        return Err(config("--d must be at least 1"));
    }
    let radius = a.basis_radius.unwrap_or((2.0 * r).max(4.0));
    if radius <= r {
        return Err(config(format!("basis radius {radius} must exceed r = {r}")));
    }
    let mollified = smoothed(&field, a.mollify.epsilon, radius)?;
    let mesh = mesh_for_field(&field, radius, positive("h", a.h)?)?;
    let basis = build_polynomial_basis(working(&field, &mollified), a.d, radius, mesh)?;
    let points = ((r / r0).log2() * a.points_per_octave as f64).ceil() as usize + 1;
    let check = integrated_eigen_check(&basis, r0, r, &geometric_radii(r0, r, points), a.grid)?;

    let mut series = String::from("t,value\n");
    for (t, v) in &check.series {
        let _ = writeln!(series, "{},{}", num(*t), num(*v));
    }
    sink.file("integrated_series.csv", &series)?;
    let tol = a.tol.map(|t| positive("tol", t)).transpose()?;
    let rows: Vec<Row> = [
        Row::new("integrated", check.lhs, check.rhs, check.tolerance),
        Row::new("integrated_chain", check.chain_lower, check.lhs, check.tolerance),
    ]
    .into_iter()
    .map(|row| row.with_tolerance(tol))
    .collect();
    let detail = json!({ "field": field_record(&field, &mollified), "basis_radius": radius, "h": a.h, "check": check });
    finish(&sink, "integrated", &rows, detail)
}

pub fn theorem2(a: &Theorem2Args) -> Result<bool, Failure> {
    let field = load_field(&a.common.field)?;
    let sink = Sink::new(a.common.out.as_deref())?;
    if a.d == 0 {
        return Err(config("--d must be at least 1"));
    }
    let partition = a.partition.clone().map(GrowthPartition::new).transpose()?;
    let mut cfg = ReportConfig::for_field(&field);
    cfg.numerics = !a.skip_numerics;
    cfg.seed = a.common.seed;
    let tol = a.tol.map(|t| positive("tol", t)).transpose()?;
    let report = theorem2_report(&field, a.d, partition, &cfg)?;
    let rows: Vec<Row> = report
        .checks
        .iter()
        .map(|c| Row { check: c.name.clone(), lhs: c.lhs, rhs: c.rhs, margin: c.margin, tolerance: c.tolerance, pass: c.pass }.with_tolerance(tol))
        .collect();
    sink.file("dims.csv", &dims_csv(&report.dims))?;
    sink.json("report.json", &report)?;
    finish(&sink, "theorem2", &rows, json!({ "field": report.field, "d": a.d }))
}

pub fn spectrum(a: &SpectrumArgs) -> Result<bool, Failure> {
    let field = load_field(&a.common.field)?;
    let sink = Sink::new(a.common.out.as_deref())?;
    let t = positive("t", a.t)?;
    if a.m == 0 {
        return Err(config("--m must be at least 1"));
    }
    let r0 = positive("r0", a.r0.unwrap_or(t.min(1.0)))?;
    let grid = a.grid.unwrap_or((8 * a.m).max(512));
    let (lambda_r0, _) = bounds_outside(&field, r0)?;
    let mollified = smoothed(&field, a.mollify.epsilon, (2.0 * t).max(4.0))?;
    let spectrum = boundary_spectrum(working(&field, &mollified), t, a.m, grid)?;
    sink.table("spectrum.csv", &spectrum.to_csv(lambda_r0))?;
    sink.json(
        "spectrum.json",
        &json!({
            "field": field_record(&field, &mollified),
            "t": t, "grid": spectrum.grid_size, "method": format!("{:?}", spectrum.method),
            "r0": r0, "lambda_r0": lambda_r0, "eigenvalues": spectrum.eigenvalues,
        }),
    )?;
    Ok(true)
}

pub fn profile(a: &ProfileArgs) -> Result<bool, Failure> {
    let field = load_field(&a.common.field)?;
    let sink = Sink::new(a.common.out.as_deref())?;
    let r = positive("r", a.r)?;
    if a.points < 2 {
        return Err(config("--points must be at least 2"));
    }
    let radii: Vec<f64> = (0..a.points).map(|i| r * i as f64 / (a.points - 1) as f64).collect();
    let profile = ellipticity_profile(&field, &radii, ProfileOptions { samples_per_annulus: a.samples, r_max: None })?;
    let label = profile.provenance.label();
    let mut csv = String::from("r,lambda_r,Lambda_r,provenance\n");
    for i in 0..radii.len() {
        let _ = writeln!(csv, "{},{},{},{label}", num(radii[i]), num(profile.lambda_r[i]), num(profile.big_lambda_r[i]));
    }
    sink.table("profile.csv", &csv)?;
    sink.json("profile.json", &json!({ "field": field.describe(), "profile": profile }))?;
    Ok(true)
}

fn trace_fn(name: &str) -> Result<fn(f64, f64) -> f64, Failure> {
    Ok(match name {
        "x" => |x, _| x,
        "y" => |_, y| y,
        "xy" => |x, y| x * y,
        "x2-y2" => |x, y| x * x - y * y,
        "x3-3xy2" => |x, y| x * x * x - 3.0 * x * y * y,
        "one" => |_, _| 1.0,
        other => return Err(config(format!("unknown trace `{other}` (expected x, y, xy, x2-y2, x3-3xy2 or one)"))),
    })
}

pub fn solve(a: &SolveArgs) -> Result<bool, Failure> {
    let field = load_field(&a.common.field)?;
    let sink = Sink::new(a.common.out.as_deref())?;
    let trace = trace_fn(&a.trace)?;
    let r = positive("r", a.r)?;
    if field.dim() != 2 {
        return Err(config("the solver is planar (n = 2)"));
    }
    let mesh = mesh_for_field(&field, r, positive("h", a.h)?)?;
    let solution = DirichletSolver::new(mesh, &field)?.solve_with(trace)?;
    let dir = sink.dir().unwrap_or(Path::new("."));
    let files = write_solution_csv(dir, "solution", solution.mesh(), &solution.values)?;
    let probe = [a.probe[0], a.probe[1]];
    let value = solution.value_at(probe).ok_or_else(|| config(format!("probe ({}, {}) lies outside B({r})", probe[0], probe[1])))?;
    print!("x,y,value\n{},{},{}\n", num(probe[0]), num(probe[1]), num(value));
    sink.json(
        "solution.json",
        &json!({
            "field": field.describe(), "trace": a.trace, "r": r, "h": a.h,
            "vertices": solution.mesh().vertex_count(), "triangles": solution.mesh().triangle_count(),
            "energy": solution.energy, "residual": solution.residual, "max_principle_excess": solution.max_principle_excess,
            "probe": { "x": probe[0], "y": probe[1], "value": value },
            "files": files.iter().map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned())).collect::<Vec<_>>(),
        }),
    )?;
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_table_quotes_flags() {
        let rows = vec![
            DimRow { degree: 0, exact: Some(1), estimated: Some(1), used: 1, flags: vec![] },
            DimRow { degree: 1, exact: None, estimated: Some(3), used: 3, flags: vec!["a, b".into(), "c".into()] },
        ];
        assert_eq!(dims_csv(&rows), "d,exact,estimated,flags\n0,1,1,\n1,,3,\"a, b; c\"\n");
    }

    #[test]
    fn traces_parse() {
        assert_eq!(trace_fn("x3-3xy2").unwrap()(2.0, 1.0), 2.0);
        assert!(matches!(trace_fn("z"), Err(Failure::Config(_))));
    }
}
