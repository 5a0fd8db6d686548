//! Property tests for the invariants of each module.

use std::path::Path;
use std::sync::{Arc, LazyLock};

use lharmonic::counting::{
    cumulative_harmonic_dim, dim_sum_bound, homogeneous_harmonic_dim, liminf_bound, maximize_rhs_2_12, rhs_2_12, sphere_eigenvalue,
    weighted_dim_sum_bound, GrowthPartition,
};
use lharmonic::dimension::{build_polynomial_basis, gram_matrix, lemma1_check};
use lharmonic::fields::{ellipticity_profile, mollify, CoefficientField, Coefficients, ProfileOptions};
use lharmonic::geometry::{conformal_data, energy_forms, EnergyForm};
use lharmonic::linalg::eig_range;
use lharmonic::pde::{mesh_disk, DirichletSolver, DiskMesh};
use lharmonic::spectral::{boundary_spectrum, euclidean_mass, weighted_mass};
use num_bigint::BigUint;
use proptest::prelude::*;

fn shipped(name: &str) -> CoefficientField {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fields").join(format!("{name}.json"));
    CoefficientField::from_spec_file(&path).unwrap()
}

const NAMES: [&str; 8] = ["identity", "diag_1_2", "diag_1_4", "scalar_2", "radial_step", "checkerboard", "conic_decay", "random"];

static FIELDS: LazyLock<Vec<CoefficientField>> = LazyLock::new(|| NAMES.iter().map(|n| shipped(n)).collect());
static MESH: LazyLock<Arc<DiskMesh>> = LazyLock::new(|| Arc::new(mesh_disk(1.0, 0.1).unwrap()));

fn point(r: f64, theta: f64) -> [f64; 2] {
    [r * theta.cos(), r * theta.sin()]
}

/// Nodal values of a random smooth function on the shared mesh.
fn nodal(c: &[f64]) -> Vec<f64> {
    MESH.vertices()
        .iter()
        .map(|p| c[0] * p[0] + c[1] * p[1] + c[2] * p[0] * p[1] + c[3] * (3.0 * p[0]).sin() + c[4] * (p[1] * p[1] - p[0]).cos())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn homogeneous_dims_are_cumulative_differences(n in 2u32..=5, d in 1u32..=6) {
        let diff = cumulative_harmonic_dim(n, d).unwrap() - cumulative_harmonic_dim(n, d - 1).unwrap();
        prop_assert_eq!(diff, homogeneous_harmonic_dim(n, d).unwrap());
    }

    #[test]
    fn sphere_spectrum_multiplicities(n in 2u32..=5, q in 0u32..=5) {
        let value = f64::from(q * q + (n - 2) * q);
        let total = cumulative_harmonic_dim(n, q + 1).unwrap();
        let limit = u64::try_from(total).unwrap();
        let eigen: Vec<f64> = (1..=limit).map(|k| sphere_eigenvalue(n, k).unwrap()).collect();
        prop_assert!(eigen.windows(2).all(|w| w[0] <= w[1]));
        let count = eigen.iter().filter(|&&v| v == value).count() as u64;
        let want = if q == 0 { BigUint::from(1u8) } else { homogeneous_harmonic_dim(n, q).unwrap() };
        prop_assert_eq!(BigUint::from(count), want);
    }

    #[test]
    fn rhs_maximum_dominates(n in 2u32..=6, d in 1.0f64..60.0, ratio in 1.0f64..8.0, frac in 0.0f64..3.0) {
        let max = maximize_rhs_2_12(n, d, ratio).unwrap();
        let at_opt = rhs_2_12(n, d, ratio, max.h_opt).unwrap();
        prop_assert!((at_opt - max.max_value).abs() <= 1e-12 * max.max_value.abs());
        let other = rhs_2_12(n, d, ratio, frac * max.h_opt).unwrap();
        prop_assert!(other <= max.max_value * (1.0 + 1e-12));
    }

    #[test]
    fn envelopes_are_monotone(n in 2u32..=6, d in 1u32..80, ratio in 1.0f64..8.0, bump in 0.0f64..2.0) {
        let r2 = ratio + bump;
        prop_assert!(dim_sum_bound(n, d, ratio).unwrap() <= dim_sum_bound(n, d, r2).unwrap());
        prop_assert!(dim_sum_bound(n, d, ratio).unwrap() <= dim_sum_bound(n, d + 1, ratio).unwrap());
        prop_assert!(liminf_bound(n, ratio).unwrap() <= liminf_bound(n, r2).unwrap());
        let p = GrowthPartition::unit(d).unwrap();
        let q = GrowthPartition::unit(d + 1).unwrap();
        prop_assert!(weighted_dim_sum_bound(n, &p, ratio).unwrap() <= weighted_dim_sum_bound(n, &p, r2).unwrap());
        prop_assert!(weighted_dim_sum_bound(n, &p, ratio).unwrap() <= weighted_dim_sum_bound(n, &q, ratio).unwrap());
    }

    #[test]
    fn fields_are_symmetric_and_bounded(which in 0usize..NAMES.len(), r in 0.0f64..20.0, theta in 0.0f64..6.3) {
        let f = &FIELDS[which];
        let a = f.eval(&point(r, theta));
        prop_assert_eq!(a.clone(), a.transpose());
        let (lo, hi) = f.bounds();
        let (emin, emax) = eig_range(&a);
        prop_assert!(emin >= lo * (1.0 - 1e-12) && emax <= hi * (1.0 + 1e-12));
    }

    #[test]
    fn metric_round_trip(which in 0usize..NAMES.len(), r in 0.0f64..10.0, theta in 0.0f64..6.3) {
        let c = conformal_data(&FIELDS[which], &point(r, theta)).unwrap();
        let id = &c.g * &c.g_inv;
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((id[(i, j)] - want).abs() < 1e-12);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn profile_is_monotone(which in 0usize..NAMES.len(), gaps in prop::collection::vec(0.1f64..3.0, 2..6)) {
        let radii: Vec<f64> = gaps.iter().scan(0.0, |acc, g| { *acc += g; Some(*acc) }).collect();
        let p = ellipticity_profile(&FIELDS[which], &radii, ProfileOptions { samples_per_annulus: 1000, r_max: None }).unwrap();
        for w in 0..radii.len() - 1 {
            prop_assert!(p.lambda_r[w] <= p.lambda_r[w + 1]);
            prop_assert!(p.big_lambda_r[w] >= p.big_lambda_r[w + 1]);
        }
    }

    #[test]
    fn energy_forms_collapse(which in 0usize..NAMES.len(), cu in prop::array::uniform5(-2.0f64..2.0), cv in prop::array::uniform5(-2.0f64..2.0), t in 0.2f64..1.0) {
        let pair = energy_forms(&FIELDS[which], &nodal(&cu), &nodal(&cv), t, &MESH).unwrap();
        prop_assert!(pair.relative_difference() <= 1e-10);
    }

    #[test]
    fn energy_grows_with_radius(which in 0usize..NAMES.len(), c in prop::array::uniform5(-2.0f64..2.0), t in 0.1f64..0.9, dt in 0.0f64..0.1) {
        let form = EnergyForm::new(&MESH, &FIELDS[which]).unwrap();
        let u = nodal(&c);
        prop_assert!(form.energy(&u, &u, t).unwrap() <= form.energy(&u, &u, t + dt).unwrap());
    }

    #[test]
    fn dirichlet_solves_are_linear_and_deterministic(which in 0usize..NAMES.len(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let solver = DirichletSolver::new(MESH.clone(), &FIELDS[which]).unwrap();
        let f = solver.solve_with(|x, _| x).unwrap();
        let g = solver.solve_with(|x, y| x * y).unwrap();
        let h = solver.solve_with(|x, y| a * x + b * x * y).unwrap();
        let again = solver.solve_with(|x, y| a * x + b * x * y).unwrap();
        prop_assert_eq!(&h.values, &again.values);
        for i in 0..h.values.len() {
            prop_assert!((h.values[i] - a * f.values[i] - b * g.values[i]).abs() <= 1e-10 * (a.abs() + b.abs()).max(1.0));
        }
        prop_assert!(h.residual <= 1e-10);
        prop_assert!(h.max_principle_excess <= 1e-9);
    }

    #[test]
    fn boundary_spectrum_invariants(c in 0.5f64..3.0, t in 0.3f64..3.0, ratio in 1.0f64..4.0) {
        let f = CoefficientField::diagonal(&[c, c * ratio]).unwrap();
        let s = boundary_spectrum(&f, t, 6, 256).unwrap();
        let scale = s.eigenvalues[5];
        prop_assert!(s.eigenvalues[0].abs() <= 1e-9 * scale);
        prop_assert!(s.eigenvalues.windows(2).all(|w| w[0] <= w[1] + 1e-12 * scale));
        // The ground state is constant and the vectors are mass-orthonormal.
        let v0 = &s.eigenvectors[0];
        let mean = v0.iter().sum::<f64>() / v0.len() as f64;
        prop_assert!(v0.iter().all(|x| (x - mean).abs() <= 1e-6 * mean.abs()));
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((s.mass.form(&s.eigenvectors[i], &s.eigenvectors[j]) - want).abs() < 1e-8);
            }
        }
        // The weighted mass matrix is the Euclidean one.
        let w = weighted_mass(&f, t, 256).unwrap();
        let e = euclidean_mass(t, 256);
        for (x, y) in w.diag.iter().chain(&w.off).zip(e.diag.iter().chain(&e.off)) {
            prop_assert!((x - y).abs() <= 1e-12 * y.abs());
        }
    }

    #[test]
    fn spectrum_scales_with_the_square_of_the_coefficient(c in 0.3f64..4.0, t in 0.5f64..2.0) {
        let one = boundary_spectrum(&CoefficientField::identity(2), t, 8, 256).unwrap();
        let scaled = boundary_spectrum(&CoefficientField::scalar(2, c).unwrap(), t, 8, 256).unwrap();
        for k in 1..8 {
            prop_assert!((scaled.eigenvalues[k] / (c * c * one.eigenvalues[k]) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn mollified_fields_stay_in_bounds(eps in 0.03f64..0.3, r in 0.0f64..2.5, theta in 0.0f64..6.3) {
        let cb = &FIELDS[5];
        let m = mollify(cb, eps, 2.0, 1.0).unwrap();
        let a = m.eval(&point(r, theta));
        prop_assert_eq!(a.clone(), a.transpose());
        let (lo, hi) = cb.bounds();
        let (emin, emax) = eig_range(&a);
        prop_assert!(emin >= lo * (1.0 - 1e-12) && emax <= hi * (1.0 + 1e-12));
    }

    #[test]
    fn json_keeps_every_bit(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
        let text = lharmonic::json::to_string(&vec![x]).unwrap();
        let inner = text.trim().trim_start_matches('[').trim_end_matches(']').trim();
        let back: f64 = inner.parse().unwrap();
        prop_assert_eq!(back.to_bits(), x.to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn orthonormalized_gram_is_identity(which in 0usize..5, t in 0.4f64..1.0) {
        let f = &FIELDS[which];
        let basis = build_polynomial_basis(f, 2, 1.0, MESH.clone()).unwrap();
        let g = gram_matrix(&basis.orthonormalized(t).unwrap(), t).unwrap().matrix;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((g[(i, j)] - want).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn lemma1_rhs_ignores_the_orthonormal_basis(which in 0usize..5, seed in 0u64..1000, t in 0.5f64..0.9) {
        let f = &FIELDS[which];
        let basis = build_polynomial_basis(f, 2, 1.0, MESH.clone()).unwrap();
        let spectrum = boundary_spectrum(f, t, basis.len(), 256).unwrap();
        let check = lemma1_check(&basis, t, &spectrum, seed).unwrap();
        prop_assert!(check.invariance_deviation <= check.invariance_tolerance);
        prop_assert!(check.margin >= -check.tolerance);
    }
}
