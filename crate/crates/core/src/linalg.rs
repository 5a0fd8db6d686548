//! Small dense helpers shared by the coefficient and geometry code.

use nalgebra::{DMatrix, Matrix2, SymmetricEigen};

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 2 {
        let (lo, hi) = sym2_eigenvalues(m[(0, 0)], m[(0, 1)], m[(1, 1)]);
        return (lo, hi);
    }
    let eig = SymmetricEigen::new(m.clone());
    let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Eigenvalues `(lo, hi)` of `[[a, b], [b, c]]`.
pub fn sym2_eigenvalues(a: f64, b: f64, c: f64) -> (f64, f64) {
    let mean = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    (mean - rad, mean + rad)
}

/// Projects the eigenvalues of a symmetric matrix into `[lo, hi]`.
///
/// Returns the input untouched when it already satisfies the bounds, so
/// fields that never need clipping stay bit-identical.
pub fn clip_spectrum(m: DMatrix<f64>, lo: f64, hi: f64) -> DMatrix<f64> {
    let (emin, emax) = eig_range(&m);
    if emin >= lo && emax <= hi {
        return m;
    }
    if m.nrows() == 2 {
        let c = clip_sym2(Matrix2::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]), lo, hi);
        return DMatrix::from_row_slice(2, 2, &[c[(0, 0)], c[(0, 1)], c[(1, 0)], c[(1, 1)]]);
    }
    let mut eig = SymmetricEigen::new(m);
    eig.eigenvalues.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
    let r = eig.recompose();
    0.5 * (&r + r.transpose())
}

fn clip_sym2(m: Matrix2<f64>, lo: f64, hi: f64) -> Matrix2<f64> {
    let (a, b, c) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
    let (l1, l2) = sym2_eigenvalues(a, b, c);
    if (l2 - l1).abs() <= f64::EPSILON * (l1.abs() + l2.abs()) {
        let v = l1.clamp(lo, hi);
        return Matrix2::new(v, 0.0, 0.0, v);
    }
    // Unit eigenvector for l2.
    let (vx, vy) = if b.abs() > 0.0 {
        let (x, y) = (b, l2 - a);
        let nrm = x.hypot(y);
        (x / nrm, y / nrm)
    } else if a >= c {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    let (c1, c2) = (l1.clamp(lo, hi), l2.clamp(lo, hi));
    // c2·vvᵀ + c1·(I − vvᵀ)
    let off = (c2 - c1) * vx * vy;
    Matrix2::new(c1 + (c2 - c1) * vx * vx, off, off, c1 + (c2 - c1) * vy * vy)
}

pub fn to_matrix2(m: &DMatrix<f64>) -> Matrix2<f64> {
    Matrix2::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)])
}
