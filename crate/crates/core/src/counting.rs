//! Closed-form combinatorics and bound envelopes.
//!
//! Everything here is exact where it can be: harmonic-polynomial dimensions
//! are big integers, sphere eigenvalues are integers `q² + (n−2)q`. The
//! real-valued envelopes are evaluated in double precision and are accurate
//! to about 12 significant digits.

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// An exact value of `h_d(Δ)` on `ℝⁿ`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DimFormulaResult {
    pub n: u32,
    pub d: u32,
    #[serde(serialize_with = "serialize_biguint")]
    pub value: BigUint,
}

fn serialize_biguint<S: serde::Serializer>(v: &BigUint, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v.to_u64() {
        Some(x) => s.serialize_u64(x),
        None => s.serialize_str(&v.to_string()),
    }
}

/// `C(n, k)` in exact arithmetic; zero when `k > n`.
pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

fn check_dimension(n: u32) -> Result<()> {
    if n < 2 {
        return Err(invalid(format!("ambient dimension must be at least 2, got {n}")));
    }
    Ok(())
}

/// Dimension of the harmonic polynomials of degree at most `d` on `ℝⁿ`:
/// `C(n+d−1, d) + C(n+d−2, d−1)`, the second term being zero for `d = 0`.
pub fn cumulative_harmonic_dim(n: u32, d: u32) -> Result<BigUint> {
    check_dimension(n)?;
    let (n, d) = (u64::from(n), u64::from(d));
    let first = binomial(n + d - 1, d);
    let second = if d == 0 { BigUint::zero() } else { binomial(n + d - 2, d - 1) };
    Ok(first + second)
}

/// Same as [`cumulative_harmonic_dim`], wrapped with its arguments.
pub fn harmonic_dim_record(n: u32, d: u32) -> Result<DimFormulaResult> {
    Ok(DimFormulaResult { n, d, value: cumulative_harmonic_dim(n, d)? })
}

/// Number of linearly independent homogeneous harmonic polynomials of degree
/// exactly `q`, which is also the multiplicity of the sphere eigenvalue
/// `q² + (n−2)q`.
pub fn homogeneous_harmonic_dim(n: u32, q: u32) -> Result<BigUint> {
    let upper = cumulative_harmonic_dim(n, q)?;
    if q == 0 {
        return Ok(upper);
    }
    Ok(upper - cumulative_harmonic_dim(n, q - 1)?)
}

/// Least `q ≥ 0` with `k ≤ cumulative_harmonic_dim(n, q)`.
///
/// Uses the nonnegative reading so that `k = 1` maps to the constant
/// eigenfunction (`q = 0`).
pub fn eigen_index_to_degree(n: u32, k: u64) -> Result<u32> {
    check_dimension(n)?;
    if k == 0 {
        return Err(invalid("eigenvalue index k is 1-based"));
    }
    let target = BigUint::from(k);
    // cumulative(n, q) ≥ q + 1, so q = k − 1 always satisfies the bound.
    let (mut lo, mut hi) = (0u64, k - 1);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        let mid32 = u32::try_from(mid).map_err(|_| invalid("eigenvalue index too large"))?;
        if cumulative_harmonic_dim(n, mid32)? >= target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    u32::try_from(lo).map_err(|_| invalid("eigenvalue index too large"))
}

/// `q² + (n−2)q` as an exact integer.
pub fn sphere_eigenvalue_exact(n: u32, q: u32) -> u128 {
    let q = u128::from(q);
    q * q + (u128::from(n) - 2) * q
}

/// The `k`-th eigenvalue (with multiplicity, 1-based) of the Laplacian on
/// the unit sphere `S^{n−1}`.
pub fn sphere_eigenvalue(n: u32, k: u64) -> Result<f64> {
    let q = eigen_index_to_degree(n, k)?;
    Ok(sphere_eigenvalue_exact(n, q) as f64)
}

/// The first `count` sphere eigenvalues, as exact integers, in ascending
/// order with multiplicity.
pub fn sphere_spectrum(n: u32, count: usize) -> Result<Vec<u128>> {
    check_dimension(n)?;
    let mut out = Vec::with_capacity(count);
    let mut q = 0u32;
    while out.len() < count {
        let mult = homogeneous_harmonic_dim(n, q)?
            .to_usize()
            .unwrap_or(usize::MAX);
        let take = mult.min(count - out.len());
        out.extend(std::iter::repeat_n(sphere_eigenvalue_exact(n, q), take));
        q += 1;
    }
    Ok(out)
}

pub(crate) fn factorial(m: u32) -> f64 {
    (1..=m).map(f64::from).product()
}

/// `((n−1)!/2)^{1/(n−1)}`, the constant relating eigenvalue index to degree.
fn index_constant(n: u32) -> f64 {
    (factorial(n - 1) / 2.0).powf(1.0 / f64::from(n - 1))
}

/// Lower bound for `Σ_{i≤k} √η_i(1)` on the unit sphere:
/// `((n−1)!/2)^{1/(n−1)} · ((n−1)/n) · k^{n/(n−1)} − (n−1)k`.
pub fn eigen_rootsum_lower_bound(n: u32, k: u64) -> Result<f64> {
    check_dimension(n)?;
    if k == 0 {
        return Err(invalid("eigenvalue index k is 1-based"));
    }
    let nf = f64::from(n);
    let kf = k as f64;
    Ok(index_constant(n) * ((nf - 1.0) / nf) * kf.powf(nf / (nf - 1.0)) - (nf - 1.0) * kf)
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(ratio >= 1.0 && ratio.is_finite()) {
        return Err(invalid(format!("ellipticity ratio must be a finite number ≥ 1, got {ratio}")));
    }
    Ok(())
}

fn check_degree(d: f64) -> Result<()> {
    if !(d >= 0.0 && d.is_finite()) {
        return Err(invalid(format!("degree must be finite and nonnegative, got {d}")));
    }
    Ok(())
}

/// The concave function of `h'` that bounds the weighted dimension sum:
/// `(d + 3n/2 − 2)·h' − (1/ratio)·((n−1)!/2)^{1/(n−1)}·((n−1)/n)·h'^{n/(n−1)}`.
pub fn rhs_2_12(n: u32, d: f64, ratio: f64, hprime: f64) -> Result<f64> {
    check_dimension(n)?;
    check_degree(d)?;
    check_ratio(ratio)?;
    if !(hprime >= 0.0) {
        return Err(invalid(format!("h' must be nonnegative, got {hprime}")));
    }
    let nf = f64::from(n);
    let slope = d + 1.5 * nf - 2.0;
    Ok(slope * hprime - index_constant(n) * ((nf - 1.0) / nf) * hprime.powf(nf / (nf - 1.0)) / ratio)
}

/// Maximizer of [`rhs_2_12`] over `h' ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhsMaximum {
    pub h_opt: f64,
    pub max_value: f64,
}

/// Closed-form maximum of [`rhs_2_12`]:
/// `h_opt = ratio^{n−1}·(2/(n−1)!)·A^{n−1}`, `max = ratio^{n−1}·(2/n!)·Aⁿ`
/// with `A = d + 3n/2 − 2`.
pub fn maximize_rhs_2_12(n: u32, d: f64, ratio: f64) -> Result<RhsMaximum> {
    check_dimension(n)?;
    check_degree(d)?;
    check_ratio(ratio)?;
    let nf = f64::from(n);
    let a = d + 1.5 * nf - 2.0;
    let scale = ratio.powi(n as i32 - 1);
    Ok(RhsMaximum {
        h_opt: scale * (2.0 / factorial(n - 1)) * a.powi(n as i32 - 1),
        max_value: scale * (2.0 / factorial(n)) * a.powi(n as i32),
    })
}

/// A chain of growth degrees `0 = a_0 < a_1 < … < a_j = d`, optionally with
/// the dimension `k_i` of each block of solutions growing between
/// `a_{i−1}` and `a_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthPartition {
    degrees: Vec<f64>,
    block_dims: Vec<usize>,
}

impl GrowthPartition {
    pub fn new(degrees: Vec<f64>) -> Result<Self> {
        if degrees.len() < 2 {
            return Err(invalid("a growth partition needs at least a_0 = 0 and a_1"));
        }
        if degrees[0] != 0.0 {
            return Err(invalid("growth partitions start at a_0 = 0"));
        }
        if degrees.iter().any(|a| !a.is_finite()) || degrees.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("growth degrees must be finite and strictly increasing"));
        }
        Ok(Self { degrees, block_dims: Vec::new() })
    }

    /// The unit partition `a_i = i` up to `d ≥ 1`.
    pub fn unit(d: u32) -> Result<Self> {
        if d == 0 {
            return Err(invalid("the unit partition needs d ≥ 1"));
        }
        Self::new((0..=d).map(f64::from).collect())
    }

    /// Attaches block dimensions `k_1, …, k_j`.
    pub fn with_block_dims(mut self, block_dims: Vec<usize>) -> Result<Self> {
        if block_dims.len() != self.blocks() {
            return Err(invalid(format!(
                "expected {} block dimensions, got {}",
                self.blocks(),
                block_dims.len()
            )));
        }
        self.block_dims = block_dims;
        Ok(self)
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn block_dims(&self) -> &[usize] {
        &self.block_dims
    }

    /// Number of blocks `j`.
    pub fn blocks(&self) -> usize {
        self.degrees.len() - 1
    }

    /// Top degree `d = a_j`.
    pub fn top(&self) -> f64 {
        *self.degrees.last().expect("validated non-empty")
    }

    /// `s = Σ (2(a_i − 1) + n)·k_i`, the expected log-det growth exponent.
    pub fn growth_exponent(&self, n: u32) -> Option<f64> {
        if self.block_dims.is_empty() {
            return None;
        }
        Some(
            self.degrees[1..]
                .iter()
                .zip(&self.block_dims)
                .map(|(a, &k)| (2.0 * (a - 1.0) + f64::from(n)) * k as f64)
                .sum(),
        )
    }

    /// `Σ (a_i − a_{i−1})·h(a_{i−1})` for a dimension function `h`.
    pub fn weighted_sum(&self, h: impl Fn(f64) -> f64) -> f64 {
        self.degrees.windows(2).map(|w| (w[1] - w[0]) * h(w[0])).sum()
    }
}

/// Which envelope a [`BoundEnvelope`] carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeKind {
    WeightedDimSum,
    DimSum,
    Liminf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundEnvelope {
    pub kind: EnvelopeKind,
    pub n: u32,
    pub d: f64,
    pub ratio: f64,
    pub value: f64,
}

/// `ratio^{n−1}·(2/n!)·(d + 2n − 1)ⁿ` with `d` the top degree of the partition.
pub fn weighted_dim_sum_bound(n: u32, partition: &GrowthPartition, ratio: f64) -> Result<f64> {
    check_dimension(n)?;
    check_ratio(ratio)?;
    let nf = f64::from(n);
    Ok(ratio.powi(n as i32 - 1) * (2.0 / factorial(n)) * (partition.top() + 2.0 * nf - 1.0).powi(n as i32))
}

/// `ratio^{n−1}·(2/n!)·(d + 2n)ⁿ`, the bound on `Σ_{i=1}^d h_i`.
pub fn dim_sum_bound(n: u32, d: u32, ratio: f64) -> Result<f64> {
    check_dimension(n)?;
    check_ratio(ratio)?;
    if d == 0 {
        return Err(invalid("the partial-sum bound is stated for d ≥ 1"));
    }
    let nf = f64::from(n);
    Ok(ratio.powi(n as i32 - 1) * (2.0 / factorial(n)) * (f64::from(d) + 2.0 * nf).powi(n as i32))
}

/// `ratio^{n−1}·2/(n−1)!`, the bound on `liminf d^{−(n−1)} h_d`.
pub fn liminf_bound(n: u32, ratio: f64) -> Result<f64> {
    check_dimension(n)?;
    check_ratio(ratio)?;
    Ok(ratio.powi(n as i32 - 1) * 2.0 / factorial(n - 1))
}

impl BoundEnvelope {
    pub fn weighted(n: u32, partition: &GrowthPartition, ratio: f64) -> Result<Self> {
        Ok(Self {
            kind: EnvelopeKind::WeightedDimSum,
            n,
            d: partition.top(),
            ratio,
            value: weighted_dim_sum_bound(n, partition, ratio)?,
        })
    }

    pub fn dim_sum(n: u32, d: u32, ratio: f64) -> Result<Self> {
        Ok(Self { kind: EnvelopeKind::DimSum, n, d: f64::from(d), ratio, value: dim_sum_bound(n, d, ratio)? })
    }

    pub fn liminf(n: u32, ratio: f64) -> Result<Self> {
        Ok(Self { kind: EnvelopeKind::Liminf, n, d: f64::INFINITY, ratio, value: liminf_bound(n, ratio)? })
    }
}
