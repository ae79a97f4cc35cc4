//! Dense vectors, sparse vectors with explicit supports, and dense sensing
//! matrices with a cached spectral norm.
//!
//! All scalars are `f64`. Types validate their invariants at construction
//! (finite entries, sorted supports, no stored zeros) so downstream code can
//! rely on them without re-checking.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// A dense real vector with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DenseVector {
    entries: Vec<f64>,
}

impl DenseVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidArgument("DenseVector must have dim >= 1".into()));
        }
        if !entries.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { context: "DenseVector" });
        }
        Ok(Self { entries })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { entries: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.entries
    }

    pub fn add_assign(&mut self, other: &DenseVector) -> Result<()> {
        check_dim("DenseVector::add_assign", self.dim(), other.dim())?;
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            *a += b;
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> DenseVector {
        DenseVector { entries: self.entries.iter().map(|v| v * factor).collect() }
    }

    pub fn dot(&self, other: &DenseVector) -> Result<f64> {
        check_dim("DenseVector::dot", self.dim(), other.dim())?;
        Ok(dot(&self.entries, &other.entries))
    }

    pub fn norm(&self) -> f64 {
        dot(&self.entries, &self.entries).sqrt()
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.entries, &self.entries)
    }
}

impl TryFrom<Vec<f64>> for DenseVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        DenseVector::new(v)
    }
}

impl From<DenseVector> for Vec<f64> {
    fn from(v: DenseVector) -> Vec<f64> {
        v.entries
    }
}

/// A K-sparse vector stored as an explicit support plus aligned values.
///
/// Canonical form: support indices strictly increasing, no stored value is
/// exactly zero. The all-zero vector has an empty support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SparseVectorRepr", into = "SparseVectorRepr")]
pub struct SparseVector {
    ambient_dim: usize,
    support: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SparseVectorRepr {
    ambient_dim: usize,
    support: Vec<usize>,
    values: Vec<f64>,
}

impl SparseVector {
    /// Builds a sparse vector from a sorted support. Entries that are exactly
    /// zero are dropped to keep the representation canonical.
    pub fn new(ambient_dim: usize, support: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if ambient_dim == 0 {
            return Err(Error::InvalidArgument("SparseVector ambient_dim must be >= 1".into()));
        }
        if support.len() != values.len() {
            return Err(Error::InvalidArgument(format!(
                "support/values length mismatch: {} vs {}",
                support.len(),
                values.len()
            )));
        }
        if support.len() > ambient_dim {
            return Err(Error::InvalidArgument(format!(
                "support size {} exceeds ambient dim {ambient_dim}",
                support.len()
            )));
        }
        for w in support.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::InvalidArgument(
                    "support indices must be strictly increasing".into(),
                ));
            }
        }
        if let Some(&last) = support.last() {
            if last >= ambient_dim {
                return Err(Error::InvalidArgument(format!(
                    "support index {last} out of range [0, {ambient_dim})"
                )));
            }
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { context: "SparseVector" });
        }
        let (support, values) = support
            .into_iter()
            .zip(values)
            .filter(|&(_, v)| v != 0.0)
            .unzip();
        Ok(Self { ambient_dim, support, values })
    }

    pub fn zero(ambient_dim: usize) -> Self {
        Self { ambient_dim, support: Vec::new(), values: Vec::new() }
    }

    /// Collects the nonzero entries of a dense slice.
    pub fn from_dense(entries: &[f64]) -> Result<Self> {
        if !entries.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { context: "SparseVector::from_dense" });
        }
        let (support, values) = entries
            .iter()
            .enumerate()
            .filter(|&(_, &v)| v != 0.0)
            .map(|(i, &v)| (i, v))
            .unzip();
        Ok(Self { ambient_dim: entries.len(), support, values })
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn support_size(&self) -> usize {
        self.support.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.support.iter().copied().zip(self.values.iter().copied())
    }

    pub fn densify(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.ambient_dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> Result<SparseVector> {
        if !factor.is_finite() {
            return Err(Error::NonFinite { context: "SparseVector::scaled" });
        }
        SparseVector::new(
            self.ambient_dim,
            self.support.clone(),
            self.values.iter().map(|v| v * factor).collect(),
        )
    }

    pub fn norm(&self) -> f64 {
        dot(&self.values, &self.values).sqrt()
    }

    /// Euclidean distance between two sparse vectors of the same ambient dim.
    pub fn distance(&self, other: &SparseVector) -> Result<f64> {
        check_dim("SparseVector::distance", self.ambient_dim, other.ambient_dim)?;
        let mut sum = 0.0;
        let (mut i, mut j) = (0, 0);
        while i < self.support.len() || j < other.support.len() {
            let a = self.support.get(i).copied().unwrap_or(usize::MAX);
            let b = other.support.get(j).copied().unwrap_or(usize::MAX);
            let d = match a.cmp(&b) {
                std::cmp::Ordering::Less => {
                    i += 1;
                    self.values[i - 1]
                }
                std::cmp::Ordering::Greater => {
                    j += 1;
                    -other.values[j - 1]
                }
                std::cmp::Ordering::Equal => {
                    i += 1;
                    j += 1;
                    self.values[i - 1] - other.values[j - 1]
                }
            };
            sum += d * d;
        }
        Ok(sum.sqrt())
    }
}

impl TryFrom<SparseVectorRepr> for SparseVector {
    type Error = Error;
    fn try_from(r: SparseVectorRepr) -> Result<Self> {
        SparseVector::new(r.ambient_dim, r.support, r.values)
    }
}

impl From<SparseVector> for SparseVectorRepr {
    fn from(v: SparseVector) -> SparseVectorRepr {
        SparseVectorRepr { ambient_dim: v.ambient_dim, support: v.support, values: v.values }
    }
}

/// A dense M x N sensing matrix with a cached operator (2->2) norm.
///
/// Entries are stored row-major. The spectral norm is computed once at
/// construction by power iteration on the Gram operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr", into = "MatrixRepr")]
pub struct MeasurementMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
    spectral_norm: f64,
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl MeasurementMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "matrix dims must be positive, got {rows}x{cols}"
            )));
        }
        if entries.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "entry count {} does not match {rows}x{cols}",
                entries.len()
            )));
        }
        if !entries.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { context: "MeasurementMatrix" });
        }
        let spectral_norm = spectral_norm_power_iteration(rows, cols, &entries);
        Ok(Self { rows, cols, entries, spectral_norm })
    }

    pub fn identity(n: usize) -> Self {
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            entries[i * n + i] = 1.0;
        }
        Self { rows: n, cols: n, entries, spectral_norm: 1.0 }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Cached operator 2->2 norm of the matrix.
    pub fn spectral_norm(&self) -> f64 {
        self.spectral_norm
    }

    /// Dense product `A x` for a full-length slice, without allocation checks
    /// beyond a debug assertion. Internal hot path.
    pub(crate) fn mul_dense_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), x);
        }
    }

    pub fn mul_dense(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("MeasurementMatrix::mul_dense", self.cols, x.len())?;
        let mut out = vec![0.0; self.rows];
        self.mul_dense_into(x, &mut out);
        Ok(out)
    }

    /// Transposed product `A^T r`.
    pub(crate) fn tr_mul_into(&self, r: &[f64], out: &mut [f64]) {
        debug_assert_eq!(r.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        out.fill(0.0);
        for (i, &ri) in r.iter().enumerate() {
            if ri == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += ri * a;
            }
        }
    }

    pub fn tr_mul(&self, r: &[f64]) -> Result<Vec<f64>> {
        check_dim("MeasurementMatrix::tr_mul", self.rows, r.len())?;
        let mut out = vec![0.0; self.cols];
        self.tr_mul_into(r, &mut out);
        Ok(out)
    }

    /// Sparse product `A x`, touching only the columns in the support.
    /// Cost O(rows * support).
    pub(crate) fn mul_sparse_into(&self, x: &SparseVector, out: &mut [f64]) {
        debug_assert_eq!(x.ambient_dim(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        out.fill(0.0);
        for (j, v) in x.iter() {
            for (i, o) in out.iter_mut().enumerate() {
                *o += v * self.entries[i * self.cols + j];
            }
        }
    }
}

impl TryFrom<MatrixRepr> for MeasurementMatrix {
    type Error = Error;
    fn try_from(r: MatrixRepr) -> Result<Self> {
        MeasurementMatrix::new(r.rows, r.cols, r.entries)
    }
}

impl From<MeasurementMatrix> for MatrixRepr {
    fn from(m: MeasurementMatrix) -> MatrixRepr {
        MatrixRepr { rows: m.rows, cols: m.cols, entries: m.entries }
    }
}

/// Computes `phi * x` for a sparse `x`, exploiting the support.
pub fn matvec(phi: &MeasurementMatrix, x: &SparseVector) -> Result<DenseVector> {
    check_dim("matvec", phi.cols(), x.ambient_dim())?;
    let mut out = vec![0.0; phi.rows()];
    phi.mul_sparse_into(x, &mut out);
    DenseVector::new(out)
}

/// Per-step prediction loss `1/2 * ||y - phi x||^2`.
pub fn residual_loss(phi: &MeasurementMatrix, x: &SparseVector, y: &DenseVector) -> Result<f64> {
    check_dim("residual_loss", phi.cols(), x.ambient_dim())?;
    check_dim("residual_loss", phi.rows(), y.dim())?;
    let mut fx = vec![0.0; phi.rows()];
    phi.mul_sparse_into(x, &mut fx);
    let mut sum = 0.0;
    for (yi, fi) in y.as_slice().iter().zip(&fx) {
        let d = yi - fi;
        sum += d * d;
    }
    Ok(0.5 * sum)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Largest singular value of a dense row-major matrix, via power iteration on
/// the Gram operator A^T A. Deterministic start vector, successive Rayleigh
/// quotients converged to 1e-12 relative.
fn spectral_norm_power_iteration(rows: usize, cols: usize, entries: &[f64]) -> f64 {
    const TOL: f64 = 1e-12;
    const MAX_ITERS: usize = 100_000;

    let mul = |x: &[f64], tmp: &mut [f64], out: &mut [f64]| {
        // tmp = A x, out = A^T tmp
        for i in 0..rows {
            tmp[i] = dot(&entries[i * cols..(i + 1) * cols], x);
        }
        out.fill(0.0);
        for (i, &ti) in tmp.iter().enumerate().take(rows) {
            if ti == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(&entries[i * cols..(i + 1) * cols]) {
                *o += ti * a;
            }
        }
    };

    let mut tmp = vec![0.0; rows];
    let mut w = vec![0.0; cols];
    for salt in 0..4u64 {
        let mut v: Vec<f64> = (0..cols)
            .map(|j| (splitmix64(salt.wrapping_mul(0x1000) + j as u64) as f64 / u64::MAX as f64) - 0.5)
            .collect();
        let nv = norm_sq(&v).sqrt();
        if nv == 0.0 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        let mut lambda_prev = -1.0;
        for _ in 0..MAX_ITERS {
            mul(&v, &mut tmp, &mut w);
            let lambda = dot(&v, &w);
            let nw = norm_sq(&w).sqrt();
            if nw == 0.0 {
                // v lies in the null space; retry with a different start
                break;
            }
            for (vi, wi) in v.iter_mut().zip(&w) {
                *vi = wi / nw;
            }
            if (lambda - lambda_prev).abs() <= TOL * lambda.abs().max(1e-300) {
                return lambda.max(0.0).sqrt();
            }
            lambda_prev = lambda;
        }
        if lambda_prev > 0.0 {
            return lambda_prev.sqrt();
        }
    }
    0.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn small_rng_matrix(seed: u64, m: usize, n: usize) -> Vec<f64> {
        (0..m * n)
            .map(|i| (splitmix64(seed.wrapping_mul(31) + i as u64) as f64 / u64::MAX as f64) - 0.5)
            .collect()
    }

    #[test]
    fn dense_vector_rejects_non_finite() {
        assert!(DenseVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(DenseVector::new(vec![f64::INFINITY]).is_err());
        assert!(DenseVector::new(vec![]).is_err());
    }

    #[test]
    fn sparse_vector_canonicalizes_zeros() {
        let v = SparseVector::new(6, vec![1, 3, 5], vec![2.0, 0.0, -1.0]).unwrap();
        assert_eq!(v.support(), &[1, 5]);
        assert_eq!(v.values(), &[2.0, -1.0]);
    }

    #[test]
    fn sparse_vector_rejects_unsorted_support() {
        assert!(SparseVector::new(4, vec![2, 1], vec![1.0, 1.0]).is_err());
        assert!(SparseVector::new(4, vec![1, 1], vec![1.0, 1.0]).is_err());
        assert!(SparseVector::new(4, vec![4], vec![1.0]).is_err());
    }

    #[test]
    fn canonicalization_is_idempotent() {
        let v = SparseVector::new(8, vec![0, 2, 7], vec![0.5, 0.0, -3.0]).unwrap();
        let once = SparseVector::from_dense(&v.densify()).unwrap();
        let twice = SparseVector::from_dense(&once.densify()).unwrap();
        assert_eq!(once, v);
        assert_eq!(twice, once);
    }

    #[test]
    fn matvec_identity_case() {
        let phi = MeasurementMatrix::identity(2);
        let x = SparseVector::new(2, vec![1], vec![3.0]).unwrap();
        assert_eq!(matvec(&phi, &x).unwrap().as_slice(), &[0.0, 3.0]);
    }

    #[test]
    fn matvec_empty_support_is_zero() {
        let phi = MeasurementMatrix::new(3, 4, small_rng_matrix(1, 3, 4)).unwrap();
        let x = SparseVector::zero(4);
        assert_eq!(matvec(&phi, &x).unwrap().as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn matvec_dimension_mismatch_names_dims() {
        let phi = MeasurementMatrix::new(3, 4, small_rng_matrix(1, 3, 4)).unwrap();
        let x = SparseVector::zero(5);
        let err = matvec(&phi, &x).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('4') && msg.contains('5'), "unexpected message: {msg}");
    }

    #[test]
    fn matvec_matches_dense_multiply_oracle() {
        let phi = MeasurementMatrix::new(4, 6, small_rng_matrix(7, 4, 6)).unwrap();
        let x = SparseVector::new(6, vec![1, 4], vec![0.7, -1.3]).unwrap();
        let got = matvec(&phi, &x).unwrap();
        let dense = x.densify();
        for i in 0..4 {
            let want: f64 = (0..6).map(|j| phi.entry(i, j) * dense[j]).sum();
            assert_relative_eq!(got.as_slice()[i], want, max_relative = 1e-14);
        }
    }

    #[test]
    fn residual_loss_trivial_cases() {
        let phi = MeasurementMatrix::identity(2);
        let x = SparseVector::zero(2);
        let y = DenseVector::new(vec![3.0, 4.0]).unwrap();
        assert_eq!(residual_loss(&phi, &x, &y).unwrap(), 12.5);

        let x2 = SparseVector::new(2, vec![0, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(residual_loss(&phi, &x2, &y).unwrap(), 0.0);
    }

    #[test]
    fn residual_loss_matches_naive_sum() {
        let phi = MeasurementMatrix::new(5, 8, small_rng_matrix(11, 5, 8)).unwrap();
        let x = SparseVector::new(8, vec![0, 3, 6], vec![1.5, -0.25, 2.0]).unwrap();
        let y = DenseVector::new(small_rng_matrix(13, 5, 1)).unwrap();
        let dense = x.densify();
        let mut naive = 0.0;
        for i in 0..5 {
            let mut fx = 0.0;
            for j in 0..8 {
                fx += phi.entry(i, j) * dense[j];
            }
            let d = y.as_slice()[i] - fx;
            naive += 0.5 * d * d;
        }
        assert_relative_eq!(residual_loss(&phi, &x, &y).unwrap(), naive, max_relative = 1e-12);
    }

    #[test]
    fn spectral_norm_matches_svd_oracle() {
        for (seed, m, n) in [(2u64, 6usize, 9usize), (3, 9, 6), (4, 12, 12), (5, 1, 7)] {
            let entries = small_rng_matrix(seed, m, n);
            let phi = MeasurementMatrix::new(m, n, entries.clone()).unwrap();
            let na = nalgebra::DMatrix::from_row_slice(m, n, &entries);
            let oracle = na.svd(false, false).singular_values[0];
            assert_relative_eq!(phi.spectral_norm(), oracle, max_relative = 1e-8);
        }
    }

    #[test]
    fn spectral_norm_identity_and_zero() {
        assert_eq!(MeasurementMatrix::identity(5).spectral_norm(), 1.0);
        let z = MeasurementMatrix::new(3, 3, vec![0.0; 9]).unwrap();
        assert_eq!(z.spectral_norm(), 0.0);
    }

    #[test]
    fn serde_roundtrip_preserves_values() {
        let phi = MeasurementMatrix::new(3, 4, small_rng_matrix(21, 3, 4)).unwrap();
        let json = serde_json::to_string(&phi).unwrap();
        let back: MeasurementMatrix = serde_json::from_str(&json).unwrap();
        assert_eq!(phi, back);

        let x = SparseVector::new(9, vec![2, 5], vec![1.0, -2.0]).unwrap();
        let json = serde_json::to_string(&x).unwrap();
        let back: SparseVector = serde_json::from_str(&json).unwrap();
        assert_eq!(x, back);
    }

    proptest! {
        #[test]
        fn prop_matvec_matches_dense_multiply(seed in 0u64..500) {
            let m = 3 + (seed % 4) as usize;
            let n = 4 + (seed % 5) as usize;
            let entries = small_rng_matrix(seed, m, n);
            let phi = MeasurementMatrix::new(m, n, entries).unwrap();
            let dense: Vec<f64> = (0..n)
                .map(|j| if j % 3 == 0 { (j as f64) - 1.0 } else { 0.0 })
                .collect();
            let x = SparseVector::from_dense(&dense).unwrap();
            let got = matvec(&phi, &x).unwrap();
            for i in 0..m {
                let want: f64 = (0..n).map(|j| phi.entry(i, j) * dense[j]).sum();
                prop_assert!((got.as_slice()[i] - want).abs() <= 1e-14 * want.abs().max(1.0));
            }
        }

        #[test]
        fn prop_residual_loss_nonnegative(seed in 0u64..200) {
            let phi = MeasurementMatrix::new(4, 6, small_rng_matrix(seed, 4, 6)).unwrap();
            let x = SparseVector::new(6, vec![1, 3], vec![0.5, -0.5]).unwrap();
            let y = DenseVector::new(small_rng_matrix(seed + 1, 4, 1)).unwrap();
            prop_assert!(residual_loss(&phi, &x, &y).unwrap() >= 0.0);
        }

        #[test]
        fn prop_sparse_distance_matches_dense(seed in 0u64..200) {
            let n = 6 + (seed % 5) as usize;
            let a_dense: Vec<f64> = (0..n).map(|j| if j % 2 == 0 { j as f64 * 0.3 } else { 0.0 }).collect();
            let b_dense: Vec<f64> = (0..n).map(|j| if j % 3 == 0 { 1.0 - j as f64 } else { 0.0 }).collect();
            let a = SparseVector::from_dense(&a_dense).unwrap();
            let b = SparseVector::from_dense(&b_dense).unwrap();
            let want: f64 = a_dense.iter().zip(&b_dense).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            let got = a.distance(&b).unwrap();
            prop_assert!((got - want).abs() <= 1e-12 * want.max(1.0));
        }
    }
}
