//! Dense square complex matrices and the handful of spectral routines the
//! rest of the crate needs.
//!
//! Storage is column-major (nalgebra's layout), so the raw slice of a matrix
//! is already its column-stacked vectorization.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, mismatch, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Default relative rank tolerance for eigenvalue thresholds.
pub const RANK_TOL: f64 = 1e-9;

/// A square complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    m: DMatrix<C64>,
}

impl CMatrix {
    pub fn zeros(dim: usize) -> Self {
        CMatrix { m: DMatrix::zeros(dim, dim) }
    }

    pub fn identity(dim: usize) -> Self {
        CMatrix { m: DMatrix::identity(dim, dim) }
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        CMatrix { m: DMatrix::from_fn(dim, dim, |i, j| f(i, j)) }
    }

    /// Builds a matrix from rows. Fails unless the rows form a nonempty square.
    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(invalid("matrix must have at least one row"));
        }
        if let Some(bad) = rows.iter().position(|r| r.len() != n) {
            return Err(invalid(format!("row {bad} has {} entries, expected {n}", rows[bad].len())));
        }
        Ok(Self::from_fn(n, |i, j| rows[i][j]))
    }

    pub fn from_real_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let rows: Vec<Vec<C64>> =
            rows.iter().map(|r| r.iter().map(|&x| C64::new(x, 0.0)).collect()).collect();
        Self::from_rows(&rows)
    }

    pub fn diag(values: &[f64]) -> Self {
        Self::from_fn(values.len(), |i, j| if i == j { C64::new(values[i], 0.0) } else { ZERO })
    }

    /// Wraps an nalgebra matrix. Fails for non-square or empty input.
    pub fn from_nalgebra(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(invalid(format!("matrix must be square and nonempty, got {}x{}", m.nrows(), m.ncols())));
        }
        Ok(CMatrix { m })
    }

    pub(crate) fn wrap(m: DMatrix<C64>) -> Self {
        debug_assert_eq!(m.nrows(), m.ncols());
        CMatrix { m }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.m[(i, j)]
    }

    pub fn as_nalgebra(&self) -> &DMatrix<C64> {
        &self.m
    }

    pub fn into_nalgebra(self) -> DMatrix<C64> {
        self.m
    }

    /// Column-major entries.
    pub fn as_slice(&self) -> &[C64] {
        self.m.as_slice()
    }

    pub fn adjoint(&self) -> Self {
        CMatrix { m: self.m.adjoint() }
    }

    pub fn transpose(&self) -> Self {
        CMatrix { m: self.m.transpose() }
    }

    pub fn conj(&self) -> Self {
        CMatrix { m: self.m.map(|z| z.conj()) }
    }

    pub fn mul(&self, rhs: &CMatrix) -> Self {
        CMatrix { m: &self.m * &rhs.m }
    }

    pub fn add(&self, rhs: &CMatrix) -> Self {
        CMatrix { m: &self.m + &rhs.m }
    }

    pub fn sub(&self, rhs: &CMatrix) -> Self {
        CMatrix { m: &self.m - &rhs.m }
    }

    pub fn scale(&self, a: C64) -> Self {
        CMatrix { m: &self.m * a }
    }

    pub fn scale_re(&self, a: f64) -> Self {
        self.scale(C64::new(a, 0.0))
    }

    pub fn trace(&self) -> C64 {
        self.m.trace()
    }

    /// Kronecker product `self ⊗ rhs`.
    pub fn kron(&self, rhs: &CMatrix) -> Self {
        CMatrix { m: self.m.kronecker(&rhs.m) }
    }

    /// `(M + M†)/2`.
    pub fn hermitian_part(&self) -> Self {
        CMatrix { m: (&self.m + self.m.adjoint()) * C64::new(0.5, 0.0) }
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn frobenius(&self) -> f64 {
        self.m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn singular_values(&self) -> Vec<f64> {
        self.m.clone().singular_values().iter().copied().collect()
    }

    /// Largest singular value.
    pub fn op_norm(&self) -> f64 {
        self.singular_values().into_iter().fold(0.0, f64::max)
    }

    /// Hermiticity within `‖M − M†‖_∞ ≤ 1e-12 ‖M‖_∞`.
    pub fn is_hermitian(&self) -> bool {
        let scale = self.op_norm();
        let skew = CMatrix { m: &self.m - self.m.adjoint() }.op_norm();
        skew <= 1e-12 * scale
    }
}

impl Serialize for CMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let n = self.dim();
        let rows: Vec<Vec<[f64; 2]>> =
            (0..n).map(|i| (0..n).map(|j| [self.m[(i, j)].re, self.m[(i, j)].im]).collect()).collect();
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for CMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<[f64; 2]>> = Vec::deserialize(d)?;
        let rows: Vec<Vec<C64>> =
            rows.into_iter().map(|r| r.into_iter().map(|[re, im]| C64::new(re, im)).collect()).collect();
        CMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Schatten-p norm; pass `f64::INFINITY` for the operator norm.
pub fn schatten_norm(m: &CMatrix, p: f64) -> Result<f64> {
    if !m.is_finite() {
        return Err(invalid("matrix has non-finite entries"));
    }
    if !(p >= 1.0) {
        return Err(invalid(format!("schatten exponent must be >= 1, got {p}")));
    }
    let sv = m.singular_values();
    if p.is_infinite() {
        return Ok(sv.into_iter().fold(0.0, f64::max));
    }
    if p == 1.0 {
        return Ok(sv.iter().sum());
    }
    if p == 2.0 {
        return Ok(m.frobenius());
    }
    Ok(sv.iter().map(|s| s.powf(p)).sum::<f64>().powf(1.0 / p))
}

/// Trace norm of a matrix.
pub fn trace_norm(m: &CMatrix) -> f64 {
    m.singular_values().iter().sum()
}

/// Hilbert–Schmidt pairing `tr(A† B)`.
pub fn hs_inner(a: &CMatrix, b: &CMatrix) -> Result<C64> {
    if a.dim() != b.dim() {
        return Err(mismatch(format!("hs_inner of {}x{} and {}x{}", a.dim(), a.dim(), b.dim(), b.dim())));
    }
    Ok(a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x.conj() * y).sum())
}

/// Column-stacking vectorization: `vec(A ρ Bᵀ) = (B ⊗ A) vec(ρ)`.
pub fn vectorize(x: &CMatrix) -> Vec<C64> {
    x.as_slice().to_vec()
}

pub fn devectorize(v: &[C64]) -> Result<CMatrix> {
    let n = (v.len() as f64).sqrt().round() as usize;
    if n == 0 || n * n != v.len() {
        return Err(invalid(format!("vector length {} is not a nonzero perfect square", v.len())));
    }
    Ok(CMatrix::wrap(DMatrix::from_column_slice(n, n, v)))
}

/// Eigenvalues (ascending) and matching eigenvector columns of a Hermitian
/// matrix. Only the Hermitian part of the input is used.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, DMatrix<C64>) {
    let h = m.hermitian_part();
    let eig = SymmetricEigen::new(h.m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.dim(), m.dim(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let mut v: Vec<f64> = m.hermitian_part().m.symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(m: &CMatrix) -> Result<f64> {
    if !m.is_finite() {
        return Err(invalid("matrix has non-finite entries"));
    }
    if !m.is_hermitian() {
        return Err(invalid("matrix is not Hermitian"));
    }
    Ok(hermitian_eigenvalues(m)[0])
}

/// `f(H)` for Hermitian `H` via its eigendecomposition.
pub fn hermitian_function(m: &CMatrix, f: impl Fn(f64) -> f64) -> CMatrix {
    let (vals, vecs) = hermitian_eigen(m);
    let fd = DVector::from_iterator(vals.len(), vals.iter().map(|&x| C64::new(f(x), 0.0)));
    let scaled = DMatrix::from_fn(m.dim(), m.dim(), |r, c| vecs[(r, c)] * fd[c]);
    CMatrix::wrap(&scaled * vecs.adjoint())
}

/// Square root of a PSD matrix, clamping negative rounding noise to zero.
pub fn psd_sqrt(m: &CMatrix) -> CMatrix {
    hermitian_function(m, |x| x.max(0.0).sqrt())
}

/// Inverse square root of a positive definite matrix.
pub fn pd_inv_sqrt(m: &CMatrix) -> CMatrix {
    hermitian_function(m, |x| 1.0 / x.sqrt())
}

/// Matrix–vector product on raw column-major storage.
pub(crate) fn matvec(m: &DMatrix<C64>, v: &[C64]) -> Vec<C64> {
    let n = m.nrows();
    let mut out = vec![ZERO; n];
    for (j, &vj) in v.iter().enumerate() {
        if vj == ZERO {
            continue;
        }
        let col = &m.as_slice()[j * n..(j + 1) * n];
        for (o, &a) in out.iter_mut().zip(col) {
            *o += a * vj;
        }
    }
    out
}
