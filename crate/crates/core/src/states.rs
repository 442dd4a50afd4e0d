//! Validated wrappers: observables, density states and site tensors.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};
use crate::linalg::{hermitian_eigenvalues, CMatrix, C64, ONE, RANK_TOL, ZERO};

/// A Hermitian matrix, either a physical-site observable (dim d) or a
/// bond-space operator (dim D).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CMatrix", into = "CMatrix")]
pub struct HermitianObservable {
    matrix: CMatrix,
}

impl HermitianObservable {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if !matrix.is_finite() {
            return Err(invalid("observable has non-finite entries"));
        }
        if !matrix.is_hermitian() {
            return Err(invalid("observable is not Hermitian"));
        }
        Ok(HermitianObservable { matrix })
    }

    pub fn identity(dim: usize) -> Self {
        HermitianObservable { matrix: CMatrix::identity(dim) }
    }

    pub fn diag(values: &[f64]) -> Self {
        HermitianObservable { matrix: CMatrix::diag(values) }
    }

    /// `diag(1, -1, 1, -1, ...)`; the Pauli-Z analogue in any dimension.
    pub fn staggered(dim: usize) -> Self {
        let v: Vec<f64> = (0..dim).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        Self::diag(&v)
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    /// Operator norm `‖O‖_∞`.
    pub fn norm(&self) -> f64 {
        self.matrix.op_norm()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_eigenvalues(&self.matrix)[0]
    }
}

impl TryFrom<CMatrix> for HermitianObservable {
    type Error = crate::Error;
    fn try_from(m: CMatrix) -> Result<Self> {
        Self::new(m)
    }
}

impl From<HermitianObservable> for CMatrix {
    fn from(o: HermitianObservable) -> CMatrix {
        o.matrix
    }
}

/// A density matrix: Hermitian, PSD and trace one.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityState {
    matrix: CMatrix,
    eta: f64,
}

impl DensityState {
    /// Validates PSD (smallest eigenvalue ≥ −1e-10) and unit trace.
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if !matrix.is_finite() {
            return Err(invalid("state has non-finite entries"));
        }
        if !matrix.is_hermitian() {
            return Err(invalid("state is not Hermitian"));
        }
        let tr = matrix.trace();
        if (tr - ONE).norm() > 1e-10 {
            return Err(invalid(format!("state trace {tr} is not one")));
        }
        let eta = hermitian_eigenvalues(&matrix)[0];
        if eta < -1e-10 {
            return Err(invalid(format!("state has negative eigenvalue {eta:e}")));
        }
        Ok(DensityState { matrix, eta })
    }

    /// Normalizes a nonzero PSD matrix to unit trace.
    pub fn from_psd(matrix: &CMatrix) -> Result<Self> {
        let tr = matrix.trace().re;
        if !(tr > 0.0) {
            return Err(invalid("cannot normalize a matrix with nonpositive trace"));
        }
        Self::new(matrix.hermitian_part().scale_re(1.0 / tr))
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        DensityState { matrix: CMatrix::identity(dim).scale_re(1.0 / dim as f64), eta: 1.0 / dim as f64 }
    }

    /// `|v⟩⟨v| / ⟨v|v⟩`.
    pub fn pure(v: &[C64]) -> Result<Self> {
        let n2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        if v.is_empty() || !(n2 > 0.0) || !n2.is_finite() {
            return Err(invalid("pure state needs a finite nonzero vector"));
        }
        let m = CMatrix::from_fn(v.len(), |i, j| v[i] * v[j].conj() / n2);
        Ok(DensityState { eta: hermitian_eigenvalues(&m)[0], matrix: m })
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    /// Smallest eigenvalue η(ρ).
    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// True when η(ρ) exceeds the rank tolerance.
    pub fn is_full_rank(&self) -> bool {
        self.eta > RANK_TOL
    }
}

/// A site tensor: `d` Kraus matrices of a common size `D`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TensorDoc", into = "TensorDoc")]
pub struct LocalTensor {
    kraus: Vec<CMatrix>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorDoc {
    kraus: Vec<CMatrix>,
}

impl TryFrom<TensorDoc> for LocalTensor {
    type Error = crate::Error;
    fn try_from(doc: TensorDoc) -> Result<Self> {
        LocalTensor::new(doc.kraus)
    }
}

impl From<LocalTensor> for TensorDoc {
    fn from(t: LocalTensor) -> TensorDoc {
        TensorDoc { kraus: t.kraus }
    }
}

impl LocalTensor {
    pub fn new(kraus: Vec<CMatrix>) -> Result<Self> {
        let first = kraus.first().ok_or_else(|| invalid("tensor needs at least one Kraus matrix"))?;
        let dim = first.dim();
        if let Some(p) = kraus.iter().position(|k| k.dim() != dim) {
            return Err(mismatch(format!("Kraus matrix {p} has size {}, expected {dim}", kraus[p].dim())));
        }
        if kraus.iter().any(|k| !k.is_finite()) {
            return Err(invalid("Kraus data has non-finite entries"));
        }
        Ok(LocalTensor { kraus })
    }

    /// The completely depolarizing channel: Kraus `E_ij/√D`, so `d = D²`.
    pub fn depolarizing(bond_dim: usize) -> Self {
        let s = C64::new(1.0 / (bond_dim as f64).sqrt(), 0.0);
        let mut kraus = Vec::with_capacity(bond_dim * bond_dim);
        for i in 0..bond_dim {
            for j in 0..bond_dim {
                kraus.push(CMatrix::from_fn(bond_dim, |r, c| if (r, c) == (i, j) { s } else { ZERO }));
            }
        }
        LocalTensor { kraus }
    }

    /// Unitary conjugation spread over `phys_dim` equal Kraus copies `U/√d`.
    pub fn unitary(u: &CMatrix, phys_dim: usize) -> Result<Self> {
        if phys_dim == 0 {
            return Err(invalid("phys_dim must be positive"));
        }
        let uu = u.adjoint().mul(u);
        if uu.sub(&CMatrix::identity(u.dim())).op_norm() > 1e-10 {
            return Err(invalid("matrix is not unitary"));
        }
        let k = u.scale_re(1.0 / (phys_dim as f64).sqrt());
        Self::new(vec![k; phys_dim])
    }

    pub fn phys_dim(&self) -> usize {
        self.kraus.len()
    }

    pub fn bond_dim(&self) -> usize {
        self.kraus[0].dim()
    }

    pub fn kraus(&self) -> &[CMatrix] {
        &self.kraus
    }

    /// `Σ_p A_p X A_p†`, evaluated directly.
    pub fn apply(&self, x: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(x.dim());
        for a in &self.kraus {
            out = out.add(&a.mul(x).mul(&a.adjoint()));
        }
        out
    }

    /// Multiplies every Kraus matrix by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        LocalTensor { kraus: self.kraus.iter().map(|k| k.scale_re(s)).collect() }
    }

    /// `‖A_1‖₂`, the Frobenius norm of the first Kraus matrix.
    pub fn first_kraus_norm(&self) -> f64 {
        self.kraus[0].frobenius()
    }
}
