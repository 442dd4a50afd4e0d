//! Superoperators in the Liouville representation.
//!
//! A map `X ↦ Σ A_i X B_iᵀ` is stored as the D²×D² matrix `Σ B_i ⊗ A_i`
//! acting on column-stacked vectors, so composition is a matrix product and
//! `K(φ†) = K(φ)†`.

use nalgebra::DMatrix;

use crate::error::{invalid, mismatch, Result};
use crate::linalg::{devectorize, hermitian_eigenvalues, matvec, CMatrix, C64, RANK_TOL, ZERO};
use crate::rng::{haar_vector, RngSeed};
use crate::states::{HermitianObservable, LocalTensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Superoperator {
    bond_dim: usize,
    liouville: CMatrix,
}

impl Superoperator {
    /// Wraps a D²×D² Liouville matrix.
    pub fn from_liouville(bond_dim: usize, liouville: CMatrix) -> Result<Self> {
        if liouville.dim() != bond_dim * bond_dim {
            return Err(mismatch(format!(
                "Liouville matrix is {0}x{0}, expected {1}x{1}",
                liouville.dim(),
                bond_dim * bond_dim
            )));
        }
        Ok(Superoperator { bond_dim, liouville })
    }

    pub fn identity(bond_dim: usize) -> Self {
        Superoperator { bond_dim, liouville: CMatrix::identity(bond_dim * bond_dim) }
    }

    pub fn zero(bond_dim: usize) -> Self {
        Superoperator { bond_dim, liouville: CMatrix::zeros(bond_dim * bond_dim) }
    }

    pub fn bond_dim(&self) -> usize {
        self.bond_dim
    }

    pub fn liouville(&self) -> &CMatrix {
        &self.liouville
    }

    /// Applies the map to a D×D matrix.
    pub fn apply(&self, x: &CMatrix) -> Result<CMatrix> {
        if x.dim() != self.bond_dim {
            return Err(mismatch(format!("superoperator on D={} applied to {}x{}", self.bond_dim, x.dim(), x.dim())));
        }
        Ok(self.apply_unchecked(x))
    }

    pub(crate) fn apply_unchecked(&self, x: &CMatrix) -> CMatrix {
        let v = matvec(self.liouville.as_nalgebra(), x.as_slice());
        devectorize(&v).expect("D² entries")
    }

    pub fn scale(&self, a: f64) -> Self {
        Superoperator { bond_dim: self.bond_dim, liouville: self.liouville.scale_re(a) }
    }

    /// Frobenius norm of the Liouville matrix.
    pub fn frobenius(&self) -> f64 {
        self.liouville.frobenius()
    }

    /// Rescales to unit Frobenius norm; returns the scaled map and the factor
    /// that was divided out. The zero map is returned unchanged with factor 0.
    pub fn normalized(&self) -> (Self, f64) {
        let f = self.frobenius();
        if f == 0.0 {
            return (self.clone(), 0.0);
        }
        (self.scale(1.0 / f), f)
    }

    /// Choi matrix `Σ_r vec(K_r) vec(K_r)†`, obtained by reshuffling the
    /// Liouville matrix: `J[a + Dc, a' + Dc'] = K[a + Da', c + Dc']`.
    pub fn choi_matrix(&self) -> CMatrix {
        let d = self.bond_dim;
        let l = &self.liouville;
        CMatrix::from_fn(d * d, |row, col| {
            let (a, c) = (row % d, row / d);
            let (ap, cp) = (col % d, col / d);
            l.get(a + d * ap, c + d * cp)
        })
    }
}

/// `K(φ) = Σ_p conj(A_p) ⊗ A_p` for `φ(X) = Σ_p A_p X A_p†`.
pub fn liouville_of_tensor(t: &LocalTensor) -> Superoperator {
    let d = t.bond_dim();
    let n = d * d;
    let mut m = DMatrix::<C64>::zeros(n, n);
    for a in t.kraus() {
        accumulate_kron(&mut m, a, a, ONE_WEIGHT);
    }
    Superoperator { bond_dim: d, liouville: CMatrix::wrap(m) }
}

const ONE_WEIGHT: C64 = C64::new(1.0, 0.0);

// m += w · conj(b) ⊗ a
fn accumulate_kron(m: &mut DMatrix<C64>, a: &CMatrix, b: &CMatrix, w: C64) {
    let d = a.dim();
    for e in 0..d {
        for c in 0..d {
            let bce = b.get(c, e).conj() * w;
            if bce == ZERO {
                continue;
            }
            for bb in 0..d {
                for aa in 0..d {
                    m[(c * d + aa, e * d + bb)] += bce * a.get(aa, bb);
                }
            }
        }
    }
}

/// `K(𝒪) = Σ_{p,q} O_{pq} conj(A_q) ⊗ A_p`, the map `X ↦ Σ O_pq A_p X A_q†`.
pub fn observable_liouville(t: &LocalTensor, o: &HermitianObservable) -> Result<Superoperator> {
    if o.dim() != t.phys_dim() {
        return Err(mismatch(format!("observable dim {} but tensor has d = {}", o.dim(), t.phys_dim())));
    }
    let d = t.bond_dim();
    let mut m = DMatrix::<C64>::zeros(d * d, d * d);
    let om = o.matrix();
    for (p, ap) in t.kraus().iter().enumerate() {
        for (q, aq) in t.kraus().iter().enumerate() {
            let w = om.get(p, q);
            if w != ZERO {
                accumulate_kron(&mut m, ap, aq, w);
            }
        }
    }
    Ok(Superoperator { bond_dim: d, liouville: CMatrix::wrap(m) })
}

/// Trace of the Liouville matrix.
pub fn superop_trace(s: &Superoperator) -> C64 {
    s.liouville.trace()
}

pub fn superop_adjoint(s: &Superoperator) -> Superoperator {
    Superoperator { bond_dim: s.bond_dim, liouville: s.liouville.adjoint() }
}

/// `outer ∘ inner`.
pub fn superop_compose(outer: &Superoperator, inner: &Superoperator) -> Result<Superoperator> {
    if outer.bond_dim != inner.bond_dim {
        return Err(mismatch(format!("composing D={} with D={}", outer.bond_dim, inner.bond_dim)));
    }
    Ok(Superoperator { bond_dim: outer.bond_dim, liouville: outer.liouville.mul(&inner.liouville) })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PositivityMode {
    /// Choi-rank test only. Can certify, cannot refute.
    ChoiSufficient,
    /// Random pure-state sweep only. Can refute, cannot certify.
    PureSweep,
    /// Choi test first, then the sweep if the Choi test was inconclusive.
    Combined,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PositivityVerdict {
    CertifiedPositive,
    CertifiedNot,
    Undetermined,
}

/// True when the Choi matrix has full rank D², i.e. the Kraus operators span
/// all of M_D; sufficient for strict positivity.
pub fn choi_full_rank(s: &Superoperator, tol: f64) -> bool {
    let ev = hermitian_eigenvalues(&s.choi_matrix());
    let top = ev[ev.len() - 1];
    top > 0.0 && ev[0] > tol * top
}

/// `S(|v⟩⟨v|)` via the Choi evaluation identity
/// `S(|v⟩⟨v|)_{aa'} = Σ_{cc'} J[a + Dc, a' + Dc'] v_c conj(v_c')`.
pub fn pure_image(choi: &CMatrix, v: &[C64]) -> CMatrix {
    let d = v.len();
    CMatrix::from_fn(d, |a, ap| {
        let mut acc = ZERO;
        for c in 0..d {
            for cp in 0..d {
                acc += choi.get(a + d * c, ap + d * cp) * v[c] * v[cp].conj();
            }
        }
        acc
    })
}

/// Three-valued strict-positivity test.
///
/// The sweep compares `λ_min(S(|v⟩⟨v|))` against `tol` times the largest
/// eigenvalue of that image, so it is insensitive to the map's overall scale.
pub fn strict_positivity_check(
    s: &Superoperator,
    mode: PositivityMode,
    tol: f64,
    sweep_samples: usize,
    seed: RngSeed,
) -> Result<PositivityVerdict> {
    if !(tol > 0.0) {
        return Err(invalid(format!("tolerance must be positive, got {tol}")));
    }
    if mode != PositivityMode::PureSweep && choi_full_rank(s, tol) {
        return Ok(PositivityVerdict::CertifiedPositive);
    }
    if mode == PositivityMode::ChoiSufficient {
        return Ok(PositivityVerdict::Undetermined);
    }
    let choi = s.choi_matrix();
    let mut rng = seed.rng();
    for _ in 0..sweep_samples {
        let v = haar_vector(&mut rng, s.bond_dim);
        let img = pure_image(&choi, &v);
        let ev = hermitian_eigenvalues(&img);
        if ev[0] <= tol * ev[ev.len() - 1].max(0.0) {
            return Ok(PositivityVerdict::CertifiedNot);
        }
    }
    Ok(PositivityVerdict::Undetermined)
}

/// Choi-path certification at the default rank tolerance.
pub fn is_certified_positive(s: &Superoperator) -> bool {
    choi_full_rank(s, RANK_TOL)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ONE;

    fn hadamard() -> CMatrix {
        let h = 1.0 / 2f64.sqrt();
        CMatrix::from_real_rows(&[vec![h, h], vec![h, -h]]).unwrap()
    }

    #[test]
    fn identity_kraus_gives_identity() {
        let t = LocalTensor::new(vec![CMatrix::identity(3)]).unwrap();
        assert_eq!(liouville_of_tensor(&t), Superoperator::identity(3));
    }

    #[test]
    fn unitary_kraus_gives_conj_kron() {
        let u = CMatrix::from_rows(&[vec![ZERO, C64::new(0.0, 1.0)], vec![ONE, ZERO]]).unwrap();
        let t = LocalTensor::new(vec![u.clone()]).unwrap();
        let k = liouville_of_tensor(&t);
        assert!(k.liouville().sub(&u.conj().kron(&u)).frobenius() < 1e-15);
    }

    #[test]
    fn trace_examples() {
        assert_eq!(superop_trace(&Superoperator::identity(3)), C64::new(9.0, 0.0));
        let a = CMatrix::from_real_rows(&[vec![1.0, 2.0], vec![0.5, 3.0]]).unwrap();
        let b = CMatrix::from_real_rows(&[vec![-1.0, 0.0], vec![4.0, 2.5]]).unwrap();
        // φ(X) = A X Bᵀ has Liouville matrix B ⊗ A
        let s = Superoperator::from_liouville(2, b.kron(&a)).unwrap();
        assert!((superop_trace(&s) - a.trace() * b.trace()).norm() < 1e-14);
    }

    #[test]
    fn observable_identity_recovers_transfer() {
        let h = hadamard();
        let t = LocalTensor::new(vec![h.clone(), h.mul(&CMatrix::diag(&[1.0, 2.0]))]).unwrap();
        let k = liouville_of_tensor(&t);
        assert_eq!(observable_liouville(&t, &HermitianObservable::identity(2)).unwrap(), k);
        let zero = observable_liouville(&t, &HermitianObservable::diag(&[0.0, 0.0])).unwrap();
        assert_eq!(zero, Superoperator::zero(2));
        assert!(observable_liouville(&t, &HermitianObservable::identity(3)).is_err());
    }

    #[test]
    fn adjoint_involution_and_unitary() {
        let h = hadamard();
        let s = CMatrix::from_rows(&[vec![ONE, ZERO], vec![ZERO, C64::new(0.0, 1.0)]]).unwrap();
        let u = h.mul(&s);
        let k = liouville_of_tensor(&LocalTensor::new(vec![u.clone()]).unwrap());
        assert_eq!(superop_adjoint(&superop_adjoint(&k)), k);
        let kd = liouville_of_tensor(&LocalTensor::new(vec![u.adjoint()]).unwrap());
        assert!(superop_adjoint(&k).liouville().sub(kd.liouville()).frobenius() < 1e-14);
    }

    #[test]
    fn compose_identity_and_depolarizer() {
        let h = hadamard();
        let k = liouville_of_tensor(&LocalTensor::new(vec![h]).unwrap());
        assert_eq!(superop_compose(&k, &Superoperator::identity(2)).unwrap(), k);
        let dep = liouville_of_tensor(&LocalTensor::depolarizing(2));
        let c = superop_compose(&dep, &k).unwrap();
        assert!(c.liouville().sub(dep.liouville()).frobenius() < 1e-14);
        assert!(superop_compose(&k, &Superoperator::identity(3)).is_err());
    }

    #[test]
    fn positivity_examples() {
        let dep = liouville_of_tensor(&LocalTensor::depolarizing(2));
        let seed = RngSeed::new(0);
        assert_eq!(
            strict_positivity_check(&dep, PositivityMode::ChoiSufficient, 1e-9, 0, seed).unwrap(),
            PositivityVerdict::CertifiedPositive
        );
        let u = liouville_of_tensor(&LocalTensor::unitary(&hadamard(), 1).unwrap());
        assert_eq!(
            strict_positivity_check(&u, PositivityMode::Combined, 1e-9, 10, seed).unwrap(),
            PositivityVerdict::CertifiedNot
        );
        assert_eq!(
            strict_positivity_check(&u, PositivityMode::ChoiSufficient, 1e-9, 10, seed).unwrap(),
            PositivityVerdict::Undetermined
        );
        assert!(strict_positivity_check(&u, PositivityMode::Combined, 0.0, 10, seed).is_err());
    }

    #[test]
    fn evaluation_identity_matches_direct_action() {
        let h = hadamard();
        let t = LocalTensor::new(vec![h.clone(), CMatrix::diag(&[0.3, 1.2])]).unwrap();
        let k = liouville_of_tensor(&t);
        let v = [C64::new(0.6, 0.1), C64::new(-0.2, 0.77)];
        let rho = CMatrix::from_fn(2, |i, j| v[i] * v[j].conj());
        let direct = hermitian_eigenvalues(&t.apply(&rho))[0];
        let via_choi = hermitian_eigenvalues(&pure_image(&k.choi_matrix(), &v))[0];
        assert!((via_choi - direct).abs() < 1e-13);
    }
}
