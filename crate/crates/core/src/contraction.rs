//! Projective geometry of the PSD cone: the coefficient `m(A,B)`, the metric
//! `d`, trace-normalized action of a superoperator, and lower estimates of
//! the contraction coefficient `c(φ)`.

use nalgebra::DMatrix;

use crate::error::{invalid, mismatch, Error, Result};
use crate::linalg::{hermitian_eigen, hermitian_eigenvalues, matvec, CMatrix, C64, RANK_TOL, ZERO};
use crate::rng::{complex_normal, RngSeed};
use crate::states::DensityState;
use crate::superop::Superoperator;

/// Images whose trace falls below this multiple of `‖K‖_F · ‖X‖₁` count as zero.
pub const ZERO_REL: f64 = 1e-13;

fn check_psd(m: &CMatrix, what: &str) -> Result<Vec<f64>> {
    if !m.is_finite() || !m.is_hermitian() {
        return Err(invalid(format!("{what} is not a finite Hermitian matrix")));
    }
    let ev = hermitian_eigenvalues(m);
    let top = ev[ev.len() - 1].abs().max(ev[0].abs());
    if ev[0] < -1e-10 * top.max(1e-300) {
        return Err(invalid(format!("{what} is not PSD (eigenvalue {:e})", ev[0])));
    }
    Ok(ev)
}

/// `m(A,B) = sup{λ ≥ 0 : λB ⪯ A}`.
///
/// Zero when the support of `B` leaves the support of `A`; otherwise
/// `1/λ_max(A_s^{-1/2} B A_s^{-1/2})` with `A_s` the restriction of `A` to
/// its support.
pub fn m_coeff(a: &CMatrix, b: &CMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(mismatch(format!("m_coeff of {}x{} and {}x{}", a.dim(), a.dim(), b.dim(), b.dim())));
    }
    check_psd(a, "A")?;
    let evb = check_psd(b, "B")?;
    let bmax = evb[evb.len() - 1];
    if !(bmax > 0.0) {
        return Err(invalid("B must be nonzero"));
    }
    Ok(m_coeff_unchecked(a, b, bmax))
}

fn m_coeff_unchecked(a: &CMatrix, b: &CMatrix, bmax: f64) -> f64 {
    let (vals, vecs) = hermitian_eigen(a);
    let amax = vals[vals.len() - 1];
    if !(amax > 0.0) {
        return 0.0;
    }
    let thr = RANK_TOL * amax;
    let support: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > thr).collect();
    let kernel: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] <= thr).collect();
    let bm = b.as_nalgebra();
    let n = a.dim();
    if !kernel.is_empty() {
        let nk = DMatrix::from_fn(n, kernel.len(), |r, c| vecs[(r, kernel[c])]);
        let bkk = nk.adjoint() * bm * &nk;
        let leak = hermitian_eigenvalues(&CMatrix::wrap(bkk));
        if leak[leak.len() - 1] > RANK_TOL * bmax {
            return 0.0;
        }
    }
    let w = DMatrix::from_fn(n, support.len(), |r, c| vecs[(r, support[c])] / vals[support[c]].sqrt());
    let m = w.adjoint() * bm * &w;
    let mu = hermitian_eigenvalues(&CMatrix::wrap(m));
    1.0 / mu[mu.len() - 1]
}

/// Projective distance between two nonzero PSD matrices of equal size.
/// Invariant under positive rescaling of either argument.
pub(crate) fn psd_distance(p: &CMatrix, q: &CMatrix) -> f64 {
    if p.dim() == 2 {
        let ps = [p.get(0, 0), p.get(1, 0), p.get(0, 1), p.get(1, 1)];
        let qs = [q.get(0, 0), q.get(1, 0), q.get(0, 1), q.get(1, 1)];
        return distance2(&ps, &qs);
    }
    distance_general(p, q)
}

fn distance_general(p: &CMatrix, q: &CMatrix) -> f64 {
    if let Some(d) = pencil_distance(p, q) {
        return d;
    }
    if let Some(d) = pencil_distance(q, p) {
        return d;
    }
    let pmax = *hermitian_eigenvalues(p).last().unwrap();
    let qmax = *hermitian_eigenvalues(q).last().unwrap();
    let mm = m_coeff_unchecked(p, q, qmax) * m_coeff_unchecked(q, p, pmax);
    ((1.0 - mm) / (1.0 + mm)).clamp(0.0, 1.0)
}

// Uses the eigenvalues of Q^{-1/2} P Q^{-1/2}; None when Q is near singular.
fn pencil_distance(p: &CMatrix, q: &CMatrix) -> Option<f64> {
    let (vals, vecs) = hermitian_eigen(q);
    let top = vals[vals.len() - 1];
    if !(top > 0.0) || vals[0] <= RANK_TOL * top {
        return None;
    }
    let n = q.dim();
    let w = DMatrix::from_fn(n, n, |r, c| vecs[(r, c)] / vals[c].sqrt());
    let m = w.adjoint() * p.as_nalgebra() * &w;
    let mu = hermitian_eigenvalues(&CMatrix::wrap(m));
    let hi = mu[mu.len() - 1];
    let lo = mu[0].max(0.0);
    if !(hi > 0.0) {
        return Some(1.0);
    }
    Some(((hi - lo) / (hi + lo)).clamp(0.0, 1.0))
}

/// Closed-form D=2 distance on column-major entries `[x00, x10, x01, x11]`.
fn distance2(p: &[C64; 4], q: &[C64; 4]) -> f64 {
    if let Some(d) = chol_distance2(p, q) {
        return d;
    }
    if let Some(d) = chol_distance2(q, p) {
        return d;
    }
    let pm = CMatrix::from_fn(2, |i, j| p[i + 2 * j]);
    let qm = CMatrix::from_fn(2, |i, j| q[i + 2 * j]);
    distance_general(&pm, &qm)
}

/// Inverse Cholesky factor of a well-conditioned 2×2 PSD matrix:
/// `(w11, w21, w22)` with `W = L^{-1}` lower triangular.
#[derive(Clone, Copy, Debug)]
struct InvChol2 {
    w11: f64,
    w21: C64,
    w22: f64,
}

fn inv_chol2(q: &[C64; 4]) -> Option<InvChol2> {
    let q00 = q[0].re;
    let q11 = q[3].re;
    let q10 = q[1];
    let tr = q00 + q11;
    if !(tr > 0.0) {
        return None;
    }
    let det = q00 * q11 - q10.norm_sqr();
    let disc = ((q00 - q11) * (q00 - q11) + 4.0 * q10.norm_sqr()).sqrt();
    let lmax = 0.5 * (tr + disc);
    let lmin = det / lmax;
    if !(lmin > RANK_TOL * lmax) {
        return None;
    }
    let l11 = q00.sqrt();
    let l21 = q10 / l11;
    let l22 = (det / q00).sqrt();
    Some(InvChol2 { w11: 1.0 / l11, w21: -l21 / (l11 * l22), w22: 1.0 / l22 })
}

fn chol_distance2(p: &[C64; 4], q: &[C64; 4]) -> Option<f64> {
    inv_chol2(q).map(|w| whitened_distance2(p, &w))
}

// d from the eigenvalues of W P W†.
fn whitened_distance2(p: &[C64; 4], w: &InvChol2) -> f64 {
    let p00 = p[0].re;
    let p11 = p[3].re;
    let p10 = p[1];
    let p01 = p10.conj();
    // T = W P, rows of W are (w11, 0) and (w21, w22)
    let t00 = w.w11 * p00;
    let t10 = w.w21 * p00 + p10 * w.w22;
    let t11 = w.w21 * p01 + w.w22 * p11;
    // M = T W†
    let a = t00 * w.w11;
    let c = t10 * w.w11;
    let b = (t10 * w.w21.conj() + t11 * w.w22).re;
    let s = a + b;
    if !(s > 0.0) {
        return 1.0;
    }
    (((a - b) * (a - b) + 4.0 * c.norm_sqr()).sqrt() / s).clamp(0.0, 1.0)
}

/// The metric `d(ρ,δ) = (1 − m(ρ,δ)m(δ,ρ)) / (1 + m(ρ,δ)m(δ,ρ))`.
pub fn metric_d(rho: &DensityState, delta: &DensityState) -> Result<f64> {
    if rho.dim() != delta.dim() {
        return Err(mismatch("states of different dimension"));
    }
    Ok(psd_distance(rho.matrix(), delta.matrix()))
}

/// Outcome of the trace-normalized action.
#[derive(Clone, Debug, PartialEq)]
pub enum Projected {
    State(DensityState),
    Zero,
}

impl Projected {
    pub fn state(self) -> Result<DensityState> {
        match self {
            Projected::State(s) => Ok(s),
            Projected::Zero => Err(Error::KernelMeetsStates),
        }
    }
}

/// `S ⋄ X = S(X) / ‖S(X)‖₁` for nonzero PSD `X`, or [`Projected::Zero`].
pub fn projective_apply(s: &Superoperator, x: &CMatrix) -> Result<Projected> {
    if x.dim() != s.bond_dim() {
        return Err(mismatch(format!("input is {}x{}, map acts on D={}", x.dim(), x.dim(), s.bond_dim())));
    }
    let ev = check_psd(x, "input")?;
    let xnorm: f64 = ev.iter().map(|v| v.max(0.0)).sum();
    if !(xnorm > 0.0) {
        return Err(invalid("input must be nonzero"));
    }
    let y = s.apply_unchecked(x).hermitian_part();
    let tr = y.trace().re;
    if !(tr > ZERO_REL * s.frobenius() * xnorm) {
        return Ok(Projected::Zero);
    }
    Ok(Projected::State(DensityState::from_psd(&y)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContractionMethod {
    PurePairSearch,
    GridOracle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchOptions {
    pub restarts: usize,
    pub iters: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions { restarts: 64, iters: 200 }
    }
}

impl SearchOptions {
    pub fn escalated(self, factor: usize) -> Self {
        SearchOptions { restarts: self.restarts * factor, iters: self.iters }
    }
}

#[derive(Clone, Debug)]
pub struct ContractionEstimate {
    /// Best value found; a lower bound on `c(S)`.
    pub lower: f64,
    pub method: ContractionMethod,
    pub restarts: usize,
    /// Pure-state pair attaining `lower`.
    pub witnesses: (DensityState, DensityState),
}

/// Evaluates `d(S ⋄ |u⟩⟨u|, S ⋄ |v⟩⟨v|)` straight from the Liouville matrix.
struct PairEvaluator<'a> {
    dim: usize,
    k: &'a DMatrix<C64>,
    zero_scale: f64,
}

impl<'a> PairEvaluator<'a> {
    fn new(s: &'a Superoperator) -> Self {
        PairEvaluator { dim: s.bond_dim(), k: s.liouville().as_nalgebra(), zero_scale: ZERO_REL * s.frobenius() }
    }

    /// Column-major image of `|u⟩⟨u|`; errors when it is numerically zero.
    fn image(&self, u: &[C64]) -> Result<Vec<C64>> {
        let d = self.dim;
        let mut x = vec![ZERO; d * d];
        for c in 0..d {
            let uc = u[c].conj();
            for a in 0..d {
                x[a + d * c] = u[a] * uc;
            }
        }
        let y = matvec(self.k, &x);
        let tr: f64 = (0..d).map(|i| y[i * (d + 1)].re).sum();
        let n2: f64 = u.iter().map(|z| z.norm_sqr()).sum();
        if !(tr > self.zero_scale * n2) {
            return Err(Error::KernelMeetsStates);
        }
        Ok(y)
    }

    fn distance(&self, p: &[C64], q: &[C64]) -> f64 {
        if self.dim == 2 {
            return distance2(&[p[0], p[1], p[2], p[3]], &[q[0], q[1], q[2], q[3]]);
        }
        let pm = CMatrix::from_fn(self.dim, |i, j| p[i + self.dim * j]).hermitian_part();
        let qm = CMatrix::from_fn(self.dim, |i, j| q[i + self.dim * j]).hermitian_part();
        distance_general(&pm, &qm)
    }
}

fn params_to_vec(x: &[f64]) -> Vec<C64> {
    x.chunks(2).map(|c| C64::new(c[0], c[1])).collect()
}

fn normalize_params(x: &mut [f64]) {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            _ => {}
        }
    }
    false
}

/// Lower estimate of `c(S)` by coordinate search over pure-state pairs.
///
/// Each restart draws `u, v` from a per-restart seed, then sweeps the `4D`
/// real coordinates with ± steps, halving the step whenever a whole sweep
/// fails to improve. A sweep counts as one iteration.
pub fn contraction_estimate(s: &Superoperator, opts: SearchOptions, seed: RngSeed) -> Result<ContractionEstimate> {
    if opts.restarts == 0 {
        return Err(invalid("restarts must be positive"));
    }
    let d = s.bond_dim();
    let ev = PairEvaluator::new(s);
    let half = 2 * d;
    let mut best_val = -1.0;
    let mut best_x: Vec<f64> = Vec::new();

    for r in 0..opts.restarts {
        let mut rng = seed.child(r as u64).rng();
        let mut x: Vec<f64> = (0..2 * half).map(|_| complex_normal(&mut rng, 1.0).re).collect();
        normalize_params(&mut x[..half]);
        normalize_params(&mut x[half..]);
        let mut pu = ev.image(&params_to_vec(&x[..half]))?;
        let mut pv = ev.image(&params_to_vec(&x[half..]))?;
        let mut val = ev.distance(&pu, &pv);
        let mut step = 0.3;
        for _ in 0..opts.iters {
            if val >= 1.0 || step < 1e-9 {
                break;
            }
            let mut improved = false;
            for j in 0..2 * half {
                for sign in [1.0, -1.0] {
                    let old = x[j];
                    x[j] = old + sign * step;
                    let (cu, cv) = if j < half {
                        (ev.image(&params_to_vec(&x[..half]))?, pv.clone())
                    } else {
                        (pu.clone(), ev.image(&params_to_vec(&x[half..]))?)
                    };
                    let cand = ev.distance(&cu, &cv);
                    if cand > val {
                        val = cand;
                        pu = cu;
                        pv = cv;
                        improved = true;
                        break;
                    }
                    x[j] = old;
                }
            }
            normalize_params(&mut x[..half]);
            normalize_params(&mut x[half..]);
            if !improved {
                step *= 0.5;
            }
        }
        if val > best_val || (val == best_val && lex_less(&x, &best_x)) {
            best_val = val;
            best_x = x;
        }
    }

    let wu = DensityState::pure(&params_to_vec(&best_x[..half]))?;
    let wv = DensityState::pure(&params_to_vec(&best_x[half..]))?;
    Ok(ContractionEstimate {
        lower: best_val.clamp(0.0, 1.0),
        method: ContractionMethod::PurePairSearch,
        restarts: opts.restarts,
        witnesses: (wu, wv),
    })
}

/// Brute-force `c(S)` for D=2 over a Bloch-sphere grid of pure states plus
/// the maximally mixed state.
pub fn contraction_oracle_d2(s: &Superoperator, grid: usize) -> Result<f64> {
    if s.bond_dim() != 2 {
        return Err(invalid(format!("grid oracle needs D=2, got D={}", s.bond_dim())));
    }
    if grid < 8 {
        return Err(invalid(format!("grid must be at least 8, got {grid}")));
    }
    let ev = PairEvaluator::new(s);
    let mut images: Vec<[C64; 4]> = Vec::with_capacity(grid * grid + 1);
    let to4 = |y: Vec<C64>| [y[0], y[1], y[2], y[3]];
    for i in 0..grid {
        let theta = std::f64::consts::PI * i as f64 / (grid - 1) as f64;
        for j in 0..grid {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / grid as f64;
            let u = [C64::new((theta / 2.0).cos(), 0.0), C64::from_polar((theta / 2.0).sin(), phi)];
            images.push(to4(ev.image(&u)?));
        }
    }
    let mixed = s.apply_unchecked(&CMatrix::identity(2).scale_re(0.5));
    if !(mixed.trace().re > ev.zero_scale) {
        return Err(Error::KernelMeetsStates);
    }
    images.push([mixed.get(0, 0), mixed.get(1, 0), mixed.get(0, 1), mixed.get(1, 1)]);

    let whiten: Vec<Option<InvChol2>> = images.iter().map(inv_chol2).collect();
    let mut best: f64 = 0.0;
    for a in 0..images.len() {
        for b in (a + 1)..images.len() {
            let v = match (&whiten[b], &whiten[a]) {
                (Some(w), _) => whitened_distance2(&images[a], w),
                (None, Some(w)) => whitened_distance2(&images[b], w),
                (None, None) => distance2(&images[a], &images[b]),
            };
            if v > best {
                best = v;
            }
        }
    }
    Ok(best)
}
