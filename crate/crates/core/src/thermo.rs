//! Finite-chain and thermodynamic-limit expectations, connected two-point
//! functions, and dynamic gauge fixing.
//!
//! Boundary conventions: `Z_k` is the forward limit through `φ_k` (so
//! `φ_k ⋄ Z_{k−1} = Z_k`) and `Z'_k` the backward limit through `φ_k†`
//! (so `φ_k† ⋄ Z'_{k+1} = Z'_k`).

use serde::{Deserialize, Serialize};

use crate::contraction::{contraction_estimate, projective_apply, SearchOptions};
use crate::ensembles::ChainWindow;
use crate::error::{invalid, mismatch, Error, Result};
use crate::linalg::{hs_inner, pd_inv_sqrt, psd_sqrt, trace_norm, CMatrix, C64, RANK_TOL};
use crate::rng::{haar_vector, RngSeed};
use crate::states::{DensityState, HermitianObservable, LocalTensor};
use crate::superop::{liouville_of_tensor, observable_liouville, superop_adjoint, superop_compose, Superoperator};

/// Numerical settings shared by the limit computations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermoOptions {
    /// Largest number of maps used for one boundary iteration.
    #[serde(default = "default_depth")]
    pub max_depth: usize,
    /// Trace-norm tolerance between successive boundary iterates.
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub search: SearchOptions,
}

fn default_depth() -> usize {
    2000
}

fn default_tol() -> f64 {
    1e-10
}

impl Default for ThermoOptions {
    fn default() -> Self {
        ThermoOptions { max_depth: default_depth(), tol: default_tol(), search: SearchOptions::default() }
    }
}

/// Boundary states at one site.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryStates {
    pub site: i64,
    pub z: DensityState,
    pub zp: DensityState,
    pub depth_used: usize,
    pub residual: f64,
}

struct Limit {
    state: DensityState,
    depth: usize,
    residual: f64,
}

fn check_obs(window: &ChainWindow, o: &HermitianObservable) -> Result<()> {
    if o.dim() != window.phys_dim() {
        return Err(mismatch(format!("observable is {}x{}, physical dimension is {}", o.dim(), o.dim(), window.phys_dim())));
    }
    Ok(())
}

/// Iterates a growing product on `𝕀/D` until successive iterates agree.
fn iterate_limit(
    d: usize,
    maps: impl Iterator<Item = Result<Superoperator>>,
    max_depth: usize,
    tol: f64,
) -> Result<Limit> {
    let start = CMatrix::identity(d).scale_re(1.0 / d as f64);
    let mut prod: Option<Superoperator> = None;
    let mut prev: Option<DensityState> = None;
    let mut residual = f64::INFINITY;
    let mut depth = 0;
    for map in maps.take(max_depth) {
        let map = map?;
        let next = match &prod {
            None => map,
            Some(p) => superop_compose(p, &map)?,
        }
        .normalized()
        .0;
        let cur = projective_apply(&next, &start)?.state()?;
        depth += 1;
        if let Some(p) = &prev {
            residual = trace_norm(&cur.matrix().sub(p.matrix()));
            if residual < tol {
                return Ok(Limit { state: cur, depth: depth - 1, residual });
            }
        }
        prev = Some(cur);
        prod = Some(next);
    }
    match prev {
        Some(state) if residual <= 100.0 * tol => Ok(Limit { state, depth, residual }),
        _ => Err(Error::NoConvergence { residual, depth }),
    }
}

fn left_limit(window: &ChainWindow, site: i64, max_depth: usize, tol: f64) -> Result<Limit> {
    window.tensor(site)?;
    let maps = (window.first_site..=site).rev().map(|k| window.transfer(k));
    iterate_limit(window.bond_dim(), maps, max_depth, tol)
}

fn right_limit(window: &ChainWindow, site: i64, max_depth: usize, tol: f64) -> Result<Limit> {
    window.tensor(site)?;
    let maps = (site..=window.last_site()).map(|k| window.transfer(k).map(|s| superop_adjoint(&s)));
    iterate_limit(window.bond_dim(), maps, max_depth, tol)
}

/// `Z_site` and `Z'_site` by projective-limit iteration from `𝕀/D`, using at
/// most `max_depth` maps on each side (fewer if the window ends first).
pub fn boundary_states(window: &ChainWindow, site: i64, max_depth: usize, tol: f64) -> Result<BoundaryStates> {
    let l = left_limit(window, site, max_depth, tol)?;
    let r = right_limit(window, site, max_depth, tol)?;
    Ok(BoundaryStates {
        site,
        z: l.state,
        zp: r.state,
        depth_used: l.depth.max(r.depth),
        residual: l.residual.max(r.residual),
    })
}

/// Boundary states on a site range, seeded by one iteration at each end and
/// propagated through the cocycle relations.
#[derive(Clone, Debug)]
pub struct BoundaryField {
    lo: i64,
    z: Vec<DensityState>,
    zp: Vec<DensityState>,
    depth_used: usize,
    residual: f64,
}

impl BoundaryField {
    pub fn compute(window: &ChainWindow, lo: i64, hi: i64, max_depth: usize, tol: f64) -> Result<Self> {
        if hi < lo {
            return Err(invalid(format!("empty site range [{lo}, {hi}]")));
        }
        let l = left_limit(window, lo, max_depth, tol)?;
        let r = right_limit(window, hi, max_depth, tol)?;
        let mut z = vec![l.state];
        for k in lo + 1..=hi {
            let next = projective_apply(&window.transfer(k)?, z.last().unwrap().matrix())?.state()?;
            z.push(next);
        }
        let mut zp = vec![r.state];
        for k in (lo..hi).rev() {
            let next = projective_apply(&superop_adjoint(&window.transfer(k)?), zp.last().unwrap().matrix())?.state()?;
            zp.push(next);
        }
        zp.reverse();
        Ok(BoundaryField { lo, z, zp, depth_used: l.depth.max(r.depth), residual: l.residual.max(r.residual) })
    }

    pub fn lo(&self) -> i64 {
        self.lo
    }

    pub fn hi(&self) -> i64 {
        self.lo + self.z.len() as i64 - 1
    }

    fn index(&self, site: i64) -> Result<usize> {
        if site < self.lo || site > self.hi() {
            return Err(invalid(format!("site {site} outside boundary field [{}, {}]", self.lo, self.hi())));
        }
        Ok((site - self.lo) as usize)
    }

    pub fn z(&self, site: i64) -> Result<&DensityState> {
        Ok(&self.z[self.index(site)?])
    }

    pub fn zp(&self, site: i64) -> Result<&DensityState> {
        Ok(&self.zp[self.index(site)?])
    }

    pub fn at(&self, site: i64) -> Result<BoundaryStates> {
        let i = self.index(site)?;
        Ok(BoundaryStates {
            site,
            z: self.z[i].clone(),
            zp: self.zp[i].clone(),
            depth_used: self.depth_used,
            residual: self.residual,
        })
    }
}

/// Running Liouville product with its log-scale kept apart.
struct ScaledProduct {
    m: CMatrix,
    log_scale: f64,
}

impl ScaledProduct {
    fn new(s: &Superoperator) -> Self {
        let (n, f) = s.normalized();
        ScaledProduct { m: n.liouville().clone(), log_scale: f.ln() }
    }

    fn push_outer(&mut self, s: &Superoperator) {
        let m = s.liouville().mul(&self.m);
        let f = m.frobenius();
        self.m = m.scale_re(1.0 / f);
        self.log_scale += f.ln();
    }
}

fn observables_by_site(obs: &[(i64, HermitianObservable)]) -> Result<Vec<(i64, &HermitianObservable)>> {
    let mut v: Vec<(i64, &HermitianObservable)> = obs.iter().map(|(s, o)| (*s, o)).collect();
    v.sort_by_key(|x| x.0);
    if v.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(invalid("two observables on one site"));
    }
    Ok(v)
}

fn site_map(window: &ChainWindow, site: i64, obs: &[(i64, &HermitianObservable)]) -> Result<Superoperator> {
    let t = window.tensor(site)?;
    match obs.iter().find(|(s, _)| *s == site) {
        Some((_, o)) => observable_liouville(t, o),
        None => Ok(liouville_of_tensor(t)),
    }
}

/// `Tr[φ_N ∘ … ∘ 𝒪 ∘ … ∘ φ_{−N}] / Tr[φ_N ∘ … ∘ φ_{−N}]`.
pub fn finite_expectation(window: &ChainWindow, obs: &[(i64, HermitianObservable)], n: usize) -> Result<f64> {
    let n = n as i64;
    if !window.contains(-n) || !window.contains(n) {
        return Err(invalid(format!("window [{}, {}] does not cover [-{n}, {n}]", window.first_site, window.last_site())));
    }
    let obs = observables_by_site(obs)?;
    for (s, o) in &obs {
        check_obs(window, o)?;
        if *s <= -n || *s >= n {
            return Err(invalid(format!("observable site {s} not inside (-{n}, {n})")));
        }
    }
    let mut num = ScaledProduct::new(&site_map(window, -n, &obs)?);
    let mut den = ScaledProduct::new(&window.transfer(-n)?);
    for k in -n + 1..=n {
        num.push_outer(&site_map(window, k, &obs)?);
        den.push_outer(&window.transfer(k)?);
    }
    let dt = den.m.trace();
    if !(dt.norm() >= 1e-300) {
        return Err(Error::DegenerateChain(format!("normalized supertrace {dt} vanishes")));
    }
    let ratio = num.m.trace() / dt * (num.log_scale - den.log_scale).exp();
    Ok(ratio.re)
}

/// `⟨Z'_{n+1}, 𝒪_{[m,n]}(Z_{m−1})⟩ / ⟨Z'_{n+1}, Φ_{[m,n]}(Z_{m−1})⟩` for
/// observables on sites `m ≤ … ≤ n`.
pub fn thermo_expectation(window: &ChainWindow, obs: &[(i64, HermitianObservable)], opts: &ThermoOptions) -> Result<f64> {
    let obs = observables_by_site(obs)?;
    let (m, n) = match (obs.first(), obs.last()) {
        (Some(a), Some(b)) => (a.0, b.0),
        _ => return Err(invalid("no observables given")),
    };
    for (_, o) in &obs {
        check_obs(window, o)?;
    }
    let z = left_limit(window, m - 1, opts.max_depth, opts.tol)?.state;
    let zp = right_limit(window, n + 1, opts.max_depth, opts.tol)?.state;
    expectation_between(window, &obs, m, n, &z, &zp)
}

fn expectation_between(
    window: &ChainWindow,
    obs: &[(i64, &HermitianObservable)],
    m: i64,
    n: i64,
    z: &DensityState,
    zp: &DensityState,
) -> Result<f64> {
    let mut x = z.matrix().clone();
    let mut y = z.matrix().clone();
    for k in m..=n {
        x = site_map(window, k, obs)?.apply(&x)?;
        y = window.transfer(k)?.apply(&y)?;
        let t = y.trace().re;
        if !(t > 0.0) {
            return Err(Error::KernelMeetsStates);
        }
        x = x.scale_re(1.0 / t);
        y = y.scale_re(1.0 / t);
    }
    let den = hs_inner(zp.matrix(), &y)?;
    if !(den.norm() > 0.0) {
        return Err(Error::DegenerateChain("boundary pairing vanishes".into()));
    }
    Ok((hs_inner(zp.matrix(), &x)? / den).re)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPointResult {
    pub m: i64,
    pub n: i64,
    pub f_value: f64,
    /// Contraction estimate of `φ_{n−1} ∘ … ∘ φ_{m+1}`.
    pub c_inner: f64,
    pub bound_8dc: f64,
    pub obs_norms: [f64; 2],
    pub t_m: f64,
    pub t_n: f64,
    pub t_mn: f64,
    /// The search was rerun with four times the restarts.
    pub escalated: bool,
    pub bound_holds: bool,
}

/// Slack allowed on the `8·D·‖𝕆_n‖‖𝕆_m‖·c` bound.
pub const BOUND_SLACK: f64 = 1e-8;

/// Connected two-point function with its contraction bound.
pub fn two_point_function(
    window: &ChainWindow,
    (m, om): (i64, &HermitianObservable),
    (n, on): (i64, &HermitianObservable),
    opts: &ThermoOptions,
    seed: RngSeed,
) -> Result<TwoPointResult> {
    if n - m < 2 {
        return Err(invalid(format!("separation {} is below 2", n - m)));
    }
    let z = left_limit(window, m - 1, opts.max_depth, opts.tol)?.state;
    let zp = right_limit(window, n + 1, opts.max_depth, opts.tol)?.state;
    two_point_between(window, (m, om), (n, on), &z, &zp, opts.search, seed)
}

/// As [`two_point_function`], reading `Z_{m−1}` and `Z'_{n+1}` from a
/// precomputed field.
pub fn two_point_in_field(
    window: &ChainWindow,
    field: &BoundaryField,
    (m, om): (i64, &HermitianObservable),
    (n, on): (i64, &HermitianObservable),
    search: SearchOptions,
    seed: RngSeed,
) -> Result<TwoPointResult> {
    if n - m < 2 {
        return Err(invalid(format!("separation {} is below 2", n - m)));
    }
    two_point_between(window, (m, om), (n, on), field.z(m - 1)?, field.zp(n + 1)?, search, seed)
}

fn two_point_between(
    window: &ChainWindow,
    (m, om): (i64, &HermitianObservable),
    (n, on): (i64, &HermitianObservable),
    z: &DensityState,
    zp: &DensityState,
    search: SearchOptions,
    seed: RngSeed,
) -> Result<TwoPointResult> {
    check_obs(window, om)?;
    check_obs(window, on)?;
    let (phi_n, o_n) = (window.transfer(n)?, observable_liouville(window.tensor(n)?, on)?);
    let (phi_m, o_m) = (window.transfer(m)?, observable_liouville(window.tensor(m)?, om)?);

    // Z'_{m+1} as seen through the same boundary pair.
    let mut w = zp.matrix().clone();
    for k in (m + 1..=n).rev() {
        w = superop_adjoint(&window.transfer(k)?).apply(&w)?;
        w = w.scale_re(1.0 / w.trace().re);
    }
    let a0 = phi_m.apply(z.matrix())?;
    let b0 = o_m.apply(z.matrix())?;
    let den_m = hs_inner(&w, &a0)?;
    if !(den_m.norm() > 0.0) {
        return Err(Error::DegenerateChain("boundary pairing vanishes".into()));
    }
    let t_m = hs_inner(&w, &b0)? / den_m;

    // a: plain chain, b: 𝕆_m inserted, y: deviation of b from t_m·a.
    let mut y = b0.sub(&a0.scale(t_m));
    let (mut a, mut b) = (a0, b0);
    for k in m + 1..n {
        let phi = window.transfer(k)?;
        a = phi.apply(&a)?;
        b = phi.apply(&b)?;
        y = phi.apply(&y)?;
        let t = a.trace().re;
        if !(t > 0.0) {
            return Err(Error::KernelMeetsStates);
        }
        a = a.scale_re(1.0 / t);
        b = b.scale_re(1.0 / t);
        y = y.scale_re(1.0 / t);
    }
    let den = hs_inner(zp.matrix(), &phi_n.apply(&a)?)?;
    if !(den.norm() > 0.0) {
        return Err(Error::DegenerateChain("boundary pairing vanishes".into()));
    }
    let t_n = hs_inner(zp.matrix(), &o_n.apply(&a)?)? / den;
    let t_mn = hs_inner(zp.matrix(), &o_n.apply(&b)?)? / den;
    let f_value = (hs_inner(zp.matrix(), &o_n.apply(&y)?)? / den).norm();

    let norms = [on.norm(), om.norm()];
    let scale = 8.0 * window.bond_dim() as f64 * norms[0] * norms[1];
    let inner = window.block(m + 1, n - 1)?;
    let mut c_inner = contraction_estimate(&inner, search, seed)?.lower;
    let mut escalated = false;
    if f_value > scale * c_inner + BOUND_SLACK {
        escalated = true;
        let again = contraction_estimate(&inner, search.escalated(4), seed.derive("escalated"))?.lower;
        c_inner = c_inner.max(again);
    }
    let bound_8dc = scale * c_inner;
    Ok(TwoPointResult {
        m,
        n,
        f_value,
        c_inner,
        bound_8dc,
        obs_norms: norms,
        t_m: t_m.re,
        t_n: t_n.re,
        t_mn: t_mn.re,
        escalated,
        bound_holds: f_value <= bound_8dc + BOUND_SLACK,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankOneDefect {
    /// Probe maximum of `‖Φ/tr(Φ†(𝕀)) − Ξ‖_{1→1}`; a lower bound on the norm.
    pub defect: f64,
    /// `8·c(φ_n ∘ … ∘ φ_m)` from the search estimate.
    pub bound: f64,
    pub c_inner: f64,
    pub escalated: bool,
}

/// Probe inputs for the 1→1 norm: a pure-state grid of `D²` projectors and
/// random rank-one `uv†` of unit trace norm.
fn one_to_one_probes(d: usize, random: usize, seed: RngSeed) -> Vec<CMatrix> {
    let e = |i: usize| -> Vec<C64> { (0..d).map(|k| if k == i { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) }).collect() };
    let proj = |v: &[C64]| CMatrix::from_fn(d, |r, c| v[r] * v[c].conj());
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut out = Vec::with_capacity(d * d + random);
    for i in 0..d {
        out.push(proj(&e(i)));
        for j in i + 1..d {
            let mut v = e(i);
            v[j] = C64::new(1.0, 0.0);
            out.push(proj(&v.iter().map(|z| z * s).collect::<Vec<_>>()));
            v[j] = C64::new(0.0, 1.0);
            out.push(proj(&v.iter().map(|z| z * s).collect::<Vec<_>>()));
        }
    }
    let mut rng = seed.rng();
    for _ in 0..random {
        let u = haar_vector(&mut rng, d);
        let v = haar_vector(&mut rng, d);
        out.push(CMatrix::from_fn(d, |r, c| u[r] * v[c].conj()));
    }
    out
}

/// Distance of `Φ_{[m,n]}` (trace-normalized from the right) from the
/// rank-one map `X ↦ tr(Z'_m X) Z_n`, against `8·c(Φ_{[m,n]})`.
pub fn rank_one_defect(window: &ChainWindow, m: i64, n: i64, opts: &ThermoOptions, seed: RngSeed) -> Result<RankOneDefect> {
    if n < m {
        return Err(invalid(format!("empty block [{m}, {n}]")));
    }
    let zp_m = right_limit(window, m, opts.max_depth, opts.tol)?.state;
    let z_n = left_limit(window, n, opts.max_depth, opts.tol)?.state;
    let phi = window.block(m, n)?;
    let dd = window.bond_dim();
    let norm = superop_adjoint(&phi).apply(&CMatrix::identity(dd))?.trace().re;
    if !(norm > 0.0) {
        return Err(Error::KernelMeetsStates);
    }
    let mut defect: f64 = 0.0;
    for x in one_to_one_probes(dd, 200, seed.derive("probes")) {
        let lhs = phi.apply(&x)?.scale_re(1.0 / norm);
        let xi = z_n.matrix().scale(hs_inner(zp_m.matrix(), &x)?);
        defect = defect.max(trace_norm(&lhs.sub(&xi)));
    }
    let mut c = contraction_estimate(&phi, opts.search, seed)?.lower;
    let mut escalated = false;
    if defect > 8.0 * c + BOUND_SLACK {
        escalated = true;
        c = c.max(contraction_estimate(&phi, opts.search.escalated(4), seed.derive("escalated"))?.lower);
    }
    Ok(RankOneDefect { defect, bound: 8.0 * c, c_inner: c, escalated })
}

/// Certificate computed by [`gauge_fix`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaugeCertificate {
    /// `max_n ‖φ̃_n†(𝕀) − 𝕀‖_∞`.
    pub trace_preservation: f64,
    /// `‖Z̃_k − Z_k(gauged chain)‖₁` at the middle site.
    pub z_tilde_residual: f64,
    /// `‖Z̃'_k(gauged chain) − 𝕀/D‖₁` at the middle site.
    pub zp_tilde_residual: f64,
}

#[derive(Clone, Debug)]
pub struct GaugedChain {
    pub original: ChainWindow,
    /// Gauged tensors on sites `first_site ..= first_site + len − 1`.
    pub gauged_tensors: Vec<LocalTensor>,
    pub first_site: i64,
    /// `tr φ_n†(Z'_{n+1})` per gauged site.
    pub normalizers: Vec<f64>,
    pub boundary: Vec<BoundaryStates>,
    pub certificate: GaugeCertificate,
}

impl GaugedChain {
    pub fn window(&self) -> ChainWindow {
        ChainWindow {
            first_site: self.first_site,
            tensors: self.gauged_tensors.clone(),
            hidden_path: None,
            seed: self.original.seed,
        }
    }

    pub fn last_site(&self) -> i64 {
        self.first_site + self.gauged_tensors.len() as i64 - 1
    }

    /// `‖φ̃_n†(𝕀) − 𝕀‖_∞` per gauged site.
    pub fn trace_preservation_residuals(&self) -> Result<Vec<f64>> {
        let dd = self.original.bond_dim();
        let id = CMatrix::identity(dd);
        self.gauged_tensors
            .iter()
            .map(|t| Ok(superop_adjoint(&liouville_of_tensor(t)).apply(&id)?.sub(&id).op_norm()))
            .collect()
    }

    /// `Z̃_k = √Z'_{k+1} Z_k √Z'_{k+1} / tr(Z'_{k+1} Z_k)`.
    pub fn z_tilde(&self, site: i64) -> Result<DensityState> {
        let i = (site - self.boundary[0].site) as usize;
        if site < self.first_site || site >= self.last_site() {
            return Err(invalid(format!("site {site} has no successor in the gauged range")));
        }
        let z = self.boundary[i].z.matrix();
        let r = psd_sqrt(self.boundary[i + 1].zp.matrix());
        DensityState::from_psd(&r.mul(z).mul(&r))
    }
}

/// Rewrites the chain with `B_i = √Z'_{n+1} A_i (Z'_n)^{−1/2} / √tr φ_n†(Z'_{n+1})`
/// on sites `lo ..= hi − 1` of the field, and checks the result.
pub fn gauge_fix(window: &ChainWindow, field: &BoundaryField, tol: f64) -> Result<GaugedChain> {
    let (lo, hi) = (field.lo(), field.hi());
    if hi - lo < 2 {
        return Err(invalid("boundary field must span at least three sites"));
    }
    for k in lo..=hi {
        let eta = field.zp(k)?.eta();
        if eta < RANK_TOL {
            return Err(Error::SingularGauge { site: k, eta });
        }
    }
    let mut gauged = Vec::new();
    let mut normalizers = Vec::new();
    for k in lo..hi {
        let t = window.tensor(k)?;
        let zp_next = field.zp(k + 1)?.matrix();
        let norm = superop_adjoint(&window.transfer(k)?).apply(zp_next)?.trace().re;
        let left = psd_sqrt(zp_next).scale_re(1.0 / norm.sqrt());
        let right = pd_inv_sqrt(field.zp(k)?.matrix());
        gauged.push(LocalTensor::new(t.kraus().iter().map(|a| left.mul(a).mul(&right)).collect())?);
        normalizers.push(norm);
    }
    let boundary = (lo..=hi).map(|k| field.at(k)).collect::<Result<Vec<_>>>()?;
    let mut chain = GaugedChain {
        original: window.clone(),
        gauged_tensors: gauged,
        first_site: lo,
        normalizers,
        boundary,
        certificate: GaugeCertificate { trace_preservation: 0.0, z_tilde_residual: 0.0, zp_tilde_residual: 0.0 },
    };
    let tp = chain.trace_preservation_residuals()?.into_iter().fold(0.0, f64::max);
    let mid = lo + (hi - lo) / 2;
    let gw = chain.window();
    let depth = (hi - lo) as usize;
    let zl = left_limit(&gw, mid, depth, tol)?.state;
    let zr = right_limit(&gw, mid, depth, tol)?.state;
    let ztilde = chain.z_tilde(mid)?;
    chain.certificate = GaugeCertificate {
        trace_preservation: tp,
        z_tilde_residual: trace_norm(&ztilde.matrix().sub(zl.matrix())),
        zp_tilde_residual: trace_norm(&zr.matrix().sub(DensityState::maximally_mixed(window.bond_dim()).matrix())),
    };
    Ok(chain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::{sample_window, EnsembleSpec};

    fn z2() -> HermitianObservable {
        HermitianObservable::staggered(2)
    }

    #[test]
    fn identity_observables_give_one() {
        let w = sample_window(&EnsembleSpec::gaussian_iid(2, 2), -6, 13, RngSeed::new(3)).unwrap();
        let id = HermitianObservable::identity(2);
        let v = finite_expectation(&w, &[(0, id.clone()), (2, id.clone())], 5).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        let two = HermitianObservable::diag(&[2.0, 2.0]);
        assert!((finite_expectation(&w, &[(1, two)], 5).unwrap() - 2.0).abs() < 1e-12);
        assert!(finite_expectation(&w, &[(5, id)], 5).is_err());
    }

    #[test]
    fn depolarizing_boundary_is_maximally_mixed() {
        let w = ChainWindow::constant(&LocalTensor::depolarizing(2), -5, 11).unwrap();
        let b = boundary_states(&w, 0, 5, 1e-12).unwrap();
        assert_eq!(b.depth_used, 1);
        assert!(b.residual < 1e-15);
        let mm = DensityState::maximally_mixed(2);
        assert!(b.z.matrix().sub(mm.matrix()).frobenius() < 1e-14);
        assert!(b.zp.matrix().sub(mm.matrix()).frobenius() < 1e-14);
    }

    #[test]
    fn unitary_chain_does_not_converge() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let u = CMatrix::from_real_rows(&[vec![h, h], vec![h, -h]]).unwrap();
        let w = ChainWindow::constant(&LocalTensor::unitary(&u, 2).unwrap(), -10, 21).unwrap();
        // I/D is fixed by every unital map, so this case converges trivially.
        assert!(boundary_states(&w, 0, 10, 1e-10).is_ok());
        let t = LocalTensor::new(vec![CMatrix::diag(&[1.0, 0.5])]).unwrap();
        let w = ChainWindow::constant(&t, -3, 7).unwrap();
        assert!(matches!(boundary_states(&w, 0, 4, 1e-14), Err(Error::NoConvergence { .. })));
    }

    #[test]
    fn depolarizing_two_point_vanishes() {
        let w = ChainWindow::constant(&LocalTensor::depolarizing(2), -20, 41).unwrap();
        let o = HermitianObservable::staggered(4);
        let r = two_point_function(&w, (0, &o), (3, &o), &ThermoOptions::default(), RngSeed::new(1)).unwrap();
        assert!(r.f_value < 1e-10);
        assert!(r.c_inner < 1e-12);
        assert!(r.bound_holds);
    }

    #[test]
    fn identity_two_point_vanishes() {
        let w = sample_window(&EnsembleSpec::gaussian_ti(2, 2), -400, 801, RngSeed::new(5)).unwrap();
        let id = HermitianObservable::identity(2);
        let r = two_point_function(&w, (0, &id), (4, &id), &ThermoOptions::default(), RngSeed::new(1)).unwrap();
        assert!(r.f_value < 1e-10);
        assert!(two_point_function(&w, (0, &id), (1, &id), &ThermoOptions::default(), RngSeed::new(1)).is_err());
    }

    #[test]
    fn thermo_matches_two_point_parts() {
        let w = sample_window(&EnsembleSpec::gaussian_ti(2, 2), -400, 801, RngSeed::new(8)).unwrap();
        let opts = ThermoOptions::default();
        let r = two_point_function(&w, (0, &z2()), (3, &z2()), &opts, RngSeed::new(1)).unwrap();
        let t0 = thermo_expectation(&w, &[(0, z2())], &opts).unwrap();
        let t3 = thermo_expectation(&w, &[(3, z2())], &opts).unwrap();
        let t03 = thermo_expectation(&w, &[(0, z2()), (3, z2())], &opts).unwrap();
        assert!((r.t_m - t0).abs() < 1e-8 && (r.t_n - t3).abs() < 1e-8 && (r.t_mn - t03).abs() < 1e-8);
        assert!((r.f_value - (t03 - t0 * t3).abs()).abs() < 1e-8);
        assert!(r.bound_holds);
    }

    #[test]
    fn depolarizing_rank_one_defect_is_zero() {
        let w = ChainWindow::constant(&LocalTensor::depolarizing(2), -10, 21).unwrap();
        let r = rank_one_defect(&w, -1, 1, &ThermoOptions::default(), RngSeed::new(0)).unwrap();
        assert!(r.defect < 1e-14 && r.bound < 1e-12);
    }

    #[test]
    fn gauge_fix_of_channel_is_identity() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let u = CMatrix::from_real_rows(&[vec![h, h], vec![h, -h]]).unwrap();
        let unitary = LocalTensor::unitary(&u, 1).unwrap();
        let dep = LocalTensor::depolarizing(2);
        let pad = |t: &LocalTensor| {
            let mut k = t.kraus().to_vec();
            k.resize(4, CMatrix::zeros(2));
            LocalTensor::new(k).unwrap()
        };
        let tensors: Vec<_> = (0..30).map(|i| if i % 3 == 0 { dep.clone() } else { pad(&unitary) }).collect();
        let w = ChainWindow::from_tensors(-15, tensors).unwrap();
        let field = BoundaryField::compute(&w, -5, 5, 10, 1e-12).unwrap();
        let g = gauge_fix(&w, &field, 1e-12).unwrap();
        for (k, t) in (g.first_site..).zip(&g.gauged_tensors) {
            let orig = w.tensor(k).unwrap();
            for (a, b) in t.kraus().iter().zip(orig.kraus()) {
                assert!(a.sub(b).max_abs() < 1e-10);
            }
        }
        assert!(g.certificate.trace_preservation < 1e-12);
    }
}
