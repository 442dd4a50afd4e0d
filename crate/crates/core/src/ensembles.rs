//! Strictly stationary tensor processes and the statistics of their entry
//! time to strict positivity.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contraction::{contraction_estimate, SearchOptions};
use crate::error::{invalid, Error, Result};
use crate::linalg::{CMatrix, RANK_TOL};
use crate::rng::{complex_normal, RngSeed};
use crate::states::LocalTensor;
use crate::superop::{choi_full_rank, liouville_of_tensor, superop_compose, Superoperator};

/// A validation failure located by a JSON pointer into the spec document.
#[derive(Clone, Debug, PartialEq)]
pub struct SpecViolation {
    pub pointer: String,
    pub message: String,
}

impl std::fmt::Display for SpecViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.pointer, self.message)
    }
}

impl From<SpecViolation> for Error {
    fn from(v: SpecViolation) -> Error {
        Error::InvalidInput(v.to_string())
    }
}

fn violation(pointer: impl Into<String>, message: impl Into<String>) -> SpecViolation {
    SpecViolation { pointer: pointer.into(), message: message.into() }
}

/// One-site law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Marginal {
    /// Independent N(0, σ²) real and imaginary parts; σ defaults to 1/√D.
    Gaussian {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma: Option<f64>,
    },
    /// A fixed tensor.
    Explicit { tensor: LocalTensor },
    /// A categorical draw from a finite list.
    Pool { tensors: Vec<LocalTensor>, probabilities: Vec<f64> },
}

/// Declared bound on the maximal-correlation profile ρ_q of a
/// Markov-modulated ensemble. Never estimated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MixingProfile {
    /// ρ_q = rho[q-1]; the last entry is reused past the end.
    Table { rho: Vec<f64> },
    /// ρ_q = min(1, factor · β_q^exponent) with β_q the exact modulator β.
    FromBeta { factor: f64, exponent: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnsembleKind {
    Ti {
        marginal: Marginal,
    },
    Iid {
        marginal: Marginal,
    },
    FinitePool {
        tensors: Vec<LocalTensor>,
        probabilities: Vec<f64>,
    },
    MarkovModulated {
        transition: Vec<Vec<f64>>,
        stationary: Vec<f64>,
        branches: Vec<Marginal>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mixing_profile: Option<MixingProfile>,
    },
}

impl EnsembleKind {
    pub fn name(&self) -> &'static str {
        match self {
            EnsembleKind::Ti { .. } => "TI",
            EnsembleKind::Iid { .. } => "IID",
            EnsembleKind::FinitePool { .. } => "FinitePool",
            EnsembleKind::MarkovModulated { .. } => "MarkovModulated",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub phys_dim: usize,
    pub bond_dim: usize,
    pub ensemble: EnsembleKind,
}

impl EnsembleSpec {
    pub fn gaussian_ti(phys_dim: usize, bond_dim: usize) -> Self {
        EnsembleSpec { phys_dim, bond_dim, ensemble: EnsembleKind::Ti { marginal: Marginal::Gaussian { sigma: None } } }
    }

    pub fn gaussian_iid(phys_dim: usize, bond_dim: usize) -> Self {
        EnsembleSpec { phys_dim, bond_dim, ensemble: EnsembleKind::Iid { marginal: Marginal::Gaussian { sigma: None } } }
    }

    /// TI chain of one fixed tensor.
    pub fn explicit_ti(tensor: LocalTensor) -> Self {
        EnsembleSpec {
            phys_dim: tensor.phys_dim(),
            bond_dim: tensor.bond_dim(),
            ensemble: EnsembleKind::Ti { marginal: Marginal::Explicit { tensor } },
        }
    }

    pub fn depolarizing_ti(bond_dim: usize) -> Self {
        Self::explicit_ti(LocalTensor::depolarizing(bond_dim))
    }

    /// TI chain of a unitary spread over `phys_dim` Kraus copies.
    pub fn unitary_ti(u: &CMatrix, phys_dim: usize) -> Result<Self> {
        Ok(Self::explicit_ti(LocalTensor::unitary(u, phys_dim)?))
    }

    /// Two-state modulator with stay probability `stay` whose branches are
    /// two fixed tensors. Returns the spec together with the matching TI and
    /// IID specs over the same two tensors, which share its one-site law.
    pub fn sticky_markov_family(tensors: [LocalTensor; 2], stay: f64) -> [EnsembleSpec; 3] {
        let (d, dd) = (tensors[0].phys_dim(), tensors[0].bond_dim());
        let pool = Marginal::Pool { tensors: tensors.to_vec(), probabilities: vec![0.5, 0.5] };
        let markov = EnsembleSpec {
            phys_dim: d,
            bond_dim: dd,
            ensemble: EnsembleKind::MarkovModulated {
                transition: vec![vec![stay, 1.0 - stay], vec![1.0 - stay, stay]],
                stationary: vec![0.5, 0.5],
                branches: tensors.iter().map(|t| Marginal::Explicit { tensor: t.clone() }).collect(),
                mixing_profile: None,
            },
        };
        let ti = EnsembleSpec { phys_dim: d, bond_dim: dd, ensemble: EnsembleKind::Ti { marginal: pool.clone() } };
        let iid = EnsembleSpec { phys_dim: d, bond_dim: dd, ensemble: EnsembleKind::Iid { marginal: pool } };
        [markov, ti, iid]
    }

    /// Replaces the mixing profile of a Markov-modulated spec.
    pub fn with_mixing_profile(mut self, profile: MixingProfile) -> Result<Self> {
        match &mut self.ensemble {
            EnsembleKind::MarkovModulated { mixing_profile, .. } => {
                *mixing_profile = Some(profile);
                Ok(self)
            }
            other => Err(invalid(format!("{} ensembles take no mixing profile", other.name()))),
        }
    }

    /// Fills σ = 1/√D wherever a Gaussian marginal leaves it unset.
    pub fn materialize_defaults(&mut self) {
        let sigma = 1.0 / (self.bond_dim as f64).sqrt();
        let fill = |m: &mut Marginal| {
            if let Marginal::Gaussian { sigma: s @ None } = m {
                *s = Some(sigma);
            }
        };
        match &mut self.ensemble {
            EnsembleKind::Ti { marginal } | EnsembleKind::Iid { marginal } => fill(marginal),
            EnsembleKind::FinitePool { .. } => {}
            EnsembleKind::MarkovModulated { branches, .. } => branches.iter_mut().for_each(fill),
        }
    }

    /// Checks dimensions, probability vectors and the modulator chain.
    pub fn validate(&self) -> std::result::Result<(), SpecViolation> {
        if self.phys_dim == 0 {
            return Err(violation("/phys_dim", "must be at least 1"));
        }
        if self.bond_dim == 0 {
            return Err(violation("/bond_dim", "must be at least 1"));
        }
        if self.bond_dim > 16 {
            return Err(violation("/bond_dim", "supported range is D <= 16"));
        }
        match &self.ensemble {
            EnsembleKind::Ti { marginal } | EnsembleKind::Iid { marginal } => {
                self.check_marginal(marginal, "/ensemble/marginal")
            }
            EnsembleKind::FinitePool { tensors, probabilities } => {
                self.check_pool(tensors, probabilities, "/ensemble")
            }
            EnsembleKind::MarkovModulated { transition, stationary, branches, mixing_profile } => {
                check_markov(transition, stationary).map_err(|v| SpecViolation {
                    pointer: format!("/ensemble{}", v.pointer),
                    message: v.message,
                })?;
                if branches.len() != transition.len() {
                    return Err(violation(
                        "/ensemble/branches",
                        format!("{} branches for {} modulator states", branches.len(), transition.len()),
                    ));
                }
                for (i, b) in branches.iter().enumerate() {
                    self.check_marginal(b, &format!("/ensemble/branches/{i}"))?;
                }
                match mixing_profile {
                    Some(MixingProfile::Table { rho }) => {
                        if rho.is_empty() {
                            return Err(violation("/ensemble/mixing_profile/rho", "must be nonempty"));
                        }
                        if let Some(i) = rho.iter().position(|r| !(0.0..=1.0).contains(r)) {
                            return Err(violation(format!("/ensemble/mixing_profile/rho/{i}"), "must lie in [0,1]"));
                        }
                    }
                    Some(MixingProfile::FromBeta { factor, exponent }) => {
                        if !(*factor > 0.0) || !factor.is_finite() {
                            return Err(violation("/ensemble/mixing_profile/factor", "must be positive"));
                        }
                        if !(*exponent > 0.0) || !exponent.is_finite() {
                            return Err(violation("/ensemble/mixing_profile/exponent", "must be positive"));
                        }
                    }
                    None => {}
                }
                Ok(())
            }
        }
    }

    fn check_tensor(&self, t: &LocalTensor, ptr: &str) -> std::result::Result<(), SpecViolation> {
        if t.phys_dim() != self.phys_dim || t.bond_dim() != self.bond_dim {
            return Err(violation(
                ptr,
                format!(
                    "tensor has (d, D) = ({}, {}), spec says ({}, {})",
                    t.phys_dim(),
                    t.bond_dim(),
                    self.phys_dim,
                    self.bond_dim
                ),
            ));
        }
        Ok(())
    }

    fn check_marginal(&self, m: &Marginal, ptr: &str) -> std::result::Result<(), SpecViolation> {
        match m {
            Marginal::Gaussian { sigma } => match sigma {
                Some(s) if !(*s > 0.0) || !s.is_finite() => {
                    Err(violation(format!("{ptr}/sigma"), format!("must be positive, got {s}")))
                }
                _ => Ok(()),
            },
            Marginal::Explicit { tensor } => self.check_tensor(tensor, &format!("{ptr}/tensor")),
            Marginal::Pool { tensors, probabilities } => self.check_pool(tensors, probabilities, ptr),
        }
    }

    fn check_pool(&self, tensors: &[LocalTensor], probs: &[f64], ptr: &str) -> std::result::Result<(), SpecViolation> {
        if tensors.is_empty() {
            return Err(violation(format!("{ptr}/tensors"), "pool is empty"));
        }
        if probs.len() != tensors.len() {
            return Err(violation(
                format!("{ptr}/probabilities"),
                format!("{} probabilities for {} tensors", probs.len(), tensors.len()),
            ));
        }
        check_probability_vector(probs).map_err(|m| violation(format!("{ptr}/probabilities"), m))?;
        for (i, t) in tensors.iter().enumerate() {
            self.check_tensor(t, &format!("{ptr}/tensors/{i}"))?;
        }
        Ok(())
    }

    fn sigma(&self, s: Option<f64>) -> f64 {
        s.unwrap_or(1.0 / (self.bond_dim as f64).sqrt())
    }

    fn draw<R: Rng + ?Sized>(&self, m: &Marginal, rng: &mut R) -> Result<LocalTensor> {
        match m {
            Marginal::Gaussian { sigma } => gaussian_local_tensor(self.phys_dim, self.bond_dim, self.sigma(*sigma), rng),
            Marginal::Explicit { tensor } => Ok(tensor.clone()),
            Marginal::Pool { tensors, probabilities } => Ok(tensors[categorical(rng, probabilities)].clone()),
        }
    }

    /// Declared ρ_q: 0 for IID and finite pools, 1 for TI, the declared
    /// profile for Markov modulation.
    pub fn rho_profile(&self, q: usize) -> Result<f64> {
        match &self.ensemble {
            EnsembleKind::Iid { .. } | EnsembleKind::FinitePool { .. } => Ok(0.0),
            EnsembleKind::Ti { .. } => Ok(1.0),
            EnsembleKind::MarkovModulated { transition, stationary, mixing_profile, .. } => {
                match mixing_profile {
                    None => Err(Error::MissingProfile),
                    Some(MixingProfile::Table { rho }) => {
                        Ok(rho[q.saturating_sub(1).min(rho.len() - 1)])
                    }
                    Some(MixingProfile::FromBeta { factor, exponent }) => {
                        let beta = markov_beta_exact(transition, stationary, q.max(1))?;
                        Ok((factor * beta.powf(*exponent)).min(1.0))
                    }
                }
            }
        }
    }
}

fn check_probability_vector(p: &[f64]) -> std::result::Result<(), String> {
    if let Some(i) = p.iter().position(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(format!("entry {i} is negative or non-finite"));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(format!("sums to {s}, not 1"));
    }
    Ok(())
}

/// Checks a modulator chain: square row-stochastic `P`, stationary `π`, and
/// primitivity (some power `P^k`, `k ≤ m²`, strictly positive).
pub fn check_markov(p: &[Vec<f64>], pi: &[f64]) -> std::result::Result<(), SpecViolation> {
    let m = p.len();
    if m == 0 {
        return Err(violation("/transition", "needs at least one state"));
    }
    for (i, row) in p.iter().enumerate() {
        if row.len() != m {
            return Err(violation(format!("/transition/{i}"), format!("row has {} entries, expected {m}", row.len())));
        }
        check_probability_vector(row).map_err(|msg| violation(format!("/transition/{i}"), format!("row {i} {msg}")))?;
    }
    if pi.len() != m {
        return Err(violation("/stationary", format!("{} entries for {m} states", pi.len())));
    }
    check_probability_vector(pi).map_err(|msg| violation("/stationary", msg))?;
    for j in 0..m {
        let pj: f64 = (0..m).map(|i| pi[i] * p[i][j]).sum();
        if (pj - pi[j]).abs() > 1e-10 {
            return Err(violation(format!("/stationary/{j}"), format!("(πP)_{j} = {pj} differs from π_{j} = {}", pi[j])));
        }
    }
    if !is_primitive(p) {
        return Err(violation("/transition", "chain is not irreducible and aperiodic"));
    }
    Ok(())
}

fn is_primitive(p: &[Vec<f64>]) -> bool {
    let m = p.len();
    let pattern: Vec<Vec<bool>> = p.iter().map(|r| r.iter().map(|&x| x > 0.0).collect()).collect();
    let mut pow = pattern.clone();
    for _ in 0..m * m {
        if pow.iter().all(|r| r.iter().all(|&b| b)) {
            return true;
        }
        pow = (0..m).map(|i| (0..m).map(|j| (0..m).any(|k| pow[i][k] && pattern[k][j])).collect()).collect();
    }
    false
}

fn categorical<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// A tensor with i.i.d. N(0, σ²) real and imaginary parts in every entry.
pub fn gaussian_local_tensor<R: Rng + ?Sized>(
    phys_dim: usize,
    bond_dim: usize,
    sigma: f64,
    rng: &mut R,
) -> Result<LocalTensor> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(invalid(format!("sigma must be positive, got {sigma}")));
    }
    let kraus = (0..phys_dim).map(|_| CMatrix::from_fn(bond_dim, |_, _| complex_normal(rng, sigma))).collect();
    LocalTensor::new(kraus)
}

/// A contiguous stretch of one realization of the tensor process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainWindow {
    pub first_site: i64,
    pub tensors: Vec<LocalTensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_path: Option<Vec<usize>>,
    pub seed: RngSeed,
}

impl ChainWindow {
    /// A window over given tensors; all must share (d, D).
    pub fn from_tensors(first_site: i64, tensors: Vec<LocalTensor>) -> Result<Self> {
        let first = tensors.first().ok_or_else(|| invalid("window needs at least one tensor"))?;
        let shape = (first.phys_dim(), first.bond_dim());
        if tensors.iter().any(|t| (t.phys_dim(), t.bond_dim()) != shape) {
            return Err(invalid("window tensors disagree in (d, D)"));
        }
        Ok(ChainWindow { first_site, tensors, hidden_path: None, seed: RngSeed::new(0) })
    }

    /// `len` copies of one tensor starting at `first_site`.
    pub fn constant(tensor: &LocalTensor, first_site: i64, len: usize) -> Result<Self> {
        Self::from_tensors(first_site, vec![tensor.clone(); len])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn last_site(&self) -> i64 {
        self.first_site + self.tensors.len() as i64 - 1
    }

    pub fn bond_dim(&self) -> usize {
        self.tensors[0].bond_dim()
    }

    pub fn phys_dim(&self) -> usize {
        self.tensors[0].phys_dim()
    }

    pub fn contains(&self, site: i64) -> bool {
        site >= self.first_site && site <= self.last_site()
    }

    pub fn tensor(&self, site: i64) -> Result<&LocalTensor> {
        if !self.contains(site) {
            return Err(invalid(format!("site {site} outside window [{}, {}]", self.first_site, self.last_site())));
        }
        Ok(&self.tensors[(site - self.first_site) as usize])
    }

    /// Transfer map φ at `site`.
    pub fn transfer(&self, site: i64) -> Result<Superoperator> {
        Ok(liouville_of_tensor(self.tensor(site)?))
    }

    /// `φ_hi ∘ … ∘ φ_lo`, rescaled to unit Frobenius norm.
    pub fn block(&self, lo: i64, hi: i64) -> Result<Superoperator> {
        if hi < lo {
            return Err(invalid(format!("empty block [{lo}, {hi}]")));
        }
        let mut acc = self.transfer(lo)?.normalized().0;
        for k in lo + 1..=hi {
            acc = superop_compose(&self.transfer(k)?, &acc)?.normalized().0;
        }
        Ok(acc)
    }
}

/// Draws `length` consecutive sites starting at `first_site`.
pub fn sample_window(spec: &EnsembleSpec, first_site: i64, length: usize, seed: RngSeed) -> Result<ChainWindow> {
    if length == 0 {
        return Err(invalid("window length must be at least 1"));
    }
    spec.validate()?;
    let mut rng = seed.rng();
    let mut hidden = None;
    let tensors = match &spec.ensemble {
        EnsembleKind::Ti { marginal } => vec![spec.draw(marginal, &mut rng)?; length],
        EnsembleKind::Iid { marginal } => {
            (0..length).map(|_| spec.draw(marginal, &mut rng)).collect::<Result<Vec<_>>>()?
        }
        EnsembleKind::FinitePool { tensors, probabilities } => {
            (0..length).map(|_| tensors[categorical(&mut rng, probabilities)].clone()).collect()
        }
        EnsembleKind::MarkovModulated { transition, stationary, branches, .. } => {
            let mut path = Vec::with_capacity(length);
            let mut x = categorical(&mut rng, stationary);
            let mut out = Vec::with_capacity(length);
            for i in 0..length {
                if i > 0 {
                    x = categorical(&mut rng, &transition[x]);
                }
                path.push(x);
                out.push(spec.draw(&branches[x], &mut rng)?);
            }
            hidden = Some(path);
            out
        }
    };
    Ok(ChainWindow { first_site, tensors, hidden_path: hidden, seed })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryTime {
    At(usize),
    ExceedsCap,
}

impl EntryTime {
    pub fn value(self) -> Option<usize> {
        match self {
            EntryTime::At(n) => Some(n),
            EntryTime::ExceedsCap => None,
        }
    }
}

/// Default τ cap `8⌈log_d D⌉` (at least 1).
pub fn default_tau_cap(phys_dim: usize, bond_dim: usize) -> usize {
    8 * wielandt_half(phys_dim, bond_dim).max(1)
}

/// `⌈log_d D⌉`, computed exactly on integers.
pub fn wielandt_half(phys_dim: usize, bond_dim: usize) -> usize {
    if phys_dim < 2 {
        return usize::MAX;
    }
    let mut k = 0;
    let mut p: usize = 1;
    while p < bond_dim {
        p = p.saturating_mul(phys_dim);
        k += 1;
    }
    k
}

/// Entry time together with the certified product at that time.
fn entry_with_product(window: &ChainWindow, cap: usize, tol: f64) -> Result<(EntryTime, Option<Superoperator>)> {
    if window.len() < cap {
        return Err(invalid(format!("window of length {} shorter than cap {cap}", window.len())));
    }
    let mut acc: Option<Superoperator> = None;
    for n in 1..=cap {
        let phi = liouville_of_tensor(&window.tensors[n - 1]);
        let next = match &acc {
            None => phi,
            Some(a) => superop_compose(&phi, a)?,
        };
        let next = next.normalized().0;
        if choi_full_rank(&next, tol) {
            return Ok((EntryTime::At(n), Some(next)));
        }
        acc = Some(next);
    }
    Ok((EntryTime::ExceedsCap, None))
}

/// Smallest `n ≤ cap` with `φ_{n−1} ∘ … ∘ φ_0` certified strictly positive
/// by the Choi-rank test at relative tolerance `tol`.
pub fn entry_time_tau(window: &ChainWindow, cap: usize, tol: f64) -> Result<EntryTime> {
    Ok(entry_with_product(window, cap, tol)?.0)
}

/// A Monte Carlo proportion with its binomial standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl Estimate {
    pub fn proportion(hits: usize, samples: usize) -> Self {
        let p = hits as f64 / samples as f64;
        Estimate { value: p, std_error: (p * (1.0 - p) / samples as f64).sqrt(), samples }
    }
}

/// Per-sample entry time and, when it exists, `c(Φ^{(τ)})`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntryRecord {
    pub tau: EntryTime,
    pub c_at_tau: Option<f64>,
}

/// Entry records for `samples` windows of length `cap` drawn from children
/// of `seed`.
pub fn entry_records(
    spec: &EnsembleSpec,
    cap: usize,
    samples: usize,
    seed: RngSeed,
    search: Option<SearchOptions>,
) -> Result<Vec<EntryRecord>> {
    (0..samples)
        .into_par_iter()
        .map(|i| {
            let s = seed.child(i as u64);
            let w = sample_window(spec, 0, cap, s)?;
            let (tau, prod) = entry_with_product(&w, cap, RANK_TOL)?;
            let c_at_tau = match (search, prod) {
                (Some(opts), Some(p)) => Some(contraction_estimate(&p, opts, s.derive("c"))?.lower),
                _ => None,
            };
            Ok(EntryRecord { tau, c_at_tau })
        })
        .collect()
}

/// Monte Carlo estimate of `f(b) = Pr{τ > b}`.
pub fn tail_estimate_f(spec: &EnsembleSpec, b: usize, samples: usize, seed: RngSeed) -> Result<Estimate> {
    if samples == 0 || b == 0 {
        return Err(invalid("tail estimate needs b >= 1 and samples >= 1"));
    }
    let recs = entry_records(spec, b, samples, seed, None)?;
    Ok(Estimate::proportion(recs.iter().filter(|r| r.tau == EntryTime::ExceedsCap).count(), samples))
}

/// `ζ_b(u)` from precomputed entry records (window length ≥ b).
pub fn zeta_from_records(records: &[EntryRecord], b: usize, u: f64) -> Estimate {
    let hits = records
        .iter()
        .filter(|r| matches!(r.tau, EntryTime::At(t) if t <= b) && r.c_at_tau.is_some_and(|c| c > 1.0 - 1.0 / u))
        .count();
    Estimate::proportion(hits, records.len())
}

/// Monte Carlo estimate of `ζ_b(u) = Σ_{t≤b} Pr(τ = t, c(Φ^{(t)}) > 1 − 1/u)`.
pub fn zeta_estimate(
    spec: &EnsembleSpec,
    b: usize,
    u: u64,
    samples: usize,
    seed: RngSeed,
    search: SearchOptions,
) -> Result<Estimate> {
    if u < 2 {
        return Err(invalid(format!("u must be at least 2, got {u}")));
    }
    if samples == 0 || b == 0 {
        return Err(invalid("zeta estimate needs b >= 1 and samples >= 1"));
    }
    let recs = entry_records(spec, b, samples, seed, Some(search))?;
    Ok(zeta_from_records(&recs, b, u as f64))
}

fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = a.len();
    (0..m).map(|i| (0..m).map(|j| (0..m).map(|k| a[i][k] * b[k][j]).sum()).collect()).collect()
}

/// `P^n` by repeated squaring.
pub fn matrix_power(p: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    let m = p.len();
    let mut result: Vec<Vec<f64>> = (0..m).map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let mut base = p.to_vec();
    let mut e = n;
    while e > 0 {
        if e & 1 == 1 {
            result = mat_mul(&result, &base);
        }
        base = mat_mul(&base, &base);
        e >>= 1;
    }
    result
}

/// Exact β-mixing coefficient between `σ(X_0)` and `σ(X_n)` of a stationary
/// modulator chain: `β_n = Σ_i π_i · ½ Σ_j |P^n_ij − π_j|`.
pub fn markov_beta_exact(p: &[Vec<f64>], pi: &[f64], n: usize) -> Result<f64> {
    check_markov(p, pi)?;
    if n == 0 {
        return Err(invalid("n must be at least 1"));
    }
    let pn = matrix_power(p, n);
    Ok(pi
        .iter()
        .zip(&pn)
        .map(|(&w, row)| w * 0.5 * row.iter().zip(pi).map(|(x, y)| (x - y).abs()).sum::<f64>())
        .sum())
}

/// Stationary vector of a primitive stochastic matrix by power iteration.
pub fn stationary_distribution(p: &[Vec<f64>]) -> Result<Vec<f64>> {
    let m = p.len();
    if m == 0 || p.iter().any(|r| r.len() != m) || !is_primitive(p) {
        return Err(invalid("transition matrix must be square and primitive"));
    }
    let mut v = vec![1.0 / m as f64; m];
    for _ in 0..100_000 {
        let next: Vec<f64> = (0..m).map(|j| (0..m).map(|i| v[i] * p[i][j]).sum()).collect();
        let diff: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        v = next;
        if diff < 1e-16 {
            break;
        }
    }
    let s: f64 = v.iter().sum();
    Ok(v.into_iter().map(|x| x / s).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state(p: f64) -> Vec<Vec<f64>> {
        vec![vec![p, 1.0 - p], vec![1.0 - p, p]]
    }

    #[test]
    fn ti_windows_repeat_one_tensor() {
        let w = sample_window(&EnsembleSpec::gaussian_ti(2, 2), 3, 5, RngSeed::new(1)).unwrap();
        assert!(w.tensors.iter().all(|t| t == &w.tensors[0]));
        assert_eq!(w.last_site(), 7);
    }

    #[test]
    fn single_pool_is_deterministic() {
        let t = LocalTensor::depolarizing(2);
        let spec = EnsembleSpec {
            phys_dim: 4,
            bond_dim: 2,
            ensemble: EnsembleKind::FinitePool { tensors: vec![t.clone()], probabilities: vec![1.0] },
        };
        let w = sample_window(&spec, 0, 6, RngSeed::new(2)).unwrap();
        assert!(w.tensors.iter().all(|x| x == &t));
    }

    #[test]
    fn gaussian_tensor_checks_sigma_and_is_seeded() {
        let mut r = RngSeed::new(3).rng();
        assert!(gaussian_local_tensor(2, 2, 0.0, &mut r).is_err());
        let a = gaussian_local_tensor(2, 3, 0.5, &mut RngSeed::new(4).rng()).unwrap();
        let b = gaussian_local_tensor(2, 3, 0.5, &mut RngSeed::new(4).rng()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tau_examples() {
        let dep = ChainWindow::constant(&LocalTensor::depolarizing(2), 0, 4).unwrap();
        assert_eq!(entry_time_tau(&dep, 4, RANK_TOL).unwrap(), EntryTime::At(1));
        let h = 1.0 / 2f64.sqrt();
        let u = CMatrix::from_real_rows(&[vec![h, h], vec![h, -h]]).unwrap();
        let uni = ChainWindow::constant(&LocalTensor::unitary(&u, 2).unwrap(), 0, 16).unwrap();
        assert_eq!(entry_time_tau(&uni, 16, RANK_TOL).unwrap(), EntryTime::ExceedsCap);
        assert!(entry_time_tau(&uni, 17, RANK_TOL).is_err());
    }

    #[test]
    fn tail_examples() {
        let dep = EnsembleSpec::depolarizing_ti(2);
        assert_eq!(tail_estimate_f(&dep, 1, 20, RngSeed::new(0)).unwrap().value, 0.0);
        let h = 1.0 / 2f64.sqrt();
        let u = CMatrix::from_real_rows(&[vec![h, h], vec![h, -h]]).unwrap();
        let uni = EnsembleSpec::unitary_ti(&u, 2).unwrap();
        assert_eq!(tail_estimate_f(&uni, 5, 20, RngSeed::new(0)).unwrap().value, 1.0);
    }

    #[test]
    fn zeta_examples() {
        let opts = SearchOptions { restarts: 4, iters: 50 };
        let dep = EnsembleSpec::depolarizing_ti(2);
        assert_eq!(zeta_estimate(&dep, 3, 2, 10, RngSeed::new(0), opts).unwrap().value, 0.0);
        let h = 1.0 / 2f64.sqrt();
        let u = CMatrix::from_real_rows(&[vec![h, h], vec![h, -h]]).unwrap();
        let uni = EnsembleSpec::unitary_ti(&u, 2).unwrap();
        assert_eq!(zeta_estimate(&uni, 3, 2, 10, RngSeed::new(0), opts).unwrap().value, 0.0);
        assert!(zeta_estimate(&dep, 3, 1, 10, RngSeed::new(0), opts).is_err());
    }

    #[test]
    fn beta_examples() {
        let pi = vec![0.5, 0.5];
        assert_eq!(markov_beta_exact(&two_state(0.5), &pi, 3).unwrap(), 0.0);
        for p in [0.6, 0.75, 0.9] {
            for n in 1..8 {
                let want = (2.0 * p - 1.0f64).abs().powi(n as i32) / 2.0;
                assert!((markov_beta_exact(&two_state(p), &pi, n).unwrap() - want).abs() < 1e-14);
            }
        }
        // period two
        assert!(markov_beta_exact(&two_state(0.0), &pi, 1).is_err());
    }

    #[test]
    fn markov_validation_names_the_row() {
        let bad = vec![vec![0.5, 0.4], vec![0.5, 0.5]];
        let err = check_markov(&bad, &[0.5, 0.5]).unwrap_err();
        assert_eq!(err.pointer, "/transition/0");
        let spec = EnsembleSpec {
            phys_dim: 2,
            bond_dim: 2,
            ensemble: EnsembleKind::MarkovModulated {
                transition: two_state(0.9),
                stationary: vec![0.4, 0.6],
                branches: vec![Marginal::Gaussian { sigma: None }; 2],
                mixing_profile: None,
            },
        };
        assert_eq!(spec.validate().unwrap_err().pointer, "/ensemble/stationary/0");
    }

    #[test]
    fn stationary_of_three_state_chain() {
        let p = vec![vec![0.5, 0.3, 0.2], vec![0.1, 0.6, 0.3], vec![0.3, 0.3, 0.4]];
        let pi = stationary_distribution(&p).unwrap();
        assert!(check_markov(&p, &pi).is_ok());
    }

    #[test]
    fn spec_json_round_trip_and_strictness() {
        let spec = EnsembleSpec::gaussian_iid(2, 3);
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(json, r#"{"phys_dim":2,"bond_dim":3,"ensemble":{"kind":"iid","marginal":{"type":"gaussian"}}}"#);
        assert_eq!(serde_json::from_str::<EnsembleSpec>(&json).unwrap(), spec);
        let extra = r#"{"phys_dim":2,"bond_dim":3,"ensemble":{"kind":"iid","marginal":{"type":"gaussian","mu":1}}}"#;
        assert!(serde_json::from_str::<EnsembleSpec>(extra).is_err());
    }

    #[test]
    fn wielandt_lengths() {
        assert_eq!(wielandt_half(2, 2), 1);
        assert_eq!(wielandt_half(2, 3), 2);
        assert_eq!(wielandt_half(2, 4), 2);
        assert_eq!(wielandt_half(3, 2), 1);
        assert_eq!(default_tau_cap(2, 3), 16);
    }
}
