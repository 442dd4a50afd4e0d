//! Monte Carlo experiments on the decay of correlations.
//!
//! Every experiment draws sample `i` from `seed.child(i)` (or a labelled
//! child of it), fans samples out with rayon, and reduces in index order, so
//! results depend on `(spec, seed)` only.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::contraction::{contraction_estimate, SearchOptions};
use crate::ensembles::{
    entry_records, gaussian_local_tensor, markov_beta_exact, sample_window, wielandt_half, zeta_from_records,
    ChainWindow, EnsembleKind, EnsembleSpec, EntryTime,
};
use crate::error::{invalid, Error, Result};
use crate::linalg::RANK_TOL;
use crate::rng::RngSeed;
use crate::states::HermitianObservable;
use crate::stats::{binomial_se, bootstrap_log_slope_ci, haldane, linear_fit, mean_std, quantile, std_error, LinearFit};
use crate::superop::{choi_full_rank, liouville_of_tensor, superop_compose, Superoperator};
use crate::thermo::{two_point_function, ThermoOptions};

/// Floor recorded for `c` values that underflow.
pub const C_FLOOR: f64 = 1e-300;

/// Search values of `c` at or below this are rounding noise of an exact zero
/// and are recorded as [`C_FLOOR`].
pub const C_RESOLUTION: f64 = 1e-14;

fn floor_c(c: f64) -> f64 {
    if c <= C_RESOLUTION {
        C_FLOOR
    } else {
        c
    }
}

/// Hex SHA-256 of the spec's JSON form.
pub fn spec_hash(spec: &EnsembleSpec) -> String {
    let json = serde_json::to_string(spec).expect("specs always serialize");
    hex::encode(Sha256::digest(json.as_bytes()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Regime {
    #[serde(alias = "ti")]
    Ti,
    #[serde(alias = "iid")]
    Iid,
    #[serde(alias = "rho_poly")]
    RhoPoly,
    #[serde(alias = "rho_stretched")]
    RhoStretched,
    #[serde(alias = "beta_exp", alias = "BETA", alias = "beta")]
    BetaExp,
    #[serde(alias = "window")]
    Window,
}

impl Regime {
    pub const ALL: [Regime; 6] =
        [Regime::Ti, Regime::Iid, Regime::RhoPoly, Regime::RhoStretched, Regime::BetaExp, Regime::Window];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Ti => "TI",
            Regime::Iid => "IID",
            Regime::RhoPoly => "RHO_POLY",
            Regime::RhoStretched => "RHO_STRETCHED",
            Regime::BetaExp => "BETA_EXP",
            Regime::Window => "WINDOW",
        }
    }

    /// Errors unless the ensemble kind is one the regime's theorem covers.
    pub fn check(self, spec: &EnsembleSpec) -> Result<()> {
        let ok = match (self, &spec.ensemble) {
            (Regime::Ti, EnsembleKind::Ti { .. }) => true,
            (Regime::Iid, EnsembleKind::Iid { .. } | EnsembleKind::FinitePool { .. }) => true,
            (Regime::RhoPoly | Regime::RhoStretched | Regime::BetaExp, EnsembleKind::MarkovModulated { .. }) => true,
            (Regime::Window, _) => true,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::RegimeMismatch { regime: self.name().into(), kind: spec.ensemble.name().into() })
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        let norm = if norm == "BETA" { "BETA_EXP".to_string() } else { norm };
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == norm)
            .ok_or_else(|| invalid(format!("unknown regime {s:?}")))
    }
}

/// Constants of a high-probability bound `f ≤ K‖𝕆_n‖‖𝕆_m‖·shape(s)`.
///
/// `rate` is λ for exponential shapes, k for `s^{−k}` and κ for
/// `e^{−κ s^α}`; `exponent` is α. `floor_param` is ε for TI and is unused by
/// the regimes whose floor is fitted from the table itself (IID, BETA_EXP).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayConstants {
    pub prefactor: f64,
    pub rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponent: Option<f64>,
    #[serde(default)]
    pub floor_param: f64,
}

/// Where the bound constants come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstantsPlan {
    Declared {
        constants: DecayConstants,
    },
    /// Fit on a pilot run drawn from `seed.derive("pilot")`.
    Calibrate {
        epsilon: f64,
        pilot_samples: usize,
        pilot_separations: Vec<usize>,
        /// α for RHO_STRETCHED.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        exponent: Option<f64>,
    },
}

fn shape(regime: Regime, c: &DecayConstants, s: f64) -> f64 {
    match regime {
        Regime::RhoPoly => s.powf(-c.rate),
        Regime::RhoStretched => (-c.rate * s.powf(c.exponent.unwrap_or(1.0))).exp(),
        _ => (-c.rate * s).exp(),
    }
}

/// The abscissa against which a regime's decay is linear on a log scale.
fn shape_abscissa(regime: Regime, exponent: Option<f64>, s: f64) -> f64 {
    match regime {
        Regime::RhoPoly => s.ln(),
        Regime::RhoStretched => s.powf(exponent.unwrap_or(1.0)),
        Regime::BetaExp => s / (s.ln() * s.ln().ln()),
        _ => s,
    }
}

/// Settings for experiments that evaluate two-point functions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentOptions {
    #[serde(default)]
    pub thermo: ThermoOptions,
    /// Sites sampled beyond each observable before the first boundary
    /// attempt; doubled on non-convergence up to `thermo.max_depth`.
    #[serde(default = "default_margin")]
    pub initial_margin: usize,
}

fn default_margin() -> usize {
    256
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions { thermo: ThermoOptions::default(), initial_margin: default_margin() }
    }
}

/// One two-point evaluation at separation `s` on a fresh window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoPointSample {
    /// `None` when the boundary iteration never converged.
    pub f: Option<f64>,
    pub c_inner: f64,
    pub bound_8dc: f64,
    pub bound_holds: bool,
    pub escalated: bool,
}

/// Draws a window around sites `0` and `s` and evaluates the connected
/// two-point function, widening the window when the boundary iteration
/// needs more depth.
pub fn sample_two_point(
    spec: &EnsembleSpec,
    s: usize,
    (om, on): (&HermitianObservable, &HermitianObservable),
    seed: RngSeed,
    opts: &ExperimentOptions,
) -> Result<TwoPointSample> {
    let cap = opts.thermo.max_depth.max(1);
    let mut margin = opts.initial_margin.clamp(1, cap);
    loop {
        let w = sample_window(spec, -(margin as i64) - 1, s + 2 * margin + 3, seed)?;
        let t = ThermoOptions { max_depth: margin + 1, ..opts.thermo };
        match two_point_function(&w, (0, om), (s as i64, on), &t, seed.derive("c")) {
            Ok(r) => {
                return Ok(TwoPointSample {
                    f: Some(r.f_value),
                    c_inner: r.c_inner,
                    bound_8dc: r.bound_8dc,
                    bound_holds: r.bound_holds,
                    escalated: r.escalated,
                })
            }
            Err(Error::NoConvergence { .. }) if margin < cap => margin = (2 * margin).min(cap),
            Err(Error::NoConvergence { .. }) => {
                let c = contraction_estimate(&w.block(1, s as i64 - 1)?, opts.thermo.search, seed.derive("c"))?.lower;
                return Ok(TwoPointSample { f: None, c_inner: c, bound_8dc: f64::NAN, bound_holds: true, escalated: false });
            }
            Err(e) => return Err(e),
        }
    }
}

fn two_point_batch(
    spec: &EnsembleSpec,
    s: usize,
    obs: (&HermitianObservable, &HermitianObservable),
    samples: usize,
    seed: RngSeed,
    opts: &ExperimentOptions,
) -> Result<Vec<TwoPointSample>> {
    (0..samples)
        .into_par_iter()
        .map(|i| sample_two_point(spec, s, obs, seed.child(s as u64).child(i as u64), opts))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub separation: usize,
    pub mean_c: f64,
    pub std_c: f64,
    pub samples: usize,
    pub mean_f: f64,
    /// Fraction of samples with `f` within `bound_value`; unconverged samples
    /// count as failures.
    pub empirical_prob: f64,
    pub prob_se: f64,
    pub bound_value: f64,
    pub floor_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecaySeries {
    pub rows: Vec<SeriesRow>,
}

impl DecaySeries {
    /// CSV with the columns separation, mean_c, std_c, mean_f,
    /// empirical_prob, bound_value, floor_value.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| invalid(format!("csv: {e}"));
        w.write_record(["separation", "mean_c", "std_c", "mean_f", "empirical_prob", "bound_value", "floor_value"])
            .map_err(io)?;
        for r in &self.rows {
            w.write_record([
                r.separation.to_string(),
                r.mean_c.to_string(),
                r.std_c.to_string(),
                r.mean_f.to_string(),
                r.empirical_prob.to_string(),
                r.bound_value.to_string(),
                r.floor_value.to_string(),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| invalid(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| invalid(e.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedRate {
    pub rate: f64,
    pub prefactor: f64,
    pub r_squared: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremCheck {
    pub pass: bool,
    /// One margin per checked quantity; nonnegative means satisfied.
    pub margins: Vec<f64>,
    pub detail: String,
}

/// Tally of the `8·D·c` bound over every two-point evaluation in a report.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LemmaTally {
    pub evaluations: usize,
    pub escalations: usize,
    pub violations: usize,
    pub unconverged: usize,
}

impl LemmaTally {
    fn add(&mut self, s: &TwoPointSample) {
        self.evaluations += 1;
        self.escalations += s.escalated as usize;
        self.violations += !s.bound_holds as usize;
        self.unconverged += s.f.is_none() as usize;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowCalibration {
    pub ell: usize,
    pub threshold: f64,
    pub b: usize,
    pub u: u64,
    pub f_b: f64,
    pub zeta_bu: f64,
    pub lambda1: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec_hash: String,
    pub seed: RngSeed,
    pub regime: Regime,
    pub constants: DecayConstants,
    pub series: DecaySeries,
    pub fitted: FittedRate,
    pub theorem_check: TheoremCheck,
    pub lemma_bound: LemmaTally,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<WindowCalibration>,
}

fn normalized_f(samples: &[TwoPointSample], norm: f64) -> Vec<f64> {
    samples.iter().map(|x| x.f.map_or(f64::INFINITY, |f| f / norm)).collect()
}

/// Fits bound constants on pilot data `(s, normalized f values)`.
fn calibrate_constants(
    regime: Regime,
    pilot: &[(usize, Vec<f64>)],
    epsilon: f64,
    exponent: Option<f64>,
) -> Result<DecayConstants> {
    let x: Vec<f64> = pilot.iter().map(|(s, _)| shape_abscissa(regime, exponent, *s as f64)).collect();
    match regime {
        Regime::Iid | Regime::BetaExp => {
            // Median line with half its decay rate: the bound starts near the
            // median and pulls away from it with separation.
            let y: Vec<f64> = pilot.iter().map(|(_, v)| quantile(v, 0.5).max(C_FLOOR).ln()).collect();
            let xs: Vec<f64> = pilot.iter().map(|(s, _)| *s as f64).collect();
            let fit = linear_fit(&xs, &y)?;
            let rate = (-fit.slope / 2.0).max(0.0);
            let log_k = pilot.iter().zip(&y).map(|((s, _), yi)| yi + rate * *s as f64).fold(f64::NEG_INFINITY, f64::max);
            Ok(DecayConstants { prefactor: log_k.exp(), rate, exponent: None, floor_param: epsilon })
        }
        Regime::Ti | Regime::RhoPoly | Regime::RhoStretched => {
            // Envelope of the (1 − ε) quantiles at half their fitted rate. The
            // log quantile is convex in the separation (slow windows dominate
            // the tail), so the full pilot slope under-covers further out.
            let y: Vec<f64> = pilot.iter().map(|(_, v)| quantile(v, 1.0 - epsilon).max(C_FLOOR).ln()).collect();
            let fit = linear_fit(&x, &y)?;
            let rate = (-fit.slope / 2.0).max(0.0);
            let log_k = x.iter().zip(&y).map(|(xi, yi)| yi + rate * xi).fold(f64::NEG_INFINITY, f64::max);
            Ok(DecayConstants { prefactor: log_k.exp(), rate, exponent, floor_param: epsilon })
        }
        Regime::Window => Err(invalid("window constants come from window_bound_experiment")),
    }
}

/// High-probability decay table for one regime.
#[allow(clippy::too_many_arguments)]
pub fn highprob_decay_table(
    spec: &EnsembleSpec,
    regime: Regime,
    obs: (&HermitianObservable, &HermitianObservable),
    separations: &[usize],
    samples: usize,
    plan: &ConstantsPlan,
    seed: RngSeed,
    opts: &ExperimentOptions,
) -> Result<ExperimentReport> {
    spec.validate()?;
    if regime == Regime::Window {
        return Err(invalid("use window_bound_experiment for the WINDOW regime"));
    }
    regime.check(spec)?;
    check_separations(separations)?;
    if samples < 100 {
        return Err(invalid(format!("decay tables need at least 100 samples, got {samples}")));
    }
    let min_sep = if regime == Regime::BetaExp { 16 } else { 2 };
    if separations[0] < min_sep {
        return Err(invalid(format!("{regime} tables start at separation {min_sep}")));
    }
    let norm = obs.0.norm() * obs.1.norm();
    let mut tally = LemmaTally::default();

    let constants = match plan {
        ConstantsPlan::Declared { constants } => *constants,
        ConstantsPlan::Calibrate { epsilon, pilot_samples, pilot_separations, exponent } => {
            if !(*epsilon > 0.0 && *epsilon < 1.0) {
                return Err(invalid("epsilon must lie in (0, 1)"));
            }
            check_separations(pilot_separations)?;
            if regime == Regime::RhoStretched && exponent.is_none() {
                return Err(invalid("RHO_STRETCHED calibration needs an exponent"));
            }
            let pseed = seed.derive("pilot");
            let mut pilot = Vec::new();
            for &s in pilot_separations {
                let batch = two_point_batch(spec, s, obs, *pilot_samples, pseed, opts)?;
                batch.iter().for_each(|b| tally.add(b));
                pilot.push((s, normalized_f(&batch, norm)));
            }
            calibrate_constants(regime, &pilot, *epsilon, *exponent)?
        }
    };

    let hseed = seed.derive("heldout");
    let mut rows = Vec::new();
    for &s in separations {
        let batch = two_point_batch(spec, s, obs, samples, hseed, opts)?;
        batch.iter().for_each(|b| tally.add(b));
        let bound_value = constants.prefactor * norm * shape(regime, &constants, s as f64);
        let cs: Vec<f64> = batch.iter().map(|b| b.c_inner).collect();
        let fs: Vec<f64> = batch.iter().filter_map(|b| b.f).collect();
        let hits = batch.iter().filter(|b| b.f.is_some_and(|f| f <= bound_value)).count();
        let (mean_c, std_c) = mean_std(&cs);
        let p = hits as f64 / samples as f64;
        rows.push(SeriesRow {
            separation: s,
            mean_c,
            std_c,
            samples,
            mean_f: mean_std(&fs).0,
            empirical_prob: p,
            prob_se: binomial_se(p, samples),
            bound_value,
            floor_value: f64::NAN,
        });
    }

    // Failure fractions against the regime's shape abscissa.
    let x: Vec<f64> = rows.iter().map(|r| shape_abscissa(regime, constants.exponent, r.separation as f64)).collect();
    let fail: Vec<f64> = rows
        .iter()
        .map(|r| haldane(((1.0 - r.empirical_prob) * samples as f64).round() as usize, samples))
        .collect();
    let log_fail: Vec<f64> = fail.iter().map(|f| f.ln()).collect();
    let line = if rows.len() >= 2 { Some(linear_fit(&x, &log_fail)?) } else { None };

    let (fitted, check) = match regime {
        Regime::Ti | Regime::RhoPoly | Regime::RhoStretched => {
            for r in rows.iter_mut() {
                let s = r.separation as f64;
                r.floor_value = match regime {
                    Regime::Ti => 1.0 - constants.floor_param,
                    Regime::RhoPoly => 1.0 - s.powf(-constants.rate),
                    _ => 1.0 - (-constants.rate * s.powf(constants.exponent.unwrap_or(1.0))).exp(),
                };
            }
            let margins: Vec<f64> = rows.iter().map(|r| r.empirical_prob - (r.floor_value - 2.0 * r.prob_se)).collect();
            let pass = margins.iter().all(|m| *m >= 0.0);
            let fitted = line.map_or(FittedRate { rate: 0.0, prefactor: 1.0, r_squared: 0.0 }, |l| FittedRate {
                rate: -l.slope,
                prefactor: l.intercept.exp(),
                r_squared: l.r_squared,
            });
            (fitted, TheoremCheck { pass, margins, detail: "coverage >= floor - 2 SE at every separation".into() })
        }
        Regime::Iid => {
            let l = line.ok_or_else(|| invalid("IID tables need at least two separations"))?;
            let beta = -l.slope;
            for r in rows.iter_mut() {
                r.floor_value = 1.0 - (-beta * r.separation as f64).exp();
            }
            (
                FittedRate { rate: beta, prefactor: l.intercept.exp(), r_squared: l.r_squared },
                TheoremCheck {
                    pass: beta > 0.0,
                    margins: vec![beta],
                    detail: "failure fraction decays: fitted log-linear slope is negative".into(),
                },
            )
        }
        Regime::BetaExp => {
            // ln fail = −p·x through the origin.
            let sxx: f64 = x.iter().map(|v| v * v).sum();
            let p = -x.iter().zip(&log_fail).map(|(a, b)| a * b).sum::<f64>() / sxx;
            let ss_res: f64 = x.iter().zip(&log_fail).map(|(a, b)| (b + p * a).powi(2)).sum();
            let ss_tot: f64 = log_fail.iter().map(|b| b * b).sum();
            for (r, xi) in rows.iter_mut().zip(&x) {
                r.floor_value = 1.0 - (-p * xi).exp();
            }
            (
                FittedRate { rate: p, prefactor: 1.0, r_squared: 1.0 - ss_res / ss_tot },
                TheoremCheck {
                    pass: p > 0.0,
                    margins: vec![p],
                    detail: "fitted p in exp(-p s/(ln s lnln s)) is positive".into(),
                },
            )
        }
        Regime::Window => unreachable!(),
    };

    Ok(ExperimentReport {
        spec_hash: spec_hash(spec),
        seed,
        regime,
        constants,
        series: DecaySeries { rows },
        fitted,
        theorem_check: check,
        lemma_bound: tally,
        window: None,
    })
}

fn check_separations(seps: &[usize]) -> Result<()> {
    if seps.is_empty() {
        return Err(invalid("no separations given"));
    }
    if seps[0] < 2 || seps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("separations must be strictly increasing and at least 2"));
    }
    Ok(())
}

/// Search caps for the window calibration.
pub const WINDOW_MAX_B: usize = 64;
pub const WINDOW_MAX_U: u64 = 1 << 16;

/// Finite-window bound: calibrate `(b, u)` from `f(b)` and `ζ_b(u)`, then
/// check `f ≤ K‖𝕆‖‖𝕆‖λ₁^s` for `2 ≤ s < L`.
#[allow(clippy::too_many_arguments)]
pub fn window_bound_experiment(
    spec: &EnsembleSpec,
    l: usize,
    epsilon: f64,
    obs: (&HermitianObservable, &HermitianObservable),
    samples: usize,
    calibration_samples: usize,
    seed: RngSeed,
    opts: &ExperimentOptions,
) -> Result<ExperimentReport> {
    spec.validate()?;
    if l <= 2 {
        return Err(invalid(format!("window length L must exceed 2, got {l}")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(invalid("epsilon must lie in (0, 1)"));
    }
    if samples == 0 || calibration_samples == 0 {
        return Err(invalid("sample counts must be positive"));
    }
    let ell = (1.0 / epsilon).ceil() as usize;
    let threshold = 1.0 / (2.0 * ell as f64 * (l - 2) as f64);
    let records = entry_records(spec, WINDOW_MAX_B, calibration_samples, seed.derive("calibration"), Some(opts.thermo.search))?;
    let n = records.len() as f64;
    if records.iter().all(|r| r.tau == EntryTime::ExceedsCap) {
        // Large b would otherwise satisfy f(b)/b through f(b) = 1 alone.
        return Err(Error::CalibrationFailed(format!(
            "tau exceeded {WINDOW_MAX_B} on every calibration sample; the maps never become strictly positive"
        )));
    }
    let mut chosen = None;
    'search: for b in 1..=WINDOW_MAX_B {
        let f_b = records.iter().filter(|r| !matches!(r.tau, EntryTime::At(t) if t <= b)).count() as f64 / n;
        if f_b / b as f64 > threshold {
            continue;
        }
        let mut u: u64 = 2;
        while u <= WINDOW_MAX_U {
            let z = zeta_from_records(&records, b, u as f64).value;
            if z <= b as f64 * threshold {
                chosen = Some((b, u, f_b, z));
                break 'search;
            }
            u *= 2;
        }
    }
    let (b, u, f_b, zeta_bu) = chosen.ok_or_else(|| {
        Error::CalibrationFailed(format!("no b <= {WINDOW_MAX_B} and u <= {WINDOW_MAX_U} meet the thresholds"))
    })?;
    let lambda1 = (1.0 - 1.0 / u as f64).powf(1.0 / b as f64);
    let k = 8.0 * spec.bond_dim as f64 * lambda1.powi(-(b as i32 + 1));
    let constants = DecayConstants { prefactor: k, rate: -lambda1.ln(), exponent: None, floor_param: epsilon };
    let norm = obs.0.norm() * obs.1.norm();
    let mut tally = LemmaTally::default();
    let mut rows = Vec::new();
    for s in 2..l {
        let batch = two_point_batch(spec, s, obs, samples, seed.derive("heldout"), opts)?;
        batch.iter().for_each(|x| tally.add(x));
        let bound_value = k * norm * lambda1.powi(s as i32);
        let hits = batch.iter().filter(|x| x.f.is_some_and(|f| f <= bound_value)).count();
        let cs: Vec<f64> = batch.iter().map(|x| x.c_inner).collect();
        let fs: Vec<f64> = batch.iter().filter_map(|x| x.f).collect();
        let (mean_c, std_c) = mean_std(&cs);
        let p = hits as f64 / samples as f64;
        rows.push(SeriesRow {
            separation: s,
            mean_c,
            std_c,
            samples,
            mean_f: mean_std(&fs).0,
            empirical_prob: p,
            prob_se: binomial_se(p, samples),
            bound_value,
            floor_value: 1.0 - epsilon,
        });
    }
    let margins: Vec<f64> = rows.iter().map(|r| r.empirical_prob - (r.floor_value - 2.0 * r.prob_se)).collect();
    Ok(ExperimentReport {
        spec_hash: spec_hash(spec),
        seed,
        regime: Regime::Window,
        constants,
        series: DecaySeries { rows },
        fitted: FittedRate { rate: -lambda1.ln(), prefactor: k, r_squared: f64::NAN },
        theorem_check: TheoremCheck {
            pass: margins.iter().all(|m| *m >= 0.0),
            margins,
            detail: "frequency >= 1 - epsilon - 2 SE for 2 <= s < L".into(),
        },
        lemma_bound: tally,
        window: Some(WindowCalibration { ell, threshold, b, u, f_b, zeta_bu, lambda1, samples: calibration_samples }),
    })
}

/// `c(Φ^{(n)})` for each `n` in `ns` (ascending) on one window, with
/// unresolvable values floored.
fn prefix_contractions(window: &ChainWindow, ns: &[usize], search: SearchOptions, seed: RngSeed) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(ns.len());
    let mut acc: Option<Superoperator> = None;
    let mut next_idx = 0;
    for n in 1..=*ns.last().unwrap() {
        let phi = liouville_of_tensor(&window.tensors[n - 1]);
        let p = match &acc {
            None => phi,
            Some(a) => superop_compose(&phi, a)?,
        }
        .normalized()
        .0;
        if ns[next_idx] == n {
            out.push(floor_c(contraction_estimate(&p, search, seed.child(n as u64))?.lower));
            next_idx += 1;
        }
        acc = Some(p);
    }
    Ok(out)
}

fn check_lengths(ns: &[usize]) -> Result<()> {
    if ns.is_empty() || ns[0] == 0 || ns.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("lengths must be positive and strictly increasing"));
    }
    Ok(())
}

/// Per-sample `c(Φ^{(n)})` for every `n` in `ns`; row `i` is sample `i`.
pub fn contraction_samples(
    spec: &EnsembleSpec,
    ns: &[usize],
    samples: usize,
    seed: RngSeed,
    search: SearchOptions,
) -> Result<Vec<Vec<f64>>> {
    check_lengths(ns)?;
    let len = *ns.last().unwrap();
    (0..samples)
        .into_par_iter()
        .map(|i| {
            let s = seed.child(i as u64);
            let w = sample_window(spec, 0, len, s)?;
            prefix_contractions(&w, ns, search, s.derive("c"))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CRow {
    pub n: usize,
    pub mean_c: f64,
    pub std_c: f64,
    pub std_error: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CSeries {
    pub rows: Vec<CRow>,
    /// `ln E[c]` against `n`.
    pub exponential_fit: Option<LinearFit>,
    /// `ln E[c]` against `ln n`.
    pub power_fit: Option<LinearFit>,
    /// `δ̂ = −slope` of the exponential fit.
    pub delta_hat: Option<f64>,
    /// 95% percentile-bootstrap interval for `δ̂`.
    pub delta_ci: Option<(f64, f64)>,
}

/// Monte Carlo `E[c(Φ^{(n)})]` with exponential and power-law fits.
pub fn c_expectation_series(
    spec: &EnsembleSpec,
    ns: &[usize],
    samples: usize,
    seed: RngSeed,
    search: SearchOptions,
) -> Result<CSeries> {
    spec.validate()?;
    if samples == 0 {
        return Err(invalid("samples must be positive"));
    }
    let per_sample = contraction_samples(spec, ns, samples, seed, search)?;
    let groups: Vec<Vec<f64>> = (0..ns.len()).map(|j| per_sample.iter().map(|r| r[j]).collect()).collect();
    let rows: Vec<CRow> = ns
        .iter()
        .zip(&groups)
        .map(|(&n, g)| {
            let (m, s) = mean_std(g);
            CRow { n, mean_c: m, std_c: s, std_error: std_error(g), samples }
        })
        .collect();
    let x: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.mean_c.max(C_FLOOR).ln()).collect();
    let exponential_fit = linear_fit(&x, &y).ok();
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let power_fit = linear_fit(&lx, &y).ok();
    let delta_ci = if ns.len() >= 2 {
        bootstrap_log_slope_ci(&x, &groups, C_FLOOR, 1000, 0.95, seed.derive("bootstrap"))
            .ok()
            .map(|(lo, hi)| (-hi, -lo))
    } else {
        None
    };
    Ok(CSeries { rows, delta_hat: exponential_fit.map(|f| -f.slope), exponential_fit, power_fit, delta_ci })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct XiRow {
    pub n: usize,
    pub mean: f64,
    pub std_error: f64,
    /// Samples whose `c` was at or below [`C_FLOOR`].
    pub underflows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XiEstimate {
    /// Mean of `ln c(Φ^{(n)})/n` at `n_max`; floored samples contribute
    /// `ln(1e-300)/n`.
    pub xi_hat: f64,
    pub ci95: (f64, f64),
    /// Every sample underflowed at `n_max`: the rate is `−∞`.
    pub minus_infinity: bool,
    pub per_n: Vec<XiRow>,
}

/// Estimates the top exponent `ξ = lim ln c(Φ^{(n)})/n` at `n_max`, with
/// the trend over `n = 2, 4, …, n_max`.
pub fn estimate_xi(
    spec: &EnsembleSpec,
    n_max: usize,
    samples: usize,
    seed: RngSeed,
    search: SearchOptions,
) -> Result<XiEstimate> {
    spec.validate()?;
    if n_max < 4 {
        return Err(invalid(format!("n_max must be at least 4, got {n_max}")));
    }
    if samples == 0 {
        return Err(invalid("samples must be positive"));
    }
    let mut ns: Vec<usize> = (2..=n_max).step_by(2).collect();
    if *ns.last().unwrap() != n_max {
        ns.push(n_max);
    }
    let per_sample = contraction_samples(spec, &ns, samples, seed, search)?;
    let per_n: Vec<XiRow> = ns
        .iter()
        .enumerate()
        .map(|(j, &n)| {
            let v: Vec<f64> = per_sample.iter().map(|r| r[j].ln() / n as f64).collect();
            XiRow {
                n,
                mean: mean_std(&v).0,
                std_error: std_error(&v),
                underflows: per_sample.iter().filter(|r| r[j] <= C_FLOOR).count(),
            }
        })
        .collect();
    let last = per_n.last().unwrap();
    Ok(XiEstimate {
        xi_hat: last.mean,
        ci95: (last.mean - 1.96 * last.std_error, last.mean + 1.96 * last.std_error),
        minus_infinity: last.underflows == samples,
        per_n,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecursiveCheck {
    pub i: usize,
    pub q: usize,
    pub r: usize,
    pub e_total: f64,
    pub e_i: f64,
    pub e_r: f64,
    pub rho_q: f64,
    pub rhs: f64,
    pub combined_se: f64,
    /// `rhs + 3·combined_se − e_total`.
    pub margin: f64,
    pub pass: bool,
}

/// `Ê[c(Φ^{(i+q+r)})] ≤ Ê[c(Φ^{(i)})]Ê[c(Φ^{(r)})] + ρ_q √(Ê[c(Φ^{(i)})]Ê[c(Φ^{(r)})]) + 3·SE`.
///
/// The `r`-block is the last `r` sites of each sampled window.
pub fn recursive_bound_check(
    spec: &EnsembleSpec,
    i: usize,
    q: usize,
    r: usize,
    samples: usize,
    seed: RngSeed,
    search: SearchOptions,
) -> Result<RecursiveCheck> {
    spec.validate()?;
    if i == 0 || q == 0 || r == 0 || samples < 2 {
        return Err(invalid("i, q, r must be positive and samples at least 2"));
    }
    let rho_q = spec.rho_profile(q)?;
    let total = i + q + r;
    let triples: Vec<[f64; 3]> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let s = seed.child(k as u64);
            let w = sample_window(spec, 0, total, s)?;
            let c_total = contraction_estimate(&w.block(0, total as i64 - 1)?, search, s.derive("total"))?.lower;
            let c_i = contraction_estimate(&w.block(0, i as i64 - 1)?, search, s.derive("i"))?.lower;
            let c_r = contraction_estimate(&w.block((i + q) as i64, total as i64 - 1)?, search, s.derive("r"))?.lower;
            Ok([c_total, c_i, c_r])
        })
        .collect::<Result<_>>()?;
    let col = |j: usize| triples.iter().map(|t| t[j]).collect::<Vec<f64>>();
    let (t, a, b) = (col(0), col(1), col(2));
    let (e_total, e_i, e_r) = (mean_std(&t).0, mean_std(&a).0, mean_std(&b).0);
    let combined_se = (std_error(&t).powi(2) + std_error(&a).powi(2) + std_error(&b).powi(2)).sqrt();
    let rhs = e_i * e_r + rho_q * (e_i * e_r).sqrt();
    let margin = rhs + 3.0 * combined_se - e_total;
    Ok(RecursiveCheck { i, q, r, e_total, e_i, e_r, rho_q, rhs, combined_se, margin, pass: margin >= 0.0 })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WielandtResult {
    pub phys_dim: usize,
    pub bond_dim: usize,
    /// `L⋆ = 2⌈log_d D⌉`.
    pub length: usize,
    pub certified: usize,
    pub samples: usize,
    pub fraction: f64,
}

/// Fraction of Gaussian TI chains whose `L⋆`-fold map passes the Choi-rank
/// test.
pub fn wielandt_experiment(phys_dim: usize, bond_dim: usize, samples: usize, seed: RngSeed) -> Result<WielandtResult> {
    if phys_dim < 2 || bond_dim < 2 {
        return Err(invalid("d and D must both be at least 2"));
    }
    if samples == 0 {
        return Err(invalid("samples must be positive"));
    }
    let length = 2 * wielandt_half(phys_dim, bond_dim);
    let sigma = 1.0 / (bond_dim as f64).sqrt();
    let certified: Vec<bool> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let t = gaussian_local_tensor(phys_dim, bond_dim, sigma, &mut seed.child(i as u64).rng())?;
            let phi = liouville_of_tensor(&t);
            let mut acc = phi.normalized().0;
            for _ in 1..length {
                acc = superop_compose(&phi, &acc)?.normalized().0;
            }
            Ok(choi_full_rank(&acc, RANK_TOL))
        })
        .collect::<Result<_>>()?;
    let count = certified.iter().filter(|&&b| b).count();
    Ok(WielandtResult {
        phys_dim,
        bond_dim,
        length,
        certified: count,
        samples,
        fraction: count as f64 / samples as f64,
    })
}

/// `β_n` of a Markov-modulated spec's hidden chain.
pub fn spec_beta(spec: &EnsembleSpec, n: usize) -> Result<f64> {
    match &spec.ensemble {
        EnsembleKind::MarkovModulated { transition, stationary, .. } => markov_beta_exact(transition, stationary, n),
        other => Err(Error::RegimeMismatch { regime: "BETA_EXP".into(), kind: other.name().into() }),
    }
}
