//! Run configuration: a strict JSON document with every default written out
//! after parsing.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use smps::contraction::SearchOptions;
use smps::ensembles::{EnsembleKind, EnsembleSpec};
use smps::experiments::{ConstantsPlan, Regime};
use smps::thermo::ThermoOptions;
use smps::{CMatrix, HermitianObservable, C64};

/// A configuration problem located by a JSON pointer into the document.
#[derive(Clone, Debug, PartialEq, thiserror::Error, Serialize)]
#[error("{pointer}: {message}")]
pub struct ConfigError {
    pub pointer: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError { pointer: pointer.into(), message: message.into() }
    }
}

/// One site observable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservableDoc {
    /// `diag(1, −1, 1, …)` on the physical space.
    Staggered,
    Identity,
    Diag { values: Vec<f64> },
    /// Hermitian matrix given as real and imaginary row lists.
    Matrix {
        re: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        im: Option<Vec<Vec<f64>>>,
    },
}

impl ObservableDoc {
    pub fn build(&self, phys_dim: usize) -> smps::Result<HermitianObservable> {
        match self {
            ObservableDoc::Staggered => Ok(HermitianObservable::staggered(phys_dim)),
            ObservableDoc::Identity => Ok(HermitianObservable::identity(phys_dim)),
            ObservableDoc::Diag { values } => Ok(HermitianObservable::diag(values)),
            ObservableDoc::Matrix { re, im } => {
                let rows: Vec<Vec<C64>> = re
                    .iter()
                    .enumerate()
                    .map(|(i, row)| {
                        row.iter()
                            .enumerate()
                            .map(|(j, &x)| {
                                let y = im.as_ref().and_then(|m| m.get(i)).and_then(|r| r.get(j)).copied().unwrap_or(0.0);
                                C64::new(x, y)
                            })
                            .collect()
                    })
                    .collect();
                HermitianObservable::new(CMatrix::from_rows(&rows)?)
            }
        }
    }
}

fn staggered() -> ObservableDoc {
    ObservableDoc::Staggered
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservablePair {
    #[serde(default = "staggered")]
    pub m: ObservableDoc,
    #[serde(default = "staggered")]
    pub n: ObservableDoc,
}

impl Default for ObservablePair {
    fn default() -> Self {
        ObservablePair { m: ObservableDoc::Staggered, n: ObservableDoc::Staggered }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}
fn default_samples() -> usize {
    1000
}
fn default_margin() -> usize {
    256
}
fn default_lengths() -> Vec<usize> {
    (2..=12).collect()
}
fn default_n() -> usize {
    16
}
fn default_separations() -> Vec<usize> {
    (2..=12).collect()
}
fn default_epsilon() -> f64 {
    0.1
}
fn default_window() -> usize {
    8
}
fn default_pilot() -> usize {
    200
}
fn default_sample_length() -> usize {
    32
}

/// Everything a run needs. Optional fields are filled by
/// [`RunConfig::materialize`], so a parsed config echoes every default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub spec: EnsembleSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Worker threads; not part of the result, so it may stay unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub thermo: ThermoOptions,
    /// Sites sampled on each side of a two-point pair before widening.
    #[serde(default = "default_margin")]
    pub initial_margin: usize,
    #[serde(default)]
    pub observables: ObservablePair,
    /// Block lengths for `contraction`; the last one is `n_max` for `xi`.
    #[serde(default = "default_lengths")]
    pub lengths: Vec<usize>,
    /// Half-width `N` of the finite window in `thermo`.
    #[serde(default = "default_n")]
    pub n: usize,
    /// Window length for `sample`.
    #[serde(default = "default_sample_length")]
    pub sample_length: usize,
    #[serde(default = "default_separations")]
    pub separations: Vec<usize>,
    #[serde(default)]
    pub regime: Option<Regime>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub constants: Option<ConstantsPlan>,
    /// Window length `L` for `window`.
    #[serde(default = "default_window")]
    pub window: usize,
    /// Calibration draws for `window`.
    #[serde(default)]
    pub calibration_samples: Option<usize>,
    #[serde(default = "default_pilot")]
    pub pilot_samples: usize,
}

/// Command-line values that take precedence over the document.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub samples: Option<usize>,
    pub separation_min: Option<usize>,
    pub separation_max: Option<usize>,
    pub regime: Option<Regime>,
    pub epsilon: Option<f64>,
    pub window: Option<usize>,
}

/// Parses `source` as an inline JSON document when it starts with `{`,
/// otherwise as a file path.
pub fn parse_config(source: &str) -> Result<RunConfig, ConfigError> {
    parse_config_with(source, &Overrides::default())
}

pub fn parse_config_with(source: &str, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
    let text = if source.trim_start().starts_with('{') {
        source.to_string()
    } else {
        read_file(Path::new(source))?
    };
    let mut cfg = parse_document(&text)?;
    cfg.apply(overrides)?;
    cfg.materialize();
    cfg.validate()?;
    Ok(cfg)
}

fn read_file(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", path.display())))
}

/// Strict deserialization only; no defaults beyond serde's, no validation.
pub fn parse_document(text: &str) -> Result<RunConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = pointer_of(e.path());
        ConfigError::new(pointer, e.into_inner().to_string())
    })
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => {}
        }
    }
    out
}

impl RunConfig {
    pub fn apply(&mut self, o: &Overrides) -> Result<(), ConfigError> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if o.workers.is_some() {
            self.workers = o.workers;
        }
        if let Some(p) = &o.out {
            self.out = p.clone();
        }
        if let Some(n) = o.samples {
            self.samples = n;
        }
        if o.separation_min.is_some() || o.separation_max.is_some() {
            let lo = o.separation_min.unwrap_or(self.separations.first().copied().unwrap_or(2));
            let hi = o.separation_max.unwrap_or(self.separations.last().copied().unwrap_or(lo));
            if hi < lo {
                return Err(ConfigError::new("/separations", format!("--separation-max {hi} is below --separation-min {lo}")));
            }
            self.separations = (lo..=hi).collect();
        }
        if o.regime.is_some() {
            self.regime = o.regime;
        }
        if let Some(e) = o.epsilon {
            self.epsilon = e;
            if let Some(ConstantsPlan::Calibrate { epsilon, .. }) = &mut self.constants {
                *epsilon = e;
            }
        }
        if let Some(l) = o.window {
            self.window = l;
        }
        Ok(())
    }

    /// Fills every optional field with its default.
    pub fn materialize(&mut self) {
        self.spec.materialize_defaults();
        if self.regime.is_none() {
            self.regime = Some(match self.spec.ensemble {
                EnsembleKind::Ti { .. } => Regime::Ti,
                EnsembleKind::Iid { .. } | EnsembleKind::FinitePool { .. } => Regime::Iid,
                EnsembleKind::MarkovModulated { .. } => Regime::BetaExp,
            });
        }
        if self.constants.is_none() {
            self.constants = Some(ConstantsPlan::Calibrate {
                epsilon: self.epsilon,
                pilot_samples: self.pilot_samples,
                pilot_separations: self.separations.clone(),
                exponent: None,
            });
        }
        if self.calibration_samples.is_none() {
            self.calibration_samples = Some(self.samples);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.spec.validate().map_err(|v| ConfigError::new(format!("/spec{}", v.pointer), v.message))?;
        let positive = |v: usize, p: &str| {
            if v == 0 {
                Err(ConfigError::new(p, "must be positive"))
            } else {
                Ok(())
            }
        };
        positive(self.samples, "/samples")?;
        positive(self.n, "/n")?;
        positive(self.sample_length, "/sample_length")?;
        positive(self.pilot_samples, "/pilot_samples")?;
        positive(self.thermo.max_depth, "/thermo/max_depth")?;
        positive(self.thermo.search.restarts, "/thermo/search/restarts")?;
        positive(self.thermo.search.iters, "/thermo/search/iters")?;
        if let Some(w) = self.workers {
            positive(w, "/workers")?;
        }
        if let Some(c) = self.calibration_samples {
            positive(c, "/calibration_samples")?;
        }
        if !(self.thermo.tol > 0.0 && self.thermo.tol.is_finite()) {
            return Err(ConfigError::new("/thermo/tol", "must be positive and finite"));
        }
        increasing(&self.lengths, 1, "/lengths")?;
        increasing(&self.separations, 2, "/separations")?;
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(ConfigError::new("/epsilon", "must lie in (0, 1)"));
        }
        if self.window <= 2 {
            return Err(ConfigError::new("/window", "window length L must exceed 2"));
        }
        if let Some(ConstantsPlan::Calibrate { epsilon, pilot_samples, pilot_separations, .. }) = &self.constants {
            if !(*epsilon > 0.0 && *epsilon < 1.0) {
                return Err(ConfigError::new("/constants/epsilon", "must lie in (0, 1)"));
            }
            positive(*pilot_samples, "/constants/pilot_samples")?;
            increasing(pilot_separations, 2, "/constants/pilot_separations")?;
        }
        let d = self.spec.phys_dim;
        for (name, o) in [("m", &self.observables.m), ("n", &self.observables.n)] {
            let built = o.build(d).map_err(|e| ConfigError::new(format!("/observables/{name}"), e.to_string()))?;
            if built.dim() != d {
                return Err(ConfigError::new(
                    format!("/observables/{name}"),
                    format!("observable acts on dimension {}, the spec has d = {d}", built.dim()),
                ));
            }
        }
        Ok(())
    }

    pub fn observables(&self) -> smps::Result<(HermitianObservable, HermitianObservable)> {
        let d = self.spec.phys_dim;
        Ok((self.observables.m.build(d)?, self.observables.n.build(d)?))
    }

    pub fn regime(&self) -> Regime {
        self.regime.expect("materialized configs carry a regime")
    }

    pub fn thermo_options(&self) -> ThermoOptions {
        self.thermo
    }

    pub fn search(&self) -> SearchOptions {
        self.thermo.search
    }

    /// Hex SHA-256 of the materialized document.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("configs always serialize");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

fn increasing(v: &[usize], min: usize, pointer: &str) -> Result<(), ConfigError> {
    if v.is_empty() {
        return Err(ConfigError::new(pointer, "must not be empty"));
    }
    if v[0] < min {
        return Err(ConfigError::new(format!("{pointer}/0"), format!("must be at least {min}")));
    }
    if let Some(i) = v.windows(2).position(|w| w[1] <= w[0]) {
        return Err(ConfigError::new(format!("{pointer}/{}", i + 1), "must be strictly increasing"));
    }
    Ok(())
}
