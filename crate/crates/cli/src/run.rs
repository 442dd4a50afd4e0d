//! Subcommand execution and artifact persistence.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use smps::ensembles::sample_window;
use smps::experiments::{
    c_expectation_series, estimate_xi, highprob_decay_table, sample_two_point, wielandt_experiment,
    window_bound_experiment, ExperimentOptions, LemmaTally,
};
use smps::thermo::{finite_expectation, thermo_expectation};
use smps::RngSeed;

use crate::config::{ConfigError, RunConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Sample,
    Contraction,
    Thermo,
    Twopoint,
    Decay,
    Window,
    Wielandt,
    Xi,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Sample => "sample",
            Command::Contraction => "contraction",
            Command::Thermo => "thermo",
            Command::Twopoint => "twopoint",
            Command::Decay => "decay",
            Command::Window => "window",
            Command::Wielandt => "wielandt",
            Command::Xi => "xi",
        }
    }
}

/// Wielandt runs below this certified fraction fail their check.
pub const WIELANDT_FLOOR: f64 = 0.998;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] smps::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config_error",
            CliError::Core(e) => e.code(),
            CliError::Io { .. } => "io_error",
            CliError::Csv(_) => "io_error",
            CliError::Pool(_) => "thread_pool",
        }
    }

    /// `{"error": {"code", "message", "pointer"?}}`.
    pub fn to_json(&self) -> serde_json::Value {
        let mut e = serde_json::json!({ "code": self.code(), "message": self.to_string() });
        if let CliError::Config(c) = self {
            e["pointer"] = c.pointer.clone().into();
            e["message"] = c.message.clone().into();
        }
        serde_json::json!({ "error": e })
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// Writes through a sibling temporary file and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io(dir))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(io(&tmp))?;
    f.write_all(bytes).map_err(io(&tmp))?;
    f.sync_all().map_err(io(&tmp))?;
    drop(f);
    fs::rename(&tmp, path).map_err(io(path))
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("reports always serialize");
    s.push('\n');
    s.into_bytes()
}

fn csv_bytes<R: Serialize>(rows: &[R]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| CliError::Csv(e.into_error().into()))
}

#[derive(Serialize)]
struct Versions {
    smps: &'static str,
    smps_cli: &'static str,
}

/// Everything needed to rerun and check a run.
#[derive(Serialize)]
pub struct Manifest<'a> {
    pub command: Command,
    pub config_hash: String,
    pub seed: u64,
    pub workers: usize,
    versions: Versions,
    pub wall_time_seconds: f64,
    pub exit_code: i32,
    pub artifacts: Vec<String>,
    pub config: &'a RunConfig,
}

/// Result of a completed run.
#[derive(Debug)]
pub struct RunOutcome {
    /// 0 on success, 2 when the run's check failed (data still written).
    pub exit_code: i32,
    pub out_dir: PathBuf,
    pub artifacts: Vec<String>,
}

struct Artifacts {
    dir: PathBuf,
    names: Vec<String>,
}

impl Artifacts {
    fn write(&mut self, name: String, bytes: &[u8]) -> Result<(), CliError> {
        atomic_write(&self.dir.join(&name), bytes)?;
        self.names.push(name);
        Ok(())
    }
}

/// Worker count from the config, else `SMPS_WORKERS`, else the machine.
pub fn resolve_workers(cfg: &RunConfig) -> usize {
    cfg.workers
        .or_else(|| std::env::var("SMPS_WORKERS").ok().and_then(|v| v.parse().ok()).filter(|&n| n > 0))
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `command` and writes `<command>.json`, `<command>.csv` and
/// `manifest.json` into `cfg.out`.
pub fn run(command: Command, cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let workers = resolve_workers(cfg);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| CliError::Pool(e.to_string()))?;
    let start = Instant::now();
    let mut art = Artifacts { dir: cfg.out.clone(), names: Vec::new() };
    let exit_code = pool.install(|| execute(command, cfg, &mut art))?;
    let manifest = Manifest {
        command,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        workers,
        versions: Versions { smps: smps::VERSION, smps_cli: env!("CARGO_PKG_VERSION") },
        wall_time_seconds: start.elapsed().as_secs_f64(),
        exit_code,
        artifacts: art.names.clone(),
        config: cfg,
    };
    atomic_write(&cfg.out.join("manifest.json"), &to_json(&manifest))?;
    Ok(RunOutcome { exit_code, out_dir: cfg.out.clone(), artifacts: art.names })
}

fn experiment_options(cfg: &RunConfig) -> ExperimentOptions {
    ExperimentOptions { thermo: cfg.thermo_options(), initial_margin: cfg.initial_margin }
}

fn execute(command: Command, cfg: &RunConfig, art: &mut Artifacts) -> Result<i32, CliError> {
    let seed = RngSeed::new(cfg.seed);
    let name = command.name();
    let json_name = format!("{name}.json");
    let csv_name = format!("{name}.csv");
    match command {
        Command::Sample => {
            let w = sample_window(&cfg.spec, 0, cfg.sample_length, seed)?;
            #[derive(Serialize)]
            struct Row {
                site: i64,
                hidden_state: Option<usize>,
                kraus_frobenius: f64,
            }
            let rows: Vec<Row> = w
                .tensors
                .iter()
                .enumerate()
                .map(|(i, t)| Row {
                    site: w.first_site + i as i64,
                    hidden_state: w.hidden_path.as_ref().map(|p| p[i]),
                    kraus_frobenius: t.kraus().iter().map(|a| a.frobenius().powi(2)).sum::<f64>().sqrt(),
                })
                .collect();
            art.write(json_name, &to_json(&w))?;
            art.write(csv_name, &csv_bytes(&rows)?)?;
            Ok(0)
        }
        Command::Contraction => {
            let s = c_expectation_series(&cfg.spec, &cfg.lengths, cfg.samples, seed, cfg.search())?;
            art.write(json_name, &to_json(&s))?;
            art.write(csv_name, &csv_bytes(&s.rows)?)?;
            Ok(0)
        }
        Command::Xi => {
            let n_max = *cfg.lengths.last().expect("validated nonempty");
            let x = estimate_xi(&cfg.spec, n_max, cfg.samples, seed, cfg.search())?;
            art.write(json_name, &to_json(&x))?;
            art.write(csv_name, &csv_bytes(&x.per_n)?)?;
            Ok(0)
        }
        Command::Thermo => {
            let (om, _) = cfg.observables()?;
            let opts = cfg.thermo_options();
            let n = cfg.n;
            let half = opts.max_depth.max(n) as i64 + 1;
            #[derive(Serialize)]
            struct Row {
                sample: usize,
                thermo: f64,
                finite: f64,
                gap: f64,
            }
            use rayon::prelude::*;
            let rows: Vec<Row> = (0..cfg.samples)
                .into_par_iter()
                .map(|i| {
                    let w = sample_window(&cfg.spec, -half, 2 * half as usize + 1, seed.child(i as u64))?;
                    let obs = [(0, om.clone())];
                    let t = thermo_expectation(&w, &obs, &opts)?;
                    let f = finite_expectation(&w, &obs, n)?;
                    Ok(Row { sample: i, thermo: t, finite: f, gap: (t - f).abs() })
                })
                .collect::<smps::Result<_>>()?;
            #[derive(Serialize)]
            struct Summary {
                n: usize,
                samples: usize,
                mean_gap: f64,
                max_gap: f64,
            }
            let gaps: Vec<f64> = rows.iter().map(|r| r.gap).collect();
            let summary = Summary {
                n,
                samples: rows.len(),
                mean_gap: gaps.iter().sum::<f64>() / gaps.len() as f64,
                max_gap: gaps.iter().copied().fold(0.0, f64::max),
            };
            art.write(json_name, &to_json(&summary))?;
            art.write(csv_name, &csv_bytes(&rows)?)?;
            Ok(0)
        }
        Command::Twopoint => {
            let (om, on) = cfg.observables()?;
            let opts = experiment_options(cfg);
            #[derive(Serialize)]
            struct Row {
                separation: usize,
                sample: usize,
                f: Option<f64>,
                c_inner: f64,
                bound_8dc: f64,
                bound_holds: bool,
                escalated: bool,
            }
            use rayon::prelude::*;
            let mut rows = Vec::new();
            for &s in &cfg.separations {
                let batch: Vec<Row> = (0..cfg.samples)
                    .into_par_iter()
                    .map(|i| {
                        let r = sample_two_point(&cfg.spec, s, (&om, &on), seed.child(s as u64).child(i as u64), &opts)?;
                        Ok(Row {
                            separation: s,
                            sample: i,
                            f: r.f,
                            c_inner: r.c_inner,
                            bound_8dc: r.bound_8dc,
                            bound_holds: r.bound_holds,
                            escalated: r.escalated,
                        })
                    })
                    .collect::<smps::Result<_>>()?;
                rows.extend(batch);
            }
            let tally = LemmaTally {
                evaluations: rows.len(),
                escalations: rows.iter().filter(|r| r.escalated).count(),
                violations: rows.iter().filter(|r| !r.bound_holds).count(),
                unconverged: rows.iter().filter(|r| r.f.is_none()).count(),
            };
            art.write(json_name, &to_json(&serde_json::json!({ "lemma_bound": tally })))?;
            art.write(csv_name, &csv_bytes(&rows)?)?;
            Ok(if tally.violations == 0 { 0 } else { 2 })
        }
        Command::Decay => {
            let (om, on) = cfg.observables()?;
            let plan = cfg.constants.as_ref().expect("materialized configs carry constants");
            let rep = highprob_decay_table(
                &cfg.spec,
                cfg.regime(),
                (&om, &on),
                &cfg.separations,
                cfg.samples,
                plan,
                seed,
                &experiment_options(cfg),
            )?;
            art.write(json_name, &to_json(&rep))?;
            art.write(csv_name, rep.series.to_csv()?.as_bytes())?;
            Ok(if rep.theorem_check.pass && rep.lemma_bound.violations == 0 { 0 } else { 2 })
        }
        Command::Window => {
            let (om, on) = cfg.observables()?;
            let cal = cfg.calibration_samples.unwrap_or(cfg.samples);
            match window_bound_experiment(
                &cfg.spec,
                cfg.window,
                cfg.epsilon,
                (&om, &on),
                cfg.samples,
                cal,
                seed,
                &experiment_options(cfg),
            ) {
                Ok(rep) => {
                    art.write(json_name, &to_json(&rep))?;
                    art.write(csv_name, rep.series.to_csv()?.as_bytes())?;
                    Ok(if rep.theorem_check.pass && rep.lemma_bound.violations == 0 { 0 } else { 2 })
                }
                Err(e @ smps::Error::CalibrationFailed(_)) => {
                    let body = serde_json::json!({ "calibration_failed": { "code": e.code(), "message": e.to_string() } });
                    art.write(json_name, &to_json(&body))?;
                    Ok(2)
                }
                Err(e) => Err(e.into()),
            }
        }
        Command::Wielandt => {
            let r = wielandt_experiment(cfg.spec.phys_dim, cfg.spec.bond_dim, cfg.samples, seed)?;
            art.write(json_name, &to_json(&r))?;
            art.write(csv_name, &csv_bytes(&[r])?)?;
            Ok(if r.fraction >= WIELANDT_FLOOR { 0 } else { 2 })
        }
    }
}
