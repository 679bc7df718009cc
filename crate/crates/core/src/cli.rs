//! `copmix simulate|fit|replicate --config <path> [--key value ...]`
//!
//! Configuration is a flat `key = value` file with `#` comments. Every key
//! can be overridden with `--key value`; flags win over `COPMIX_SEED`, which
//! wins over the file. Each run writes `manifest.json` with the resolved
//! configuration.
//!
//! Exit codes: 0 success, 2 bad input or unwritable output, 3 aborted fit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;

use crate::copula::{CopulaParam, Fgm};
use crate::engine::{FitConfig, FitReport, MixtureState, Model, StateSnapshot};
use crate::init::{init_state_with, BandwidthChoice, KmeansResult};
use crate::kernel::SmootherConfig;
use crate::sim::{
    run_replications, sample_mixture, write_rows_csv, Family, MarginalSpec, ReplicationOptions, SimConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_ABORTED: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Simulate,
    Fit,
    Replicate,
}

impl std::str::FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "simulate" => Ok(Command::Simulate),
            "fit" => Ok(Command::Fit),
            "replicate" => Ok(Command::Replicate),
            other => Err(format!(
                "unknown command `{other}` (expected simulate, fit or replicate)"
            )),
        }
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub out_dir: PathBuf,
    pub data: Option<PathBuf>,
    pub init_state: Option<PathBuf>,
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub pi: Vec<f64>,
    pub thetas: Vec<f64>,
    pub marginals: Vec<Vec<MarginalSpec>>,
    pub iters: usize,
    pub precision: f64,
    pub grid_size: usize,
    pub log_floor: f64,
    pub window: f64,
    pub panels: usize,
    pub bound_eps: f64,
    pub kmeans_max_iter: usize,
    pub refresh_weights_before_theta: bool,
    pub estimate_theta: bool,
    pub n_reps: usize,
    pub workers: usize,
}

pub const KEYS: &[&str] = &[
    "out_dir",
    "data",
    "init_state",
    "n",
    "k",
    "seed",
    "pi",
    "thetas",
    "marginals",
    "iters",
    "precision",
    "grid_size",
    "log_floor",
    "window",
    "panels",
    "bound_eps",
    "kmeans_max_iter",
    "refresh_weights_before_theta",
    "estimate_theta",
    "n_reps",
    "workers",
];

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `key = value`", lineno + 1))?;
        out.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(out)
}

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("bad number `{v}`: {e}")))
        .collect()
}

/// `family:mu:sigma` entries, `,` between dimensions, `;` between components.
fn parse_marginals(s: &str) -> Result<Vec<Vec<MarginalSpec>>, String> {
    s.split(';')
        .map(|comp| {
            comp.split(',')
                .map(|entry| {
                    let parts: Vec<&str> = entry.trim().split(':').collect();
                    if parts.len() != 3 {
                        return Err(format!("marginal `{entry}` is not family:mu:sigma"));
                    }
                    let family = match parts[0].to_ascii_lowercase().as_str() {
                        "normal" | "n" => Family::Normal,
                        "laplace" | "l" => Family::Laplace,
                        f => return Err(format!("unknown family `{f}`")),
                    };
                    let num = |v: &str| v.parse::<f64>().map_err(|e| format!("bad number `{v}`: {e}"));
                    MarginalSpec::new(family, num(parts[1])?, num(parts[2])?).map_err(|e| e.to_string())
                })
                .collect()
        })
        .collect()
}

fn format_marginals(m: &[Vec<MarginalSpec>]) -> String {
    m.iter()
        .map(|row| {
            row.iter()
                .map(|s| {
                    let f = match s.family {
                        Family::Normal => "normal",
                        Family::Laplace => "laplace",
                    };
                    format!("{f}:{}:{}", s.mu, s.sigma)
                })
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join(";")
}

impl RunConfig {
    /// Defaults reproduce the reference three-cluster study.
    pub fn defaults(command: Command) -> Self {
        let reference = SimConfig::reference(300, 1);
        RunConfig {
            command,
            out_dir: PathBuf::from("out"),
            data: None,
            init_state: None,
            n: reference.n,
            k: reference.components(),
            seed: reference.seed,
            pi: reference.pi.clone(),
            thetas: reference.thetas.iter().map(|t| t.get()).collect(),
            marginals: reference.marginals.clone(),
            iters: 50,
            precision: 1e-5,
            grid_size: crate::grid::DEFAULT_GRID_POINTS,
            log_floor: 1e-5,
            window: 1.96,
            panels: 64,
            bound_eps: 1e-3,
            kmeans_max_iter: crate::init::DEFAULT_KMEANS_MAX_ITER,
            refresh_weights_before_theta: false,
            estimate_theta: true,
            n_reps: 100,
            workers: 0,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            v.parse().map_err(|e| format!("`{key}`: cannot parse `{v}`: {e}"))
        }
        match key {
            "out_dir" => self.out_dir = PathBuf::from(value),
            "data" => self.data = Some(PathBuf::from(value)),
            "init_state" => self.init_state = Some(PathBuf::from(value)),
            "n" => self.n = num(key, value)?,
            "k" => self.k = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "pi" => self.pi = parse_list(value)?,
            "thetas" => self.thetas = parse_list(value)?,
            "marginals" => self.marginals = parse_marginals(value)?,
            "iters" => self.iters = num(key, value)?,
            "precision" => self.precision = num(key, value)?,
            "grid_size" => self.grid_size = num(key, value)?,
            "log_floor" => self.log_floor = num(key, value)?,
            "window" => self.window = num(key, value)?,
            "panels" => self.panels = num(key, value)?,
            "bound_eps" => self.bound_eps = num(key, value)?,
            "kmeans_max_iter" => self.kmeans_max_iter = num(key, value)?,
            "refresh_weights_before_theta" => self.refresh_weights_before_theta = num(key, value)?,
            "estimate_theta" => self.estimate_theta = num(key, value)?,
            "n_reps" => self.n_reps = num(key, value)?,
            "workers" => self.workers = num(key, value)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Resolves file, environment and flag settings, in that order.
    pub fn resolve(
        command: Command,
        file: Option<&BTreeMap<String, String>>,
        env_seed: Option<&str>,
        flags: &[(String, String)],
    ) -> Result<Self, String> {
        let mut cfg = RunConfig::defaults(command);
        for (k, v) in file.into_iter().flatten() {
            cfg.set(k, v)?;
        }
        if let Some(seed) = env_seed {
            cfg.set("seed", seed)?;
        }
        for (k, v) in flags {
            cfg.set(k, v)?;
        }
        if cfg.workers == 0 {
            cfg.workers = std::thread::available_parallelism().map_or(1, |n| n.get());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), String> {
        if self.k == 0 {
            return Err("k must be positive".into());
        }
        if self.iters == 0 {
            return Err("iters must be positive".into());
        }
        if self.precision.is_nan() || self.precision < 0.0 {
            return Err("precision must be non-negative".into());
        }
        if self.command != Command::Fit {
            self.sim_config()
                .map_err(|e| e.to_string())?
                .validate()
                .map_err(|e| e.to_string())?;
        }
        if self.command == Command::Fit && self.data.is_none() {
            return Err("`fit` needs `data` (path to an x1,x2 CSV)".into());
        }
        if self.command == Command::Replicate && self.n_reps == 0 {
            return Err("n_reps must be positive".into());
        }
        Ok(())
    }

    pub fn sim_config(&self) -> crate::Result<SimConfig> {
        if self.pi.len() != self.k || self.thetas.len() != self.k || self.marginals.len() != self.k {
            return Err(crate::Error::InvalidInput(format!(
                "k = {} but pi, thetas and marginals have {}, {} and {} entries",
                self.k,
                self.pi.len(),
                self.thetas.len(),
                self.marginals.len()
            )));
        }
        Ok(SimConfig {
            n: self.n,
            pi: self.pi.clone(),
            thetas: self
                .thetas
                .iter()
                .map(|t| CopulaParam::new(*t))
                .collect::<crate::Result<_>>()?,
            marginals: self.marginals.clone(),
            seed: self.seed,
        })
    }

    pub fn smoother(&self) -> SmootherConfig {
        SmootherConfig {
            window: self.window,
            log_floor: self.log_floor,
            panels: self.panels,
        }
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            iters: self.iters,
            precision: self.precision,
            refresh_weights_before_theta: self.refresh_weights_before_theta,
            estimate_theta: self.estimate_theta,
        }
    }

    pub fn model(&self) -> crate::Result<Model> {
        Model::new(
            Fgm {
                bound_eps: self.bound_eps,
            },
            self.smoother(),
        )
    }

    /// The manifest: every key in the flat format, in a fixed order.
    pub fn manifest(&self) -> serde_json::Value {
        let fmt_list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        serde_json::json!({
            "command": self.command,
            "config": {
                "out_dir": self.out_dir.display().to_string(),
                "data": path(&self.data),
                "init_state": path(&self.init_state),
                "n": self.n,
                "k": self.k,
                "seed": self.seed,
                "pi": fmt_list(&self.pi),
                "thetas": fmt_list(&self.thetas),
                "marginals": format_marginals(&self.marginals),
                "iters": self.iters,
                "precision": self.precision,
                "grid_size": self.grid_size,
                "log_floor": self.log_floor,
                "window": self.window,
                "panels": self.panels,
                "bound_eps": self.bound_eps,
                "kmeans_max_iter": self.kmeans_max_iter,
                "refresh_weights_before_theta": self.refresh_weights_before_theta,
                "estimate_theta": self.estimate_theta,
                "n_reps": self.n_reps,
                "workers": self.workers,
            }
        })
    }
}

/// A CLI failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        CliError::input(e.to_string())
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::input(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::input(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn prepare_out_dir(cfg: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
    write_json(&cfg.out_dir.join("manifest.json"), &cfg.manifest())
}

/// Reads an `x1,..,xd` CSV with a header row.
pub fn read_data_csv(path: &Path) -> Result<Array2<f64>, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| CliError::input(format!("{}: empty file", path.display())))?;
    let d = header.split(',').count();
    let mut values = Vec::new();
    let mut n = 0;
    for (i, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::input(format!("{}: row {}: {e}", path.display(), i + 2)))?;
        if row.len() != d || row.iter().any(|v| !v.is_finite()) {
            return Err(CliError::input(format!(
                "{}: row {} is malformed",
                path.display(),
                i + 2
            )));
        }
        values.extend(row);
        n += 1;
    }
    if n == 0 {
        return Err(CliError::input(format!("{}: no data rows", path.display())));
    }
    Array2::from_shape_vec((n, d), values).map_err(|e| CliError::input(e.to_string()))
}

pub fn data_csv(data: &Array2<f64>) -> String {
    let mut s = (1..=data.ncols())
        .map(|j| format!("x{j}"))
        .collect::<Vec<_>>()
        .join(",");
    s.push('\n');
    for row in data.rows() {
        let fields: Vec<String> = row.iter().map(f64::to_string).collect();
        s.push_str(&fields.join(","));
        s.push('\n');
    }
    s
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<(), CliError> {
    prepare_out_dir(cfg)?;
    let sample = sample_mixture(&cfg.sim_config()?)?;
    write_file(&cfg.out_dir.join("data.csv"), data_csv(&sample.data).as_bytes())?;
    let mut labels = String::from("label\n");
    for l in &sample.labels {
        let _ = writeln!(labels, "{}", l + 1);
    }
    write_file(&cfg.out_dir.join("labels.csv"), labels.as_bytes())
}

#[derive(Serialize)]
struct FitOutput<'a> {
    #[serde(flatten)]
    report: &'a FitReport,
    kmeans: Option<&'a KmeansResult>,
    bandwidths: Option<&'a Vec<Vec<BandwidthChoice>>>,
}

pub fn trajectory_csv(report: &FitReport) -> String {
    let mut s = String::from("iter,loglik,psi1,psi2,psi3\n");
    for (t, ll) in report.loglik_trajectory.iter().enumerate() {
        if t == 0 {
            let _ = writeln!(s, "0,{ll},,,");
        } else {
            let _ = writeln!(
                s,
                "{t},{ll},{},{},{}",
                report.psi1[t - 1],
                report.psi2[t - 1],
                report.psi3[t - 1]
            );
        }
    }
    s
}

/// Loads a state from a fit report (`final_state`) or a bare snapshot.
pub fn load_state(path: &Path, model: &Model) -> Result<MixtureState, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let snap = value.get("final_state").cloned().unwrap_or(value);
    let snap: StateSnapshot =
        serde_json::from_value(snap).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    Ok(MixtureState::from_snapshot(snap, model.smoother())?)
}

/// Returns whether the fit aborted.
pub fn cmd_fit(cfg: &RunConfig) -> Result<bool, CliError> {
    let data_path = cfg.data.as_ref().ok_or_else(|| CliError::input("missing `data`"))?;
    let data = read_data_csv(data_path)?;
    prepare_out_dir(cfg)?;
    let model = cfg.model()?;
    let (init, kmeans, bandwidths) = match &cfg.init_state {
        Some(path) => (load_state(path, &model)?, None, None),
        None => {
            let init = init_state_with(&model, data.view(), cfg.k, cfg.seed, cfg.grid_size, cfg.kmeans_max_iter)?;
            (init.state, Some(init.kmeans), Some(init.bandwidths))
        }
    };
    let report = model.fit_full(data.view(), &init, &cfg.fit_config())?;
    let out = FitOutput {
        report: &report,
        kmeans: kmeans.as_ref(),
        bandwidths: bandwidths.as_ref(),
    };
    write_json(&cfg.out_dir.join("report.json"), &out)?;
    write_file(&cfg.out_dir.join("trajectory.csv"), trajectory_csv(&report).as_bytes())?;
    report
        .final_state
        .marginals()
        .write_csvs(&cfg.out_dir)
        .map_err(io_err(&cfg.out_dir))?;
    Ok(report.aborted())
}

pub fn cmd_replicate(cfg: &RunConfig) -> Result<(), CliError> {
    prepare_out_dir(cfg)?;
    let opts = ReplicationOptions {
        fit: cfg.fit_config(),
        grid_size: cfg.grid_size,
        smoother: cfg.smoother(),
        bound_eps: cfg.bound_eps,
        kmeans_max_iter: cfg.kmeans_max_iter,
        workers: cfg.workers,
        keep_reports: false,
    };
    let outcome = run_replications(&cfg.sim_config()?, cfg.n_reps, &opts)?;
    write_json(&cfg.out_dir.join("replication_stats.json"), &outcome.stats)?;
    let path = cfg.out_dir.join("replications.csv");
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    let mut w = BufWriter::new(file);
    write_rows_csv(&outcome.rows, cfg.k, &mut w).map_err(io_err(&path))?;
    w.flush().map_err(io_err(&path))
}

const USAGE: &str = "usage: copmix simulate|fit|replicate [--config <path>] [--key value ...]";

/// Splits `args` (without the program name) into command, config path and
/// flag overrides.
/// Command, optional config path and `--key value` overrides.
pub type ParsedArgs = (Command, Option<PathBuf>, Vec<(String, String)>);

pub fn parse_args(args: &[String]) -> Result<ParsedArgs, String> {
    let (command, rest) = args.split_first().ok_or_else(|| USAGE.to_string())?;
    let command: Command = command.parse()?;
    let mut config = None;
    let mut flags = Vec::new();
    let mut it = rest.iter();
    while let Some(arg) = it.next() {
        let key = arg
            .strip_prefix("--")
            .ok_or_else(|| format!("unexpected argument `{arg}`\n{USAGE}"))?;
        let (key, value) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| format!("missing value for `--{key}`"))?;
                (key.to_string(), v.clone())
            }
        };
        if key == "config" {
            config = Some(PathBuf::from(value));
        } else if KEYS.contains(&key.as_str()) {
            flags.push((key, value));
        } else {
            return Err(format!("unknown option `--{key}`"));
        }
    }
    Ok((command, config, flags))
}

/// Runs the CLI and returns the process exit code.
pub fn run(args: &[String]) -> i32 {
    match run_inner(args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("copmix: {}", e.message);
            e.code
        }
    }
}

fn run_inner(args: &[String]) -> Result<i32, CliError> {
    let (command, config_path, flags) = parse_args(args).map_err(CliError::input)?;
    let file = match &config_path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            Some(parse_config_text(&text).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    let env_seed = std::env::var("COPMIX_SEED").ok();
    let cfg = RunConfig::resolve(command, file.as_ref(), env_seed.as_deref(), &flags).map_err(CliError::input)?;
    match command {
        Command::Simulate => cmd_simulate(&cfg).map(|_| EXIT_OK),
        Command::Fit => cmd_fit(&cfg).map(|aborted| if aborted { EXIT_ABORTED } else { EXIT_OK }),
        Command::Replicate => cmd_replicate(&cfg).map(|_| EXIT_OK),
    }
}
