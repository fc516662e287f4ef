//! Flat `key = value` run configuration.
//!
//! Values come from the named problem's defaults, then the config file, then command-line
//! flags, each layer overriding the previous one. Lines starting with `#` are comments.
//!
//! | key | meaning |
//! |---|---|
//! | `problem` | `green_taylor`, `offset_cylinders`, `sharp_transition`, `smooth_manufactured` |
//! | `mesh` | mesh file (default: problem mesh inside the mesh directory) |
//! | `out` | output directory |
//! | `mode` | `constant` or `adaptive` timestep |
//! | `convection` | `lagged` or `extrapolated` |
//! | `filter` | `true` / `false` |
//! | `tol`, `tols` | divergence tolerance; comma-separated list for the convergence study |
//! | `eps_min`, `eps_max` | penalty bounds |
//! | `fixed_eps` | constant penalty instead of adaptation |
//! | `nu`, `dt`, `final_time` | viscosity, (initial) timestep, end time |
//! | `ttol`, `ttol_min`, `dt_min`, `dt_max`, `max_retry` | timestep controller |
//! | `deterministic`, `threads`, `seed` | reproducibility controls |

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use penalty_nse::penalty::PenaltyConfig;
use penalty_nse::problems::{self, Problem, GREEN_TAYLOR_TOLS};
use penalty_nse::stepper::{Convection, SolverConfig, StepMode, TimeControl};
use penalty_nse::FemError;
use thiserror::Error;

/// Environment variable naming the directory that holds the bundled meshes.
pub const MESH_DIR_ENV: &str = "PENALTY_NSE_MESH_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: expected `key = value`")]
    Malformed { line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue { key: String, value: String, reason: String },
    #[error("unknown problem `{0}`")]
    UnknownProblem(String),
    #[error("config selects problem `{found}` but the subcommand runs `{expected}`")]
    ProblemConflict { expected: String, found: String },
    #[error("mesh file {0} not found")]
    MissingMesh(PathBuf),
    #[error("{0}")]
    Conflict(String),
    #[error(transparent)]
    Invalid(#[from] FemError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Constant,
    Adaptive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: String,
    pub mesh: PathBuf,
    pub out: PathBuf,
    pub mode: Mode,
    pub convection: Convection,
    pub filter: bool,
    pub tol: f64,
    pub tols: Vec<f64>,
    pub eps_min: f64,
    pub eps_max: f64,
    pub fixed_eps: Option<f64>,
    pub nu: f64,
    pub dt: f64,
    pub final_time: f64,
    pub ttol: f64,
    pub ttol_min: Option<f64>,
    pub dt_min: f64,
    pub dt_max: f64,
    pub max_retry: usize,
    pub deterministic: bool,
    pub threads: Option<usize>,
    pub seed: u64,
}

pub fn mesh_dir() -> PathBuf {
    std::env::var_os(MESH_DIR_ENV).map_or_else(|| PathBuf::from("meshes"), PathBuf::from)
}

/// Splits config text into `(key, value, line)` triples.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String, usize)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Malformed { line: i + 1 })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::Malformed { line: i + 1 });
        }
        out.push((k.to_string(), v.to_string(), i + 1));
    }
    Ok(out)
}

fn invalid(key: &str, value: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue { key: key.into(), value: value.into(), reason: reason.into() }
}

fn positive(key: &str, value: &str) -> Result<f64, ConfigError> {
    let v: f64 = value.parse().map_err(|_| invalid(key, value, "not a number"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(key, value, "must be positive"))
    }
}

fn boolean(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(invalid(key, value, "expected true or false")),
    }
}

fn count(key: &str, value: &str) -> Result<usize, ConfigError> {
    value.parse().map_err(|_| invalid(key, value, "expected a non-negative integer"))
}

impl RunConfig {
    /// Defaults of a named problem.
    pub fn defaults(problem: &str) -> Result<Self, ConfigError> {
        let p = problems::by_name(problem).ok_or_else(|| ConfigError::UnknownProblem(problem.into()))?;
        let c = &p.config;
        let (mode, tc) = match c.step_mode {
            StepMode::Adaptive(tc) => (Mode::Adaptive, tc),
            StepMode::Constant => (Mode::Constant, problems::sharp_time_control()),
        };
        Ok(Self {
            problem: p.name.clone(),
            mesh: mesh_dir().join(&p.mesh_file),
            out: PathBuf::from("out"),
            mode,
            convection: c.convection,
            filter: c.filter,
            tol: c.penalty.tol,
            tols: GREEN_TAYLOR_TOLS.to_vec(),
            eps_min: c.penalty.eps_min,
            eps_max: c.penalty.eps_max,
            fixed_eps: c.fixed_penalty,
            nu: c.nu,
            dt: c.dt,
            final_time: c.final_time,
            ttol: tc.ttol,
            ttol_min: None,
            dt_min: tc.dt_min,
            dt_max: tc.dt_max,
            max_retry: tc.max_retry,
            deterministic: false,
            threads: None,
            seed: 0,
        })
    }

    /// Applies one key. `problem` is handled by the caller.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "problem" => {
                if value != self.problem {
                    return Err(ConfigError::ProblemConflict { expected: self.problem.clone(), found: value.into() });
                }
            }
            "mesh" => self.mesh = PathBuf::from(value),
            "out" => self.out = PathBuf::from(value),
            "mode" => {
                self.mode = match value {
                    "constant" => Mode::Constant,
                    "adaptive" => Mode::Adaptive,
                    _ => return Err(invalid(key, value, "expected constant or adaptive")),
                }
            }
            "convection" => {
                self.convection = match value {
                    "lagged" => Convection::Lagged,
                    "extrapolated" => Convection::Extrapolated,
                    _ => return Err(invalid(key, value, "expected lagged or extrapolated")),
                }
            }
            "filter" => self.filter = boolean(key, value)?,
            "tol" => self.tol = positive(key, value)?,
            "tols" => {
                let list = value
                    .split(',')
                    .map(|s| positive(key, s.trim()))
                    .collect::<Result<Vec<_>, _>>()?;
                if list.is_empty() {
                    return Err(invalid(key, value, "empty list"));
                }
                self.tols = list;
            }
            "eps_min" => self.eps_min = positive(key, value)?,
            "eps_max" => self.eps_max = positive(key, value)?,
            "fixed_eps" => self.fixed_eps = Some(positive(key, value)?),
            "nu" => self.nu = positive(key, value)?,
            "dt" => self.dt = positive(key, value)?,
            "final_time" => self.final_time = positive(key, value)?,
            "ttol" => self.ttol = positive(key, value)?,
            "ttol_min" => self.ttol_min = Some(positive(key, value)?),
            "dt_min" => self.dt_min = positive(key, value)?,
            "dt_max" => self.dt_max = positive(key, value)?,
            "max_retry" => self.max_retry = count(key, value)?,
            "deterministic" => self.deterministic = boolean(key, value)?,
            "threads" => {
                let n = count(key, value)?;
                if n == 0 {
                    return Err(invalid(key, value, "must be at least 1"));
                }
                self.threads = Some(n);
            }
            "seed" => self.seed = value.parse().map_err(|_| invalid(key, value, "expected an integer"))?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Builds the configuration from layered sources.
    ///
    /// `problem` fixes the problem (subcommands); otherwise it is taken from the flags, then
    /// the file, then defaults to the Green–Taylor problem.
    pub fn resolve(
        problem: Option<&str>,
        file_text: Option<&str>,
        flags: &[(String, String)],
    ) -> Result<Self, ConfigError> {
        let file = match file_text {
            Some(t) => parse_pairs(t)?,
            None => Vec::new(),
        };
        let lookup = |pairs: &mut dyn Iterator<Item = (&str, &str)>| {
            pairs.filter(|(k, _)| *k == "problem").map(|(_, v)| v.to_string()).last()
        };
        let from_flags = lookup(&mut flags.iter().map(|(k, v)| (k.as_str(), v.as_str())));
        let from_file = lookup(&mut file.iter().map(|(k, v, _)| (k.as_str(), v.as_str())));
        let name = problem
            .map(str::to_string)
            .or(from_flags)
            .or(from_file)
            .unwrap_or_else(|| "green_taylor".into());
        let mut cfg = Self::defaults(&name)?;
        let mut explicit_conv = None;
        let mut explicit_filter = None;
        for (k, v) in file.iter().map(|(k, v, _)| (k, v)).chain(flags.iter().map(|(k, v)| (k, v))) {
            cfg.set(k, v)?;
            match k.as_str() {
                "convection" => explicit_conv = Some(cfg.convection),
                "filter" => explicit_filter = Some(cfg.filter),
                _ => {}
            }
        }
        if cfg.mode == Mode::Adaptive {
            if explicit_conv == Some(Convection::Lagged) || explicit_filter == Some(false) {
                return Err(ConfigError::Conflict(
                    "adaptive timestepping needs extrapolated convection and the time filter".into(),
                ));
            }
            cfg.convection = Convection::Extrapolated;
            cfg.filter = true;
        }
        cfg.solver_config()?;
        Ok(cfg)
    }

    pub fn problem(&self) -> Problem {
        let mut p = problems::by_name(&self.problem).expect("problem name validated on construction");
        p.config = self.solver_config().expect("configuration validated on construction");
        if self.nu != problems::by_name(&self.problem).unwrap().config.nu {
            p = rebuild_forcing(p, self.nu);
        }
        p
    }

    pub fn solver_config(&self) -> Result<SolverConfig, ConfigError> {
        let step_mode = match self.mode {
            Mode::Constant => StepMode::Constant,
            Mode::Adaptive => StepMode::Adaptive(self.time_control()),
        };
        let cfg = SolverConfig {
            nu: self.nu,
            dt: self.dt,
            final_time: self.final_time,
            convection: self.convection,
            filter: self.filter,
            step_mode,
            penalty: PenaltyConfig { tol: self.tol, eps_min: self.eps_min, eps_max: self.eps_max },
            fixed_penalty: self.fixed_eps,
            compute_errors: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn time_control(&self) -> TimeControl {
        TimeControl {
            ttol: self.ttol,
            ttol_min: self.ttol_min.unwrap_or(self.ttol / 10.0),
            max_retry: self.max_retry,
            dt_min: self.dt_min,
            dt_max: self.dt_max,
        }
    }

    pub fn check_mesh(&self) -> Result<(), ConfigError> {
        if self.mesh.is_file() {
            Ok(())
        } else {
            Err(ConfigError::MissingMesh(self.mesh.clone()))
        }
    }

    /// `key = value` text that [`RunConfig::resolve`] maps back to this configuration.
    pub fn to_text(&self) -> String {
        let f = |v: f64| format!("{v:?}");
        let mut s = String::new();
        let _ = writeln!(s, "problem = {}", self.problem);
        let _ = writeln!(s, "mesh = {}", self.mesh.display());
        let _ = writeln!(s, "out = {}", self.out.display());
        let _ = writeln!(s, "mode = {}", if self.mode == Mode::Adaptive { "adaptive" } else { "constant" });
        let conv = if self.convection == Convection::Lagged { "lagged" } else { "extrapolated" };
        let _ = writeln!(s, "convection = {conv}");
        let _ = writeln!(s, "filter = {}", self.filter);
        let _ = writeln!(s, "tol = {}", f(self.tol));
        let _ = writeln!(s, "tols = {}", self.tols.iter().map(|v| f(*v)).collect::<Vec<_>>().join(","));
        let _ = writeln!(s, "eps_min = {}", f(self.eps_min));
        let _ = writeln!(s, "eps_max = {}", f(self.eps_max));
        if let Some(e) = self.fixed_eps {
            let _ = writeln!(s, "fixed_eps = {}", f(e));
        }
        let _ = writeln!(s, "nu = {}", f(self.nu));
        let _ = writeln!(s, "dt = {}", f(self.dt));
        let _ = writeln!(s, "final_time = {}", f(self.final_time));
        let _ = writeln!(s, "ttol = {}", f(self.ttol));
        if let Some(v) = self.ttol_min {
            let _ = writeln!(s, "ttol_min = {}", f(v));
        }
        let _ = writeln!(s, "dt_min = {}", f(self.dt_min));
        let _ = writeln!(s, "dt_max = {}", f(self.dt_max));
        let _ = writeln!(s, "max_retry = {}", self.max_retry);
        let _ = writeln!(s, "deterministic = {}", self.deterministic);
        if let Some(n) = self.threads {
            let _ = writeln!(s, "threads = {n}");
        }
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }

    pub fn write_echo(&self, dir: &Path) -> std::io::Result<PathBuf> {
        let path = dir.join("config.echo");
        std::fs::write(&path, self.to_text())?;
        Ok(path)
    }
}

/// Manufactured forcings depend on the viscosity; rebuild them when it is overridden.
fn rebuild_forcing(mut p: Problem, nu: f64) -> Problem {
    match p.name.as_str() {
        "green_taylor" => p.forcing = Some(problems::green_taylor_forcing(nu)),
        "sharp_transition" => p.forcing = Some(problems::sharp_forcing(nu)),
        "smooth_manufactured" => p.forcing = Some(problems::sharp_manufactured_forcing(nu)),
        _ => {}
    }
    p
}
