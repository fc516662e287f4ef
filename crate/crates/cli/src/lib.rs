//! Command-line front end: layered configuration and the experiment subcommands.

pub mod commands;
pub mod config;

use clap::{Args, Parser, Subcommand};

use crate::commands::CliError;
use crate::config::{ConfigError, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "penalty-nse", version, about = "Penalty Navier-Stokes solver with adaptive elementwise penalty")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Divergence convergence study on the Green-Taylor vortex.
    Convergence(Flags),
    /// Flow between offset cylinders, adaptive versus constant penalty.
    Offset(Flags),
    /// Sharp-transition forcing, adaptive versus constant timestep.
    Sharp(Flags),
    /// Single run of any problem.
    Run {
        #[arg(long)]
        problem: Option<String>,
        #[command(flatten)]
        flags: Flags,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Flat key = value config file.
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    #[arg(long)]
    pub mesh: Option<String>,
    #[arg(long)]
    pub tol: Option<String>,
    #[arg(long)]
    pub dt: Option<String>,
    #[arg(long)]
    pub ttol: Option<String>,
    /// constant or adaptive
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long = "final-time")]
    pub final_time: Option<String>,
    /// Serial factorization for bitwise-reproducible output.
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub threads: Option<String>,
}

impl Flags {
    pub fn pairs(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut push = |k: &str, v: &Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v.clone()));
            }
        };
        push("mesh", &self.mesh);
        push("tol", &self.tol);
        push("dt", &self.dt);
        push("ttol", &self.ttol);
        push("mode", &self.mode);
        push("final_time", &self.final_time);
        push("out", &self.out);
        push("threads", &self.threads);
        if self.deterministic {
            out.push(("deterministic".into(), "true".into()));
        }
        out
    }

    pub fn resolve(&self, problem: Option<&str>, extra: &[(String, String)]) -> Result<RunConfig, ConfigError> {
        let text = match &self.config {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.clone(), source })?),
            None => None,
        };
        let mut pairs = extra.to_vec();
        pairs.extend(self.pairs());
        RunConfig::resolve(problem, text.as_deref(), &pairs)
    }
}

fn apply_runtime(cfg: &RunConfig) {
    penalty_nse::sparse::set_deterministic(cfg.deterministic);
    if let Some(n) = cfg.threads {
        // Fails only if the pool was already built, in which case the existing one is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Runs a parsed command line.
pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let (flags, problem, extra) = match &cli.command {
        Command::Convergence(f) => (f, Some("green_taylor".to_string()), vec![]),
        Command::Offset(f) => (f, Some("offset_cylinders".to_string()), vec![]),
        Command::Sharp(f) => (f, Some("sharp_transition".to_string()), vec![]),
        Command::Run { problem, flags } => {
            let extra = problem.iter().map(|p| ("problem".to_string(), p.clone())).collect();
            (flags, None, extra)
        }
    };
    let cfg = flags.resolve(problem.as_deref(), &extra)?;
    apply_runtime(&cfg);
    match &cli.command {
        Command::Convergence(_) => commands::convergence(&cfg).map(|_| ()),
        Command::Offset(_) => commands::offset(&cfg).map(|_| ()),
        Command::Sharp(_) => commands::sharp(&cfg).map(|_| ()),
        Command::Run { .. } => commands::generic(&cfg).map(|_| ()),
    }
}
