//! Experiment subcommands, each a thin composition over library calls.

use std::path::{Path, PathBuf};

use log::info;
use penalty_nse::mesh::{load_msh, TriMesh};
use penalty_nse::problems::{sharp_signal, Problem};
use penalty_nse::report::{convergence_table, fmt_f64, write_convergence, ConvergenceRow, RunSummary, StepRow, STEP_HEADER};
use penalty_nse::stepper::{Convection, RunResult, Simulation, StepMode};
use penalty_nse::{MeshError, RunError};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot load mesh: {0}")]
    Mesh(#[from] MeshError),
    #[error("run failed: {0}")]
    Run(#[from] RunError),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Mesh(_) => 2,
            CliError::Run(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

fn prepare(cfg: &RunConfig) -> Result<TriMesh, CliError> {
    cfg.check_mesh()?;
    let mesh = load_msh(&cfg.mesh)?;
    std::fs::create_dir_all(&cfg.out)?;
    cfg.write_echo(&cfg.out)?;
    info!(
        "{}: {} vertices, {} triangles from {}",
        cfg.problem,
        mesh.n_vertices(),
        mesh.n_triangles(),
        cfg.mesh.display()
    );
    Ok(mesh)
}

/// Writes the per-step series, with an extra column computed from `t` when given.
pub fn write_series(path: &Path, rows: &[StepRow], extra: Option<(&str, &dyn Fn(f64) -> f64)>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    let mut header: Vec<&str> = STEP_HEADER.to_vec();
    if let Some((name, _)) = extra {
        header.push(name);
    }
    w.write_record(&header).map_err(csv_io)?;
    for r in rows {
        let mut rec = r.to_record();
        if let Some((_, f)) = extra {
            rec.push(fmt_f64(f(r.t)));
        }
        w.write_record(&rec).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> CliError {
    CliError::Run(RunError::Csv(e))
}

pub fn describe(label: &str, s: &RunSummary) -> String {
    let mut line = format!(
        "{label}: steps={} rejected={} forced={} max_div={:e} div(T)={:e} eps_ave(T)={:e}",
        s.steps, s.rejected, s.forced, s.max_div, s.final_div, s.eps_ave_final
    );
    if let Some(e) = s.max_l2_error {
        line.push_str(&format!(" max_l2_error={e:e}"));
    }
    if let Some(e) = s.max_t_est {
        line.push_str(&format!(" max_t_est={e:e} min_k={}", s.min_k));
    }
    line
}

fn run(mesh: &TriMesh, problem: &Problem) -> Result<RunResult, CliError> {
    Ok(Simulation::new(mesh, problem, problem.config.clone())?.run()?)
}

/// Green–Taylor sweep over the configured tolerances.
pub fn convergence(cfg: &RunConfig) -> Result<Vec<ConvergenceRow>, CliError> {
    let mesh = prepare(cfg)?;
    let mut runs = Vec::new();
    for &tol in &cfg.tols {
        let mut c = cfg.clone();
        c.tol = tol;
        let problem = c.problem();
        let result = run(&mesh, &problem)?;
        write_series(&cfg.out.join(format!("{}_tol{tol:e}.csv", cfg.problem)), &result.rows, None)?;
        println!("{}", describe(&format!("TOL={tol:e}"), &result.summary));
        runs.push((tol, result.summary));
    }
    let table = convergence_table(&runs);
    let file = std::fs::File::create(cfg.out.join("convergence.csv"))?;
    write_convergence(&table, file)?;
    Ok(table)
}

/// Adaptive-penalty run next to a constant-penalty run with `eps = dt`.
pub fn offset(cfg: &RunConfig) -> Result<(RunSummary, RunSummary), CliError> {
    let mesh = prepare(cfg)?;
    let adaptive = run(&mesh, &cfg.problem())?;
    write_series(&cfg.out.join("offset_adaptive.csv"), &adaptive.rows, None)?;
    println!("{}", describe("adaptive eps", &adaptive.summary));

    let mut c = cfg.clone();
    c.fixed_eps = Some(cfg.dt);
    let constant = run(&mesh, &c.problem())?;
    write_series(&cfg.out.join("offset_constant_eps.csv"), &constant.rows, None)?;
    println!("{}", describe("constant eps", &constant.summary));
    Ok((adaptive.summary, constant.summary))
}

/// Adaptive-timestep run next to a constant-timestep run, both filtered.
pub fn sharp(cfg: &RunConfig) -> Result<(RunSummary, RunSummary), CliError> {
    let mesh = prepare(cfg)?;
    let signal: &dyn Fn(f64) -> f64 = &sharp_signal;
    let mut a = cfg.problem();
    a.config.step_mode = StepMode::Adaptive(cfg.time_control());
    a.config.convection = Convection::Extrapolated;
    a.config.filter = true;
    let adaptive = run(&mesh, &a)?;
    write_series(&cfg.out.join("sharp_adaptive.csv"), &adaptive.rows, Some(("g", signal)))?;
    println!("{}", describe("adaptive step", &adaptive.summary));

    let mut c = cfg.problem();
    c.config.step_mode = StepMode::Constant;
    let constant = run(&mesh, &c)?;
    write_series(&cfg.out.join("sharp_constant.csv"), &constant.rows, Some(("g", signal)))?;
    println!("{}", describe("constant step", &constant.summary));
    Ok((adaptive.summary, constant.summary))
}

/// Single run of the configured problem.
pub fn generic(cfg: &RunConfig) -> Result<(PathBuf, RunSummary), CliError> {
    let mesh = prepare(cfg)?;
    let result = run(&mesh, &cfg.problem())?;
    let path = cfg.out.join(format!("{}.csv", cfg.problem));
    write_series(&path, &result.rows, None)?;
    println!("{}", describe(&cfg.problem, &result.summary));
    Ok((path, result.summary))
}
