//! Time integration: backward Euler with linearized convection, the optional two-step
//! time filter, and a variable-step controller driven by the filter's correction size.

use log::{debug, info, warn};

use crate::assembly::{Assembler, StepSystemSpec};
use crate::error::{FemError, RunError, SolveError};
use crate::fem::{interpolate_exact, DofLayout, VelocityField};
use crate::mesh::TriMesh;
use crate::penalty::{divergence_estimator, divergence_l4_power, recover_pressure, PenaltyConfig, PenaltyState};
use crate::problems::Problem;
use crate::report::{h1_seminorm_error, l2_error, pressure_l2_error, RunSummary, StepRow};
use crate::sparse::{CsrMatrix, SparseLu, BACKWARD_ERROR_LIMIT};

/// How the advecting velocity of the convection term is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convection {
    /// Previous solution.
    Lagged,
    /// Linear extrapolation from the last two solutions.
    Extrapolated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeControl {
    pub ttol: f64,
    pub ttol_min: f64,
    pub max_retry: usize,
    pub dt_min: f64,
    pub dt_max: f64,
}

impl TimeControl {
    pub fn validate(&self, dt: f64) -> Result<(), FemError> {
        if !(self.ttol_min > 0.0 && self.ttol_min < self.ttol && self.ttol.is_finite()) {
            return Err(FemError::InvalidParameter(format!(
                "need 0 < tTOLmin < tTOL, got {} and {}",
                self.ttol_min, self.ttol
            )));
        }
        if !(self.dt_min > 0.0 && self.dt_min <= dt && dt <= self.dt_max && self.dt_max.is_finite()) {
            return Err(FemError::InvalidParameter(format!(
                "need 0 < dt_min <= dt <= dt_max, got {} <= {} <= {}",
                self.dt_min, dt, self.dt_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepMode {
    Constant,
    Adaptive(TimeControl),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub nu: f64,
    /// Constant step, or the initial step of an adaptive run.
    pub dt: f64,
    pub final_time: f64,
    pub convection: Convection,
    pub filter: bool,
    pub step_mode: StepMode,
    pub penalty: PenaltyConfig,
    /// Use this penalty on every element and never adapt it.
    pub fixed_penalty: Option<f64>,
    /// Evaluate errors against the exact solution, when the problem has one.
    pub compute_errors: bool,
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), FemError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(FemError::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        positive("nu", self.nu)?;
        positive("dt", self.dt)?;
        positive("final time", self.final_time)?;
        self.penalty.validate()?;
        if let Some(e) = self.fixed_penalty {
            positive("fixed penalty", e)?;
        }
        if let StepMode::Adaptive(tc) = &self.step_mode {
            tc.validate(self.dt)?;
            if !self.filter || self.convection != Convection::Extrapolated {
                return Err(FemError::InvalidParameter(
                    "adaptive stepping requires extrapolated convection and the time filter".into(),
                ));
            }
        }
        Ok(())
    }
}

/// `u* = (1 + tau) u_n - tau u_{n-1}` with `tau = k_curr / k_prev`.
pub fn extrapolate(u_prev: &[f64], u_curr: &[f64], k_prev: f64, k_curr: f64) -> Vec<f64> {
    let tau = k_curr / k_prev;
    u_curr.iter().zip(u_prev).map(|(c, p)| (1.0 + tau) * c - tau * p).collect()
}

/// `alpha = tau (1 + tau) / (1 + 2 tau)`.
pub fn filter_alpha(k_prev: f64, k_curr: f64) -> f64 {
    let tau = k_curr / k_prev;
    tau * (1.0 + tau) / (1.0 + 2.0 * tau)
}

/// Weights of `(u1, u_n, u_{n-1})` in the variable-step second difference.
pub fn second_difference_weights(k_prev: f64, k_curr: f64) -> [f64; 3] {
    let s = k_prev + k_curr;
    [2.0 * k_prev / s, -2.0, 2.0 * k_curr / s]
}

/// Returns the filtered velocity `u1 - (alpha/2) D2` and `D2`.
pub fn time_filter(u1: &[f64], u_curr: &[f64], u_prev: &[f64], k_prev: f64, k_curr: f64) -> (Vec<f64>, Vec<f64>) {
    let [a, b, c] = second_difference_weights(k_prev, k_curr);
    let half_alpha = 0.5 * filter_alpha(k_prev, k_curr);
    let d2: Vec<f64> = u1
        .iter()
        .zip(u_curr)
        .zip(u_prev)
        .map(|((x, y), z)| a * x + b * y + c * z)
        .collect();
    let filtered = u1.iter().zip(&d2).map(|(x, d)| x - half_alpha * d).collect();
    (filtered, d2)
}

/// `(alpha/2) ||D2||` in the L² norm given by `mass`.
pub fn estimate_lte(d2: &[f64], k_prev: f64, k_curr: f64, mass: &CsrMatrix) -> f64 {
    0.5 * filter_alpha(k_prev, k_curr) * mass.bilinear(d2, d2).max(0.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepDecision {
    Accept { next_k: f64 },
    Retry { k: f64 },
    /// Above tolerance, but the retry limit or the step floor was reached.
    ForcedAccept { next_k: f64 },
}

/// Controller decision for an attempt of size `k` that has already been retried `retries` times.
pub fn propose_step(t_est: f64, k: f64, retries: usize, tc: &TimeControl) -> StepDecision {
    let ratio = (tc.ttol / t_est).sqrt();
    if t_est < tc.ttol_min {
        let grown = (0.9 * k * ratio).min(2.0 * k).max(0.5 * k);
        StepDecision::Accept { next_k: grown.min(tc.dt_max) }
    } else if t_est <= tc.ttol {
        StepDecision::Accept { next_k: k }
    } else if retries >= tc.max_retry || k <= tc.dt_min {
        StepDecision::ForcedAccept { next_k: k }
    } else {
        StepDecision::Retry { k: (0.9 * k * ratio).max(0.5 * k).max(tc.dt_min) }
    }
}

/// Output of a complete run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub rows: Vec<StepRow>,
    pub summary: RunSummary,
    pub final_field: VelocityField,
    pub penalty: PenaltyState,
}

/// A run in progress. Each [`Simulation::advance`] performs one accepted step.
pub struct Simulation<'m> {
    mesh: &'m TriMesh,
    problem: Problem,
    config: SolverConfig,
    asm: Assembler,
    lu: SparseLu,
    pub penalty: PenaltyState,
    u_prev: Option<VelocityField>,
    u_curr: VelocityField,
    k_prev: f64,
    next_k: f64,
    step: usize,
    n_constant: usize,
    l4_integral: f64,
    rows: Vec<StepRow>,
}

impl<'m> Simulation<'m> {
    pub fn new(mesh: &'m TriMesh, problem: &Problem, config: SolverConfig) -> Result<Self, RunError> {
        Self::with_initial(mesh, problem, config, None)
    }

    /// Starts from the given coefficients instead of interpolating the problem's initial data.
    /// Boundary entries are overwritten with the boundary data at t = 0 either way.
    pub fn with_initial(
        mesh: &'m TriMesh,
        problem: &Problem,
        config: SolverConfig,
        initial: Option<Vec<f64>>,
    ) -> Result<Self, RunError> {
        config.validate()?;
        let layout = DofLayout::new(mesh);
        let asm = Assembler::new(mesh, &layout)?;
        let lu = SparseLu::new(asm.pattern()).map_err(|source| RunError::Solve { step: 0, time: 0.0, source })?;
        let penalty = match config.fixed_penalty {
            Some(e) => PenaltyState::with_constant(mesh, config.penalty, e)?,
            None => PenaltyState::new(mesh, config.penalty)?,
        };
        let mut u0 = match initial {
            Some(c) => {
                if c.len() != layout.n_total() {
                    return Err(FemError::LayoutMismatch { expected: layout.n_total(), got: c.len() }.into());
                }
                VelocityField { coeffs: c, time: 0.0 }
            }
            None => {
                let init = problem.initial.clone();
                interpolate_exact(move |x, y, t| init(x, y, t), mesh, &layout, 0.0)
            }
        };
        let g = problem.boundary.clone();
        u0.impose_dirichlet(mesh, &layout, move |x, y, t| g(x, y, t));
        // Within 1e-9 of a whole number of steps counts as exact.
        let n_constant = ((config.final_time / config.dt) - 1e-9).ceil().max(1.0) as usize;
        let mut sim = Self {
            mesh,
            problem: problem.clone(),
            next_k: config.dt,
            config,
            asm,
            lu,
            penalty,
            u_prev: None,
            u_curr: u0,
            k_prev: 0.0,
            step: 0,
            n_constant,
            l4_integral: 0.0,
            rows: Vec::new(),
        };
        sim.penalty.est = divergence_estimator(&sim.u_curr, mesh, sim.asm.layout())?;
        let mut row = sim.diagnostics(0.0, None, None)?;
        row.lemma_checked = None;
        sim.rows.push(row);
        Ok(sim)
    }

    pub fn time(&self) -> f64 {
        self.u_curr.time
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.time() >= self.config.final_time
    }

    pub fn current(&self) -> &VelocityField {
        &self.u_curr
    }

    pub fn previous(&self) -> Option<&VelocityField> {
        self.u_prev.as_ref()
    }

    pub fn layout(&self) -> &DofLayout {
        self.asm.layout()
    }

    pub fn assembler(&self) -> &Assembler {
        &self.asm
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn rows(&self) -> &[StepRow] {
        &self.rows
    }

    /// Step size of the next attempt and its end time, clipped to the final time.
    fn plan(&self) -> (f64, f64) {
        let t = self.time();
        let end = self.config.final_time;
        match self.config.step_mode {
            StepMode::Constant => {
                let n = self.step + 1;
                let t_next = if n >= self.n_constant { end } else { (n as f64 * self.config.dt).min(end) };
                (t_next - t, t_next)
            }
            StepMode::Adaptive(_) => {
                let remaining = end - t;
                if self.next_k >= remaining - 1e-10 * end.max(1.0) {
                    (remaining, end)
                } else {
                    (self.next_k, t + self.next_k)
                }
            }
        }
    }

    fn solve(&self, k: f64, u_star: &[f64], t_next: f64) -> Result<Vec<f64>, RunError> {
        let forcing = self.problem.forcing.as_deref().map(|f| f as &(dyn Fn(f64, f64, f64) -> [f64; 2] + Sync));
        let spec = StepSystemSpec {
            nu: self.config.nu,
            k,
            u_star,
            u_n: &self.u_curr.coeffs,
            eps: &self.penalty.eps,
            forcing,
            t_next,
            boundary: &*self.problem.boundary,
        };
        let (a, b) = self.asm.build_step_system(self.mesh, &spec)?;
        let fail = |source| RunError::Solve { step: self.step + 1, time: t_next, source };
        let (x, report) = self.lu.solve(&a, &b).map_err(fail)?;
        if !report.success {
            // Tiny penalties make the system so stiff that a backward-stable solve cannot reach
            // the residual target in double precision. Accept those, reject anything worse.
            if !(report.backward_error <= BACKWARD_ERROR_LIMIT) {
                return Err(fail(SolveError::Residual(report.relative_residual)));
            }
            warn!(
                "step {} at t = {t_next}: relative residual {:e} above target, backward error {:e}",
                self.step + 1,
                report.relative_residual,
                report.backward_error
            );
        }
        Ok(x)
    }

    /// Performs one accepted step, including any rejected attempts before it.
    pub fn advance(&mut self) -> Result<(), RunError> {
        if self.is_finished() {
            return Ok(());
        }
        let (mut k, mut t_next) = self.plan();
        let mut retries = 0;
        let (u_next, u1, t_est, forced, next_k) = loop {
            let history = self.u_prev.as_ref();
            let u_star = match (history, self.config.convection) {
                (Some(prev), Convection::Extrapolated) => extrapolate(&prev.coeffs, &self.u_curr.coeffs, self.k_prev, k),
                _ => self.u_curr.coeffs.clone(),
            };
            let u1 = self.solve(k, &u_star, t_next)?;
            let Some(prev) = history else {
                break (u1.clone(), u1, None, false, self.config.dt);
            };
            let (filtered, d2) = time_filter(&u1, &self.u_curr.coeffs, &prev.coeffs, self.k_prev, k);
            let t_est = estimate_lte(&d2, self.k_prev, k, self.asm.mass());
            let mut u = VelocityField { coeffs: if self.config.filter { filtered } else { u1.clone() }, time: t_next };
            if self.config.filter {
                let g = self.problem.boundary.clone();
                u.impose_dirichlet(self.mesh, self.asm.layout(), move |x, y, t| g(x, y, t));
            }
            let coeffs = u.coeffs;
            match self.config.step_mode {
                StepMode::Constant => break (coeffs, u1, Some(t_est), false, self.config.dt),
                StepMode::Adaptive(tc) => match propose_step(t_est, k, retries, &tc) {
                    StepDecision::Accept { next_k } => break (coeffs, u1, Some(t_est), false, next_k),
                    StepDecision::ForcedAccept { next_k } => {
                        info!("step {} at t = {t_next}: forced acceptance with tEST = {t_est:e}, k = {k}", self.step + 1);
                        break (coeffs, u1, Some(t_est), true, next_k);
                    }
                    StepDecision::Retry { k: k_new } => {
                        debug!("step {} rejected: tEST = {t_est:e}, k {k} -> {k_new}", self.step + 1);
                        self.rows.push(StepRow {
                            step: self.step + 1,
                            t: t_next,
                            k,
                            accepted: false,
                            retries,
                            t_est: Some(t_est),
                            ..Default::default()
                        });
                        retries += 1;
                        k = k_new;
                        t_next = self.time() + k;
                    }
                },
            }
        };

        let u_new = VelocityField { coeffs: u_next, time: t_next };
        let diff: Vec<f64> = u_new.coeffs.iter().zip(&self.u_curr.coeffs).map(|(a, b)| a - b).collect();
        let ut_norm = self.asm.l2_norm(&diff) / k;
        self.u_prev = Some(std::mem::replace(&mut self.u_curr, u_new));
        self.k_prev = k;
        self.next_k = next_k;
        self.step += 1;

        // The penalty acts on the backward Euler solve, so that is what the estimator measures.
        // The filter mixes in older divergence the current penalties had no say in.
        let solved = VelocityField { coeffs: u1, time: t_next };
        self.penalty.est = divergence_estimator(&solved, self.mesh, self.asm.layout())?;
        let lemma = self.check_lemma()?;
        self.l4_integral += k * divergence_l4_power(&solved, self.mesh, self.asm.layout())?;
        let mut row = self.diagnostics(k, Some(ut_norm), Some(&solved))?;
        row.t_est = t_est;
        row.forced = forced;
        row.retries = retries;
        row.lemma_checked = Some(lemma);
        debug!(
            "step {} t = {} k = {k} div = {:e} eps_avg = {:e}",
            self.step,
            self.time(),
            row.div_norm.unwrap_or(f64::NAN),
            row.eps_avg.unwrap_or(f64::NAN)
        );
        self.rows.push(row);
        if self.config.fixed_penalty.is_none() {
            self.penalty.update();
        }
        Ok(())
    }

    /// When every element meets its budget, the global divergence must meet the summed budget.
    fn check_lemma(&self) -> Result<bool, RunError> {
        if !self.penalty.all_within_tolerance() {
            return Ok(false);
        }
        let div = self.penalty.divergence_norm();
        let bound = self.penalty.loctol.iter().sum::<f64>().sqrt();
        if div > bound {
            return Err(RunError::ToleranceLemma { step: self.step, div, bound });
        }
        Ok(true)
    }

    /// `solved` is the unfiltered solve of this step, which pressure recovery pairs with the penalties.
    fn diagnostics(&self, k: f64, ut_norm: Option<f64>, solved: Option<&VelocityField>) -> Result<StepRow, RunError> {
        let stats = self.penalty.eps_stats();
        let t = self.time();
        let mut row = StepRow {
            step: self.step,
            t,
            k,
            accepted: true,
            div_norm: Some(self.penalty.divergence_norm()),
            eps_min: Some(stats.min),
            eps_max: Some(stats.max),
            eps_avg: Some(stats.mean),
            loctol_violations: Some(self.penalty.violations()),
            u_norm: Some(self.asm.l2_norm(&self.u_curr.coeffs)),
            ut_norm,
            div_l4_integral: Some(self.l4_integral),
            ..Default::default()
        };
        if self.config.compute_errors {
            if let Some(ex) = &self.problem.exact {
                let layout = self.asm.layout();
                row.l2_error = Some(l2_error(&self.u_curr, &ex.velocity, t, self.mesh, layout)?);
                row.h1_error = Some(h1_seminorm_error(&self.u_curr, &ex.gradient, t, self.mesh, layout)?);
                let p = recover_pressure(solved.unwrap_or(&self.u_curr), &self.penalty.eps, self.mesh, layout)?;
                row.p_error = Some(pressure_l2_error(&p, &ex.pressure, t, self.mesh)?);
            }
        }
        Ok(row)
    }

    pub fn run(mut self) -> Result<RunResult, RunError> {
        while !self.is_finished() {
            self.advance()?;
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> RunResult {
        RunResult {
            summary: RunSummary::from_rows(&self.rows),
            rows: self.rows,
            final_field: self.u_curr,
            penalty: self.penalty,
        }
    }
}

/// Runs with a fixed timestep to the final time.
pub fn run_constant_step(mesh: &TriMesh, problem: &Problem, config: SolverConfig) -> Result<RunResult, RunError> {
    if config.step_mode != StepMode::Constant {
        return Err(FemError::InvalidParameter("expected constant-step configuration".into()).into());
    }
    Simulation::new(mesh, problem, config)?.run()
}

/// Runs with the variable-step controller to the final time.
pub fn run_adaptive_step(mesh: &TriMesh, problem: &Problem, config: SolverConfig) -> Result<RunResult, RunError> {
    if !matches!(config.step_mode, StepMode::Adaptive(_)) {
        return Err(FemError::InvalidParameter("expected adaptive-step configuration".into()).into());
    }
    Simulation::new(mesh, problem, config)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tc() -> TimeControl {
        TimeControl { ttol: 1e-4, ttol_min: 1e-5, max_retry: 10, dt_min: 1e-3, dt_max: 0.1 }
    }

    #[test]
    fn extrapolation_cases() {
        let u = extrapolate(&[1.0, 2.0], &[3.0, 5.0], 0.1, 0.1);
        assert_eq!(u, vec![5.0, 8.0]);
        assert_eq!(extrapolate(&[4.0], &[4.0], 0.3, 0.7), vec![4.0]);
        // u(t) = 1 + 2t sampled at t = 0.2, 0.5; predicted at 0.6
        let u = extrapolate(&[1.4], &[2.0], 0.3, 0.1);
        assert!((u[0] - 2.2).abs() < 1e-14);
    }

    #[test]
    fn filter_constants() {
        assert!((filter_alpha(0.1, 0.1) - 2.0 / 3.0).abs() < 1e-15);
        assert!((filter_alpha(0.1, 0.2) - 1.2).abs() < 1e-15);
        let w = second_difference_weights(0.1, 0.2);
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15 && w[1] == -2.0 && (w[2] - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn constant_step_filter_is_one_third() {
        let (f, d2) = time_filter(&[3.0], &[1.0], &[0.5], 0.2, 0.2);
        assert_eq!(d2, vec![3.0 - 2.0 + 0.5]);
        assert!((f[0] - (3.0 - (3.0 - 2.0 + 0.5) / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn filter_leaves_linear_data() {
        // u = 2 - t at t = 0.1, 0.4, 0.5
        let (f, d2) = time_filter(&[1.5], &[1.6], &[1.9], 0.3, 0.1);
        assert!(d2[0].abs() < 1e-15);
        assert!((f[0] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn lte_of_constant_field() {
        let mesh = TriMesh::rectangle(0.0, 1.0, 0.0, 1.0, 2, 2).unwrap();
        let layout = DofLayout::new(&mesh);
        let asm = Assembler::new(&mesh, &layout).unwrap();
        let d2: Vec<f64> = (0..layout.n_total()).map(|i| if i % 2 == 0 { 0.3 } else { 0.0 }).collect();
        assert!((estimate_lte(&d2, 0.1, 0.1, asm.mass()) - 0.1).abs() < 1e-14);
        assert_eq!(estimate_lte(&vec![0.0; layout.n_total()], 0.1, 0.1, asm.mass()), 0.0);
    }

    #[test]
    fn controller_examples() {
        let c = tc();
        assert_eq!(propose_step(c.ttol / 4.0, 0.01, 0, &c), StepDecision::Accept { next_k: 0.01 });
        assert_eq!(propose_step(c.ttol / 1000.0, 0.01, 0, &c), StepDecision::Accept { next_k: 0.02 });
        assert_eq!(propose_step(c.ttol / 1000.0, 0.08, 0, &c), StepDecision::Accept { next_k: 0.1 });
        assert_eq!(propose_step(4.0 * c.ttol, 0.01, 0, &c), StepDecision::Retry { k: 0.005 });
        assert_eq!(propose_step(0.0, 0.01, 0, &c), StepDecision::Accept { next_k: 0.02 });
    }

    #[test]
    fn controller_floor_and_retry_limit() {
        let c = tc();
        assert_eq!(propose_step(100.0 * c.ttol, 0.0015, 0, &c), StepDecision::Retry { k: 1e-3 });
        assert_eq!(propose_step(100.0 * c.ttol, 1e-3, 0, &c), StepDecision::ForcedAccept { next_k: 1e-3 });
        assert_eq!(propose_step(2.0 * c.ttol, 0.05, 10, &c), StepDecision::ForcedAccept { next_k: 0.05 });
    }

    #[test]
    fn config_validation() {
        let mut cfg = crate::problems::sharp_transition().config;
        assert!(cfg.validate().is_ok());
        cfg.filter = false;
        assert!(cfg.validate().is_err());
        let mut cfg = crate::problems::green_taylor().config;
        cfg.dt = -1.0;
        assert!(cfg.validate().is_err());
    }
}
