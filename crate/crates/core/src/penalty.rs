//! Elementwise penalty control: local divergence budgets, the divergence estimator,
//! the multiplicative update of each element's penalty parameter, and pressure recovery.

use rayon::prelude::*;

use crate::error::FemError;
use crate::fem::{p2_basis, DofLayout, Tabulation, VelocityField};
use crate::mesh::TriMesh;

/// Below this fraction of the local tolerance an element counts as divergence-free and
/// jumps straight to the upper bound.
pub const EST_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyConfig {
    pub tol: f64,
    pub eps_min: f64,
    pub eps_max: f64,
}

impl PenaltyConfig {
    pub fn new(tol: f64, eps_min: f64, eps_max: f64) -> Result<Self, FemError> {
        let cfg = Self { tol, eps_min, eps_max };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), FemError> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(FemError::InvalidParameter(format!("TOL must be positive, got {}", self.tol)));
        }
        if !(self.eps_min > 0.0 && self.eps_min <= self.eps_max && self.eps_max.is_finite()) {
            return Err(FemError::InvalidParameter(format!(
                "need 0 < EpsMin <= EpsMax, got [{}, {}]",
                self.eps_min, self.eps_max
            )));
        }
        Ok(())
    }

    pub fn clamp(&self, eps: f64) -> f64 {
        eps.max(self.eps_min).min(self.eps_max)
    }
}

#[derive(Debug, Clone)]
pub struct PenaltyState {
    pub eps: Vec<f64>,
    pub loctol: Vec<f64>,
    pub est: Vec<f64>,
    pub config: PenaltyConfig,
}

impl PenaltyState {
    /// Every element starts from `eps = 1`, clamped into the configured bounds.
    pub fn new(mesh: &TriMesh, config: PenaltyConfig) -> Result<Self, FemError> {
        config.validate()?;
        let loctol = init_local_tolerances(mesh, config.tol)?;
        let n = mesh.n_triangles();
        Ok(Self { eps: vec![config.clamp(1.0); n], loctol, est: vec![0.0; n], config })
    }

    /// Same budgets, but a constant penalty that [`PenaltyState::update`] leaves alone
    /// when used by a fixed-penalty run.
    pub fn with_constant(mesh: &TriMesh, config: PenaltyConfig, eps: f64) -> Result<Self, FemError> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(FemError::InvalidParameter(format!("penalty must be positive, got {eps}")));
        }
        let mut s = Self::new(mesh, config)?;
        s.eps.iter_mut().for_each(|e| *e = eps);
        Ok(s)
    }

    pub fn update(&mut self) {
        self.eps = update_epsilon(&self.eps, &self.loctol, &self.est, &self.config);
    }

    /// Elements whose estimator exceeds their local tolerance.
    pub fn violations(&self) -> usize {
        self.est.iter().zip(&self.loctol).filter(|(e, l)| e > l).count()
    }

    pub fn all_within_tolerance(&self) -> bool {
        self.violations() == 0
    }

    pub fn divergence_norm(&self) -> f64 {
        global_divergence_norm(&self.est)
    }

    pub fn eps_stats(&self) -> EpsStats {
        EpsStats::of(&self.eps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsStats {
    pub min: f64,
    pub max: f64,
    /// Plain mean over elements.
    pub mean: f64,
}

impl EpsStats {
    pub fn of(eps: &[f64]) -> Self {
        let min = eps.iter().copied().fold(f64::INFINITY, f64::min);
        let max = eps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = eps.iter().sum::<f64>() / eps.len() as f64;
        Self { min, max, mean }
    }
}

/// `LocTol_T = TOL^2 |T| / (2 |Omega|)`.
pub fn init_local_tolerances(mesh: &TriMesh, tol: f64) -> Result<Vec<f64>, FemError> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(FemError::InvalidParameter(format!("TOL must be positive, got {tol}")));
    }
    let scale = 0.5 * tol * tol / mesh.domain_area();
    Ok(mesh.element_area().iter().map(|a| scale * a).collect())
}

/// Divergence of `u` on element `t` at each of the given physical basis gradient sets.
fn divergence(u: &VelocityField, mesh: &TriMesh, t: usize, grads: &[[f64; 2]; 6]) -> f64 {
    let g = u.eval_grad(mesh, t, grads);
    g[0][0] + g[1][1]
}

fn check_len(u: &VelocityField, layout: &DofLayout) -> Result<(), FemError> {
    if u.len() != layout.n_total() {
        return Err(FemError::LayoutMismatch { expected: layout.n_total(), got: u.len() });
    }
    Ok(())
}

fn element_integrals(
    u: &VelocityField,
    mesh: &TriMesh,
    layout: &DofLayout,
    degree: usize,
    power: i32,
) -> Result<Vec<f64>, FemError> {
    check_len(u, layout)?;
    let tab = Tabulation::new(degree)?;
    (0..mesh.n_triangles())
        .into_par_iter()
        .map(|t| {
            let map = mesh.element_geometry(t)?;
            let area = map.area();
            Ok(tab
                .physical_grads(&map)
                .iter()
                .zip(&tab.rule.weights)
                .map(|(g, w)| w * area * divergence(u, mesh, t, g).powi(power))
                .sum())
        })
        .collect()
}

/// `est_T = int_T |div u|^2`, exact with the 3-point rule since `div u` is linear per element.
pub fn divergence_estimator(u: &VelocityField, mesh: &TriMesh, layout: &DofLayout) -> Result<Vec<f64>, FemError> {
    element_integrals(u, mesh, layout, 2, 2)
}

/// `sum_T int_T |div u|^4`, exact with the degree-4 rule.
pub fn divergence_l4_power(u: &VelocityField, mesh: &TriMesh, layout: &DofLayout) -> Result<f64, FemError> {
    Ok(element_integrals(u, mesh, layout, 4, 4)?.iter().sum())
}

/// Penalty update for one element.
pub fn update_one(eps_old: f64, loctol: f64, est: f64, cfg: &PenaltyConfig) -> f64 {
    if !(est >= loctol * EST_FLOOR) {
        // Also catches NaN estimates, which would otherwise poison the clamp.
        if est.is_nan() {
            return cfg.eps_min;
        }
        return cfg.eps_max;
    }
    cfg.clamp(loctol / est * eps_old)
}

pub fn update_epsilon(eps: &[f64], loctol: &[f64], est: &[f64], cfg: &PenaltyConfig) -> Vec<f64> {
    eps.iter()
        .zip(loctol)
        .zip(est)
        .map(|((&e, &l), &s)| update_one(e, l, s, cfg))
        .collect()
}

pub fn global_divergence_norm(est: &[f64]) -> f64 {
    est.iter().sum::<f64>().sqrt()
}

/// Elementwise linear pressure, stored by its values at the three vertices of each element.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredPressure {
    pub vertex_values: Vec<[f64; 3]>,
    /// Constant subtracted to reach zero mean.
    pub shift: f64,
}

impl RecoveredPressure {
    /// Pressure on element `t` at barycentric point `l`.
    pub fn eval(&self, t: usize, l: [f64; 3]) -> f64 {
        let v = &self.vertex_values[t];
        l[0] * v[0] + l[1] * v[1] + l[2] * v[2]
    }

    pub fn mean(&self, mesh: &TriMesh) -> f64 {
        integral(&self.vertex_values, mesh) / mesh.domain_area()
    }
}

fn integral(vals: &[[f64; 3]], mesh: &TriMesh) -> f64 {
    vals.iter()
        .zip(mesh.element_area())
        .map(|(v, a)| a * (v[0] + v[1] + v[2]) / 3.0)
        .sum()
}

/// `p|_T = -div(u)|_T / eps_T`, shifted to zero mean.
pub fn recover_pressure(
    u: &VelocityField,
    eps: &[f64],
    mesh: &TriMesh,
    layout: &DofLayout,
) -> Result<RecoveredPressure, FemError> {
    check_len(u, layout)?;
    if eps.len() != mesh.n_triangles() {
        return Err(FemError::LayoutMismatch { expected: mesh.n_triangles(), got: eps.len() });
    }
    let corners = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let ref_grads: Vec<[[f64; 2]; 6]> = corners.iter().map(|&l| p2_basis(l).1).collect();
    let mut values = (0..mesh.n_triangles())
        .into_par_iter()
        .map(|t| {
            if !(eps[t] > 0.0) {
                return Err(FemError::NonPositivePenalty { element: t, value: eps[t] });
            }
            let map = mesh.element_geometry(t)?;
            let mut out = [0.0; 3];
            for (o, rg) in out.iter_mut().zip(&ref_grads) {
                let mut g = [[0.0; 2]; 6];
                for (gi, r) in g.iter_mut().zip(rg) {
                    *gi = map.push_gradient(*r);
                }
                *o = -divergence(u, mesh, t, &g) / eps[t];
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>, FemError>>()?;
    let shift = integral(&values, mesh) / mesh.domain_area();
    for v in &mut values {
        for x in v.iter_mut() {
            *x -= shift;
        }
    }
    Ok(RecoveredPressure { vertex_values: values, shift })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::interpolate_exact;

    fn cfg() -> PenaltyConfig {
        PenaltyConfig::new(0.1, 1e-6, 1e-1).unwrap()
    }

    #[test]
    fn local_tolerance_formula() {
        let mesh = TriMesh::rectangle(0.0, 1.0, 0.0, 1.0, 10, 10).unwrap();
        let lt = init_local_tolerances(&mesh, 0.1).unwrap();
        // 200 equal triangles of area 0.005
        for v in &lt {
            assert!((v - 2.5e-5).abs() < 1e-18);
            assert!((v - 0.01 / 400.0).abs() < 1e-18);
        }
        let s: f64 = lt.iter().sum();
        assert!((s - 0.005).abs() < 1e-15);
        assert!(init_local_tolerances(&mesh, 0.0).is_err());
    }

    #[test]
    fn estimator_cases() {
        let mesh = TriMesh::rectangle(0.0, 1.0, 0.0, 1.0, 4, 3).unwrap();
        let layout = DofLayout::new(&mesh);
        let free = interpolate_exact(|x, y, _| [x, -y], &mesh, &layout, 0.0);
        let est = divergence_estimator(&free, &mesh, &layout).unwrap();
        assert!(est.iter().all(|e| e.abs() < 1e-28));
        let ux = interpolate_exact(|x, _, _| [x, 0.0], &mesh, &layout, 0.0);
        let est = divergence_estimator(&ux, &mesh, &layout).unwrap();
        for (e, a) in est.iter().zip(mesh.element_area()) {
            assert!((e - a).abs() < 1e-14);
        }
        assert!((global_divergence_norm(&est) - 1.0).abs() < 1e-13);
        assert_eq!(global_divergence_norm(&[0.0; 4]), 0.0);
    }

    #[test]
    fn update_examples() {
        let c = cfg();
        assert_eq!(update_one(1e-3, 1.0, 4.0, &c), 2.5e-4);
        assert_eq!(update_one(1e-3, 3e-5, 3e-5, &c), 1e-3);
        assert_eq!(update_one(1e-9, 1e-3, 1.0, &c), 1e-6);
        assert_eq!(update_one(1e-3, 1e-5, 0.0, &c), 1e-1);
    }

    #[test]
    fn initial_penalty_is_clamped() {
        let mesh = TriMesh::rectangle(0.0, 1.0, 0.0, 1.0, 2, 2).unwrap();
        let s = PenaltyState::new(&mesh, cfg()).unwrap();
        assert!(s.eps.iter().all(|e| *e == 0.1));
        let wide = PenaltyState::new(&mesh, PenaltyConfig::new(0.1, 1e-3, 10.0).unwrap()).unwrap();
        assert!(wide.eps.iter().all(|e| *e == 1.0));
    }

    #[test]
    fn pressure_recovery() {
        let mesh = TriMesh::rectangle(0.0, 1.0, 0.0, 1.0, 3, 3).unwrap();
        let layout = DofLayout::new(&mesh);
        let eps = vec![0.5; mesh.n_triangles()];
        let ux = interpolate_exact(|x, _, _| [x, 0.0], &mesh, &layout, 0.0);
        let p = recover_pressure(&ux, &eps, &mesh, &layout).unwrap();
        assert!((p.shift + 2.0).abs() < 1e-12);
        assert!(p.vertex_values.iter().flatten().all(|v| v.abs() < 1e-12));
        let free = interpolate_exact(|x, y, _| [y * y, x * x], &mesh, &layout, 0.0);
        let p = recover_pressure(&free, &eps, &mesh, &layout).unwrap();
        assert!(p.vertex_values.iter().flatten().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn pressure_mean_zero_for_linear_divergence() {
        let mesh = TriMesh::rectangle(0.0, 1.0, 0.0, 1.0, 4, 4).unwrap();
        let layout = DofLayout::new(&mesh);
        let eps: Vec<f64> = (0..mesh.n_triangles()).map(|t| 0.1 + 0.01 * t as f64).collect();
        let u = interpolate_exact(|x, y, _| [x * x, x * y], &mesh, &layout, 0.0);
        let p = recover_pressure(&u, &eps, &mesh, &layout).unwrap();
        assert!(p.mean(&mesh).abs() < 1e-13);
        // div = 3x, checked at a vertex of element 0
        let v0 = mesh.triangles()[0][0];
        let x = mesh.vertices()[v0][0];
        assert!((p.vertex_values[0][0] + p.shift + 3.0 * x / eps[0]).abs() < 1e-12);
    }

    #[test]
    fn l4_of_unit_divergence() {
        let mesh = TriMesh::rectangle(0.0, 2.0, 0.0, 1.0, 3, 2).unwrap();
        let layout = DofLayout::new(&mesh);
        let ux = interpolate_exact(|x, _, _| [x, 0.0], &mesh, &layout, 0.0);
        assert!((divergence_l4_power(&ux, &mesh, &layout).unwrap() - 2.0).abs() < 1e-13);
    }
}
