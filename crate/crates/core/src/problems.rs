//! The three experiments: modified Green–Taylor vortex, flow between offset cylinders,
//! and a manufactured flow driven by a forcing with sharp transitions in time.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::penalty::PenaltyConfig;
use crate::stepper::{Convection, SolverConfig, StepMode, TimeControl};

pub type Field = Arc<dyn Fn(f64, f64, f64) -> [f64; 2] + Send + Sync>;
pub type GradField = Arc<dyn Fn(f64, f64, f64) -> [[f64; 2]; 2] + Send + Sync>;
pub type Scalar = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Exact velocity, its gradient `[[du/dx, du/dy], [dv/dx, dv/dy]]`, and pressure.
#[derive(Clone)]
pub struct ExactSolution {
    pub velocity: Field,
    pub gradient: GradField,
    pub pressure: Scalar,
}

#[derive(Clone)]
pub struct Problem {
    pub name: String,
    /// Default mesh file, relative to the mesh directory.
    pub mesh_file: String,
    pub forcing: Option<Field>,
    pub boundary: Field,
    /// Initial velocity; boundary dofs are overwritten with the boundary data at t = 0.
    pub initial: Field,
    pub exact: Option<ExactSolution>,
    pub config: SolverConfig,
}

impl std::fmt::Debug for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("mesh_file", &self.mesh_file)
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

fn zero_field() -> Field {
    Arc::new(|_, _, _| [0.0, 0.0])
}

/// Tolerances swept by the convergence study.
pub const GREEN_TAYLOR_TOLS: [f64; 5] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5];

/// Steady Taylor vortex profile `(-cos x sin y, sin x cos y)`.
fn vortex(x: f64, y: f64) -> [f64; 2] {
    [-x.cos() * y.sin(), x.sin() * y.cos()]
}

/// Green–Taylor velocity with `sin t` time dependence on the unit square.
pub fn green_taylor_exact() -> ExactSolution {
    ExactSolution {
        velocity: Arc::new(|x, y, t| {
            let [a, b] = vortex(x, y);
            [a * t.sin(), b * t.sin()]
        }),
        gradient: Arc::new(|x, y, t| {
            let s = t.sin();
            [
                [x.sin() * y.sin() * s, -x.cos() * y.cos() * s],
                [x.cos() * y.cos() * s, -x.sin() * y.sin() * s],
            ]
        }),
        pressure: Arc::new(|x, y, t| 0.25 * ((2.0 * x).cos() + (2.0 * y).cos()) * t.sin().powi(2)),
    }
}

/// `u_t + u.grad u + grad p - nu Lap u` for the Green–Taylor pair.
pub fn green_taylor_forcing(nu: f64) -> Field {
    Arc::new(move |x, y, t| {
        let [a, b] = vortex(x, y);
        let (s, c) = t.sin_cos();
        let amp = c + 2.0 * nu * s;
        let s2 = s * s;
        [a * amp - (2.0 * x).sin() * s2, b * amp - (2.0 * y).sin() * s2]
    })
}

pub fn green_taylor() -> Problem {
    let nu = 1.0;
    let h = 1.0 / 27.0;
    let exact = green_taylor_exact();
    Problem {
        name: "green_taylor".into(),
        mesh_file: "unit_square_h27.msh".into(),
        forcing: Some(green_taylor_forcing(nu)),
        boundary: exact.velocity.clone(),
        initial: exact.velocity.clone(),
        exact: Some(exact),
        config: SolverConfig {
            nu,
            dt: h * h,
            final_time: 1.0,
            convection: Convection::Lagged,
            filter: false,
            step_mode: StepMode::Constant,
            penalty: PenaltyConfig { tol: 1e-3, eps_min: 1e-6, eps_max: 1e-1 },
            fixed_penalty: None,
            compute_errors: true,
        },
    }
}

/// Body force spinning fluid between the cylinders, ramped up over `t in [0, 1]`.
pub fn offset_cylinders_forcing() -> Field {
    Arc::new(|x, y, t| {
        let m = t.min(1.0);
        let r = 1.0 - x * x - y * y;
        [4.0 * x * m * r, -4.0 * y * m * r]
    })
}

pub fn offset_cylinders() -> Problem {
    Problem {
        name: "offset_cylinders".into(),
        mesh_file: "offset_cylinders_lc0.01.msh".into(),
        forcing: Some(offset_cylinders_forcing()),
        boundary: zero_field(),
        initial: zero_field(),
        exact: None,
        config: SolverConfig {
            nu: 0.01,
            dt: 0.02,
            final_time: 16.0,
            convection: Convection::Extrapolated,
            filter: true,
            step_mode: StepMode::Constant,
            penalty: PenaltyConfig { tol: 1e-3, eps_min: 1e-10, eps_max: 1e-2 },
            fixed_penalty: None,
            compute_errors: false,
        },
    }
}

/// Time profile `exp(-(4 + 4 sin 3t)^10) + 1`, equal to 1 except near `sin 3t = -1`.
pub fn sharp_signal(t: f64) -> f64 {
    (-(4.0 + 4.0 * (3.0 * t).sin()).powi(10)).exp() + 1.0
}

/// Derivative of [`sharp_signal`].
pub fn sharp_signal_derivative(t: f64) -> f64 {
    let s = 4.0 + 4.0 * (3.0 * t).sin();
    let e = (-s.powi(10)).exp();
    -e * 10.0 * s.powi(9) * 12.0 * (3.0 * t).cos()
}

/// Manufactured pair on `(-1, 1)^2`, vanishing on the boundary.
pub fn sharp_exact() -> ExactSolution {
    ExactSolution {
        velocity: Arc::new(|x, y, t| {
            let s = PI * t.sin();
            let (sx, sy) = ((PI * x).sin(), (PI * y).sin());
            [s * (2.0 * PI * y).sin() * sx * sx, -s * (2.0 * PI * x).sin() * sy * sy]
        }),
        gradient: Arc::new(|x, y, t| {
            let s = t.sin();
            let p2 = PI * PI;
            let (sx, sy) = ((PI * x).sin(), (PI * y).sin());
            let (s2x, s2y) = ((2.0 * PI * x).sin(), (2.0 * PI * y).sin());
            let (c2x, c2y) = ((2.0 * PI * x).cos(), (2.0 * PI * y).cos());
            [
                [s * p2 * s2y * s2x, s * 2.0 * p2 * c2y * sx * sx],
                [-s * 2.0 * p2 * c2x * sy * sy, -s * p2 * s2x * s2y],
            ]
        }),
        pressure: Arc::new(|x, y, t| t.sin() * (PI * x).cos() * (PI * y).sin()),
    }
}

/// `u_t + u.grad u + grad p - nu Lap u` for [`sharp_exact`].
pub fn sharp_manufactured_forcing(nu: f64) -> Field {
    Arc::new(move |x, y, t| {
        let (st, ct) = t.sin_cos();
        let p2 = PI * PI;
        let p3 = p2 * PI;
        let (sx, sy) = ((PI * x).sin(), (PI * y).sin());
        let (cx, cy) = ((PI * x).cos(), (PI * y).cos());
        let (s2x, s2y) = ((2.0 * PI * x).sin(), (2.0 * PI * y).sin());
        let (c2x, c2y) = ((2.0 * PI * x).cos(), (2.0 * PI * y).cos());

        let a = PI * s2y * sx * sx;
        let b = -PI * s2x * sy * sy;
        let a_x = p2 * s2y * s2x;
        let a_y = 2.0 * p2 * c2y * sx * sx;
        let b_x = -2.0 * p2 * c2x * sy * sy;
        let b_y = -p2 * s2x * s2y;
        let lap_a = 2.0 * p3 * s2y * c2x - 4.0 * p3 * s2y * sx * sx;
        let lap_b = 4.0 * p3 * s2x * sy * sy - 2.0 * p3 * s2x * c2y;
        let p_x = -PI * st * sx * sy;
        let p_y = PI * st * cx * cy;
        let st2 = st * st;
        [
            ct * a + st2 * (a * a_x + b * a_y) + p_x - nu * st * lap_a,
            ct * b + st2 * (a * b_x + b * b_y) + p_y - nu * st * lap_b,
        ]
    })
}

/// Manufactured forcing scaled by [`sharp_signal`].
pub fn sharp_forcing(nu: f64) -> Field {
    let h = sharp_manufactured_forcing(nu);
    Arc::new(move |x, y, t| {
        let g = sharp_signal(t);
        let v = h(x, y, t);
        [v[0] * g, v[1] * g]
    })
}

/// Adaptive-step configuration of the sharp-transition experiment.
pub fn sharp_time_control() -> TimeControl {
    TimeControl { ttol: 1e-4, ttol_min: 1e-5, max_retry: 10, dt_min: 0.001, dt_max: 0.1 }
}

pub fn sharp_transition() -> Problem {
    let nu = 1.0;
    Problem {
        name: "sharp_transition".into(),
        mesh_file: "square_pm1_lc0.05.msh".into(),
        forcing: Some(sharp_forcing(nu)),
        boundary: zero_field(),
        initial: Arc::new(|_, _, _| [0.1, 0.1]),
        exact: None,
        config: SolverConfig {
            nu,
            dt: 0.01,
            final_time: 6.0,
            convection: Convection::Extrapolated,
            filter: true,
            step_mode: StepMode::Adaptive(sharp_time_control()),
            penalty: PenaltyConfig { tol: 1e-5, eps_min: 1e-8, eps_max: 1e-1 },
            fixed_penalty: None,
            compute_errors: false,
        },
    }
}

/// Smooth manufactured problem: the sharp-transition pair with a constant time profile.
pub fn smooth_manufactured() -> Problem {
    let nu = 1.0;
    let exact = sharp_exact();
    Problem {
        name: "smooth_manufactured".into(),
        mesh_file: "square_pm1_lc0.05.msh".into(),
        forcing: Some(sharp_manufactured_forcing(nu)),
        boundary: zero_field(),
        initial: exact.velocity.clone(),
        exact: Some(exact),
        config: SolverConfig {
            nu,
            dt: 0.1,
            final_time: 1.0,
            convection: Convection::Extrapolated,
            filter: true,
            step_mode: StepMode::Constant,
            penalty: PenaltyConfig { tol: 1e-5, eps_min: 1e-8, eps_max: 1e-1 },
            fixed_penalty: None,
            compute_errors: true,
        },
    }
}

pub fn by_name(name: &str) -> Option<Problem> {
    match name {
        "green_taylor" => Some(green_taylor()),
        "offset_cylinders" => Some(offset_cylinders()),
        "sharp_transition" => Some(sharp_transition()),
        "smooth_manufactured" => Some(smooth_manufactured()),
        _ => None,
    }
}

pub const PROBLEM_NAMES: [&str; 4] = ["green_taylor", "offset_cylinders", "sharp_transition", "smooth_manufactured"];

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const H1: f64 = 1e-3;
    const H2: f64 = 5e-3;

    /// Sixth-order centered first and second derivatives of `f` along one axis.
    fn d1(f: impl Fn(f64) -> f64, h: f64) -> f64 {
        (45.0 * (f(h) - f(-h)) - 9.0 * (f(2.0 * h) - f(-2.0 * h)) + (f(3.0 * h) - f(-3.0 * h))) / (60.0 * h)
    }

    fn d2(f: impl Fn(f64) -> f64, h: f64) -> f64 {
        (270.0 * (f(h) + f(-h)) - 27.0 * (f(2.0 * h) + f(-2.0 * h)) + 2.0 * (f(3.0 * h) + f(-3.0 * h))
            - 490.0 * f(0.0))
            / (180.0 * h * h)
    }

    /// Navier–Stokes residual of an exact pair by finite differences.
    fn residual(ex: &ExactSolution, f: &Field, nu: f64, x: f64, y: f64, t: f64) -> [f64; 2] {
        let u = |x, y, t| (ex.velocity)(x, y, t);
        let p = |x, y, t| (ex.pressure)(x, y, t);
        let (h1, h2) = (H1, H2);
        let v = u(x, y, t);
        let mut out = [0.0; 2];
        for c in 0..2 {
            let dt = d1(|s| u(x, y, t + s)[c], h1);
            let dx = d1(|s| u(x + s, y, t)[c], h1);
            let dy = d1(|s| u(x, y + s, t)[c], h1);
            let lap = d2(|s| u(x + s, y, t)[c], h2) + d2(|s| u(x, y + s, t)[c], h2);
            let dp = if c == 0 { d1(|s| p(x + s, y, t), h1) } else { d1(|s| p(x, y + s, t), h1) };
            out[c] = dt + v[0] * dx + v[1] * dy + dp - nu * lap - f(x, y, t)[c];
        }
        out
    }

    fn check_pair(ex: &ExactSolution, f: &Field, nu: f64, lo: f64, hi: f64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let (x, y, t) = (rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(0.0..2.0));
            let r = residual(ex, f, nu, x, y, t);
            worst = worst.max(r[0].abs()).max(r[1].abs());
        }
        assert!(worst < 1e-10 * scale, "worst residual {worst:e}");
    }

    fn check_gradient(ex: &ExactSolution, lo: f64, hi: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let (x, y, t) = (rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(0.0..3.0));
            let g = (ex.gradient)(x, y, t);
            for c in 0..2 {
                let dx = d1(|s| (ex.velocity)(x + s, y, t)[c], H1);
                let dy = d1(|s| (ex.velocity)(x, y + s, t)[c], H1);
                assert!((g[c][0] - dx).abs() < 1e-10 && (g[c][1] - dy).abs() < 1e-10);
            }
            assert!((g[0][0] + g[1][1]).abs() < 1e-12);
        }
    }

    #[test]
    fn green_taylor_is_consistent() {
        let ex = green_taylor_exact();
        check_pair(&ex, &green_taylor_forcing(1.0), 1.0, 0.0, 1.0, 1.0);
        check_pair(&ex, &green_taylor_forcing(0.01), 0.01, 0.0, 1.0, 1.0);
        check_gradient(&ex, 0.0, 1.0);
        for x in [0.0, 0.3, 1.0] {
            assert_eq!((ex.velocity)(x, 0.7, 0.0), [0.0, 0.0]);
        }
    }

    #[test]
    fn sharp_pair_is_consistent() {
        let ex = sharp_exact();
        check_pair(&ex, &sharp_manufactured_forcing(1.0), 1.0, -1.0, 1.0, 10.0);
        check_gradient(&ex, -1.0, 1.0);
        for s in [-1.0, 1.0] {
            for v in [-0.7, 0.2, 0.9] {
                let a = (ex.velocity)(s, v, 1.0);
                let b = (ex.velocity)(v, s, 1.0);
                assert!(a.iter().chain(&b).all(|c| c.abs() < 1e-14));
            }
        }
    }

    #[test]
    fn signal_values() {
        assert_eq!(sharp_signal(0.0), 1.0);
        assert_eq!(sharp_signal(std::f64::consts::FRAC_PI_2), 2.0);
        for t in [0.3, 1.4, 1.6, 2.5] {
            let fd = (sharp_signal(t + 1e-7) - sharp_signal(t - 1e-7)) / 2e-7;
            assert!((fd - sharp_signal_derivative(t)).abs() < 1e-4 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn offset_forcing_values() {
        let f = offset_cylinders_forcing();
        assert_eq!(f(0.3, -0.2, 0.0), [0.0, 0.0]);
        let on_circle = f(0.6, 0.8, 3.0);
        assert!(on_circle[0].abs() < 1e-15 && on_circle[1].abs() < 1e-15);
        assert_eq!(f(0.5, 0.0, 2.0), [1.5, 0.0]);
    }

    #[test]
    fn lookup_by_name() {
        for n in PROBLEM_NAMES {
            assert_eq!(by_name(n).unwrap().name, n);
        }
        assert!(by_name("cavity").is_none());
    }
}
