//! Error norms, per-step records, run summaries and CSV output.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{FemError, RunError};
use crate::fem::{DofLayout, Tabulation, VelocityField};
use crate::mesh::TriMesh;
use crate::penalty::RecoveredPressure;
use crate::problems::{Field, GradField, Scalar};

fn check_len(u: &VelocityField, layout: &DofLayout) -> Result<(), FemError> {
    if u.len() != layout.n_total() {
        return Err(FemError::LayoutMismatch { expected: layout.n_total(), got: u.len() });
    }
    Ok(())
}

fn sum_over_elements(
    mesh: &TriMesh,
    f: impl Fn(usize, &crate::mesh::AffineMap, &Tabulation) -> f64 + Sync,
) -> Result<f64, FemError> {
    let tab = Tabulation::new(7)?;
    let parts = (0..mesh.n_triangles())
        .into_par_iter()
        .map(|t| Ok(f(t, &mesh.element_geometry(t)?, &tab)))
        .collect::<Result<Vec<f64>, FemError>>()?;
    Ok(parts.iter().sum())
}

/// `||u_ex(., t) - u_h||_{L2}`.
pub fn l2_error(u_h: &VelocityField, exact: &Field, t: f64, mesh: &TriMesh, layout: &DofLayout) -> Result<f64, FemError> {
    check_len(u_h, layout)?;
    let sq = sum_over_elements(mesh, |el, map, tab| {
        let area = map.area();
        tab.rule
            .points
            .iter()
            .zip(&tab.values)
            .zip(&tab.rule.weights)
            .map(|((l, phi), w)| {
                let [x, y] = map.map([l[1], l[2]]);
                let e = exact(x, y, t);
                let v = u_h.eval(mesh, el, phi);
                w * area * ((e[0] - v[0]).powi(2) + (e[1] - v[1]).powi(2))
            })
            .sum()
    })?;
    Ok(sq.max(0.0).sqrt())
}

/// `||grad u_ex(., t) - grad u_h||_{L2}`.
pub fn h1_seminorm_error(
    u_h: &VelocityField,
    exact_grad: &GradField,
    t: f64,
    mesh: &TriMesh,
    layout: &DofLayout,
) -> Result<f64, FemError> {
    check_len(u_h, layout)?;
    let sq = sum_over_elements(mesh, |el, map, tab| {
        let area = map.area();
        tab.physical_grads(map)
            .iter()
            .zip(&tab.rule.points)
            .zip(&tab.rule.weights)
            .map(|((g, l), w)| {
                let [x, y] = map.map([l[1], l[2]]);
                let e = exact_grad(x, y, t);
                let v = u_h.eval_grad(mesh, el, g);
                let mut s = 0.0;
                for c in 0..2 {
                    for d in 0..2 {
                        s += (e[c][d] - v[c][d]).powi(2);
                    }
                }
                w * area * s
            })
            .sum()
    })?;
    Ok(sq.max(0.0).sqrt())
}

/// L² distance between the recovered pressure and the exact one, both shifted to zero mean.
pub fn pressure_l2_error(p_h: &RecoveredPressure, exact: &Scalar, t: f64, mesh: &TriMesh) -> Result<f64, FemError> {
    let integral = sum_over_elements(mesh, |_, map, tab| {
        let area = map.area();
        tab.rule
            .points
            .iter()
            .zip(&tab.rule.weights)
            .map(|(l, w)| {
                let [x, y] = map.map([l[1], l[2]]);
                w * area * exact(x, y, t)
            })
            .sum()
    })?;
    let mean = integral / mesh.domain_area();
    let sq = sum_over_elements(mesh, |el, map, tab| {
        let area = map.area();
        tab.rule
            .points
            .iter()
            .zip(&tab.rule.weights)
            .map(|(l, w)| {
                let [x, y] = map.map([l[1], l[2]]);
                w * area * (exact(x, y, t) - mean - p_h.eval(el, *l)).powi(2)
            })
            .sum()
    })?;
    Ok(sq.max(0.0).sqrt())
}

/// Observed order `ln(d1/d2) / ln(tol1/tol2)`.
pub fn convergence_rate(d1: f64, d2: f64, tol1: f64, tol2: f64) -> Result<f64, FemError> {
    if !(d1 > 0.0 && d2 > 0.0 && tol1 > 0.0 && tol2 > 0.0) || tol1 == tol2 {
        return Err(FemError::InvalidParameter(format!(
            "rate needs positive values and distinct tolerances, got d = ({d1}, {d2}), TOL = ({tol1}, {tol2})"
        )));
    }
    Ok((d1 / d2).ln() / (tol1 / tol2).ln())
}

/// One line of the per-step series. Rejected attempts carry only the timestep fields.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepRow {
    pub step: usize,
    pub t: f64,
    pub k: f64,
    pub accepted: bool,
    /// Accepted although above the temporal tolerance (step floor or retry limit).
    pub forced: bool,
    pub retries: usize,
    pub t_est: Option<f64>,
    pub div_norm: Option<f64>,
    pub eps_min: Option<f64>,
    pub eps_max: Option<f64>,
    pub eps_avg: Option<f64>,
    pub loctol_violations: Option<usize>,
    pub u_norm: Option<f64>,
    pub ut_norm: Option<f64>,
    pub l2_error: Option<f64>,
    pub h1_error: Option<f64>,
    pub p_error: Option<f64>,
    /// Running `sum_n k_n ||div u_n||_{L4}^4`.
    pub div_l4_integral: Option<f64>,
    pub lemma_checked: Option<bool>,
}

pub const STEP_HEADER: [&str; 19] = [
    "step",
    "t",
    "k",
    "accepted",
    "forced",
    "retries",
    "t_est",
    "div_norm",
    "eps_min",
    "eps_max",
    "eps_avg",
    "loctol_violations",
    "u_norm",
    "ut_norm",
    "l2_error",
    "h1_error",
    "p_error",
    "div_l4_integral",
    "lemma_checked",
];

pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn opt<T: std::fmt::Debug>(v: Option<T>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

fn parse_opt<T: std::str::FromStr>(s: &str) -> Result<Option<T>, String> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|_| format!("bad field {s:?}"))
    }
}

impl StepRow {
    pub fn to_record(&self) -> Vec<String> {
        vec![
            self.step.to_string(),
            fmt_f64(self.t),
            fmt_f64(self.k),
            self.accepted.to_string(),
            self.forced.to_string(),
            self.retries.to_string(),
            opt(self.t_est),
            opt(self.div_norm),
            opt(self.eps_min),
            opt(self.eps_max),
            opt(self.eps_avg),
            opt(self.loctol_violations),
            opt(self.u_norm),
            opt(self.ut_norm),
            opt(self.l2_error),
            opt(self.h1_error),
            opt(self.p_error),
            opt(self.div_l4_integral),
            opt(self.lemma_checked),
        ]
    }

    pub fn from_record(rec: &csv::StringRecord) -> Result<Self, String> {
        if rec.len() != STEP_HEADER.len() {
            return Err(format!("expected {} fields, got {}", STEP_HEADER.len(), rec.len()));
        }
        let req = |i: usize| -> Result<&str, String> { Ok(&rec[i]) };
        let parse = |i: usize| -> Result<f64, String> { rec[i].parse().map_err(|_| format!("bad float {:?}", &rec[i])) };
        Ok(Self {
            step: req(0)?.parse().map_err(|_| "bad step".to_string())?,
            t: parse(1)?,
            k: parse(2)?,
            accepted: req(3)?.parse().map_err(|_| "bad flag".to_string())?,
            forced: req(4)?.parse().map_err(|_| "bad flag".to_string())?,
            retries: req(5)?.parse().map_err(|_| "bad count".to_string())?,
            t_est: parse_opt(&rec[6])?,
            div_norm: parse_opt(&rec[7])?,
            eps_min: parse_opt(&rec[8])?,
            eps_max: parse_opt(&rec[9])?,
            eps_avg: parse_opt(&rec[10])?,
            loctol_violations: parse_opt(&rec[11])?,
            u_norm: parse_opt(&rec[12])?,
            ut_norm: parse_opt(&rec[13])?,
            l2_error: parse_opt(&rec[14])?,
            h1_error: parse_opt(&rec[15])?,
            p_error: parse_opt(&rec[16])?,
            div_l4_integral: parse_opt(&rec[17])?,
            lemma_checked: parse_opt(&rec[18])?,
        })
    }
}

pub fn write_rows<W: Write>(rows: &[StepRow], out: W) -> Result<(), RunError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(STEP_HEADER)?;
    for r in rows {
        w.write_record(r.to_record())?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(rows: &[StepRow], path: impl AsRef<Path>) -> Result<(), RunError> {
    write_rows(rows, std::fs::File::create(path)?)
}

pub fn read_rows<R: Read>(input: R) -> Result<Vec<StepRow>, RunError> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        out.push(StepRow::from_record(&rec).map_err(|m| {
            RunError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, m))
        })?);
    }
    Ok(out)
}

/// Final-time quantities of one run, computed from its accepted rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub steps: usize,
    pub rejected: usize,
    pub forced: usize,
    pub final_time: f64,
    pub final_div: f64,
    pub max_div: f64,
    pub eps_ave_final: f64,
    /// Step-weighted time average of the element-mean penalty.
    pub eps_ave_time: f64,
    pub max_l2_error: Option<f64>,
    pub h1_time_integral: Option<f64>,
    pub max_t_est: Option<f64>,
    pub min_k: f64,
    pub lemma_checks: usize,
}

impl RunSummary {
    pub fn from_rows(rows: &[StepRow]) -> Self {
        let acc: Vec<&StepRow> = rows.iter().filter(|r| r.accepted).collect();
        let mut s = RunSummary {
            rejected: rows.iter().filter(|r| !r.accepted).count(),
            forced: acc.iter().filter(|r| r.forced).count(),
            steps: acc.iter().filter(|r| r.step > 0).count(),
            min_k: f64::INFINITY,
            ..Default::default()
        };
        if let Some(last) = acc.last() {
            s.final_time = last.t;
            s.final_div = last.div_norm.unwrap_or(f64::NAN);
            s.eps_ave_final = last.eps_avg.unwrap_or(f64::NAN);
        }
        let mut weighted = 0.0;
        let mut span = 0.0;
        for r in acc.iter().filter(|r| r.step > 0) {
            if let Some(e) = r.eps_avg {
                weighted += r.k * e;
                span += r.k;
            }
            s.min_k = s.min_k.min(r.k);
            if let Some(t) = r.t_est {
                s.max_t_est = Some(s.max_t_est.map_or(t, |m: f64| m.max(t)));
            }
            if r.lemma_checked == Some(true) {
                s.lemma_checks += 1;
            }
        }
        s.eps_ave_time = if span > 0.0 { weighted / span } else { f64::NAN };
        s.max_div = acc.iter().filter_map(|r| r.div_norm).fold(0.0, f64::max);
        let errs: Vec<f64> = acc.iter().filter_map(|r| r.l2_error).collect();
        if !errs.is_empty() {
            s.max_l2_error = Some(errs.iter().copied().fold(0.0, f64::max));
        }
        let h1: Vec<(f64, f64)> = acc.iter().filter_map(|r| r.h1_error.map(|e| (r.t, e))).collect();
        if !h1.is_empty() {
            s.h1_time_integral = Some(trapezoid(&h1));
        }
        s
    }
}

/// Trapezoidal integral of samples `(t, value)` on a possibly uneven grid.
pub fn trapezoid(samples: &[(f64, f64)]) -> f64 {
    samples.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum()
}

/// One row of the divergence-convergence table.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub tol: f64,
    pub div_norm: f64,
    pub rate: Option<f64>,
    pub eps_ave_final: f64,
    pub eps_ave_time: f64,
    pub max_l2_error: f64,
    pub h1_time_integral: f64,
}

pub const CONVERGENCE_HEADER: [&str; 7] =
    ["tol", "div_norm", "rate", "eps_ave_final", "eps_ave_time", "max_l2_error", "h1_time_integral"];

/// Builds table rows from `(TOL, summary)` pairs, filling the rate column between neighbours.
pub fn convergence_table(runs: &[(f64, RunSummary)]) -> Vec<ConvergenceRow> {
    let mut out: Vec<ConvergenceRow> = Vec::with_capacity(runs.len());
    for (i, (tol, s)) in runs.iter().enumerate() {
        let rate = if i == 0 {
            None
        } else {
            let (tol0, s0) = &runs[i - 1];
            convergence_rate(s0.final_div, s.final_div, *tol0, *tol).ok()
        };
        out.push(ConvergenceRow {
            tol: *tol,
            div_norm: s.final_div,
            rate,
            eps_ave_final: s.eps_ave_final,
            eps_ave_time: s.eps_ave_time,
            max_l2_error: s.max_l2_error.unwrap_or(f64::NAN),
            h1_time_integral: s.h1_time_integral.unwrap_or(f64::NAN),
        });
    }
    out
}

pub fn write_convergence<W: Write>(rows: &[ConvergenceRow], out: W) -> Result<(), RunError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CONVERGENCE_HEADER)?;
    for r in rows {
        w.write_record([
            fmt_f64(r.tol),
            fmt_f64(r.div_norm),
            r.rate.map_or_else(|| "--".to_string(), fmt_f64),
            fmt_f64(r.eps_ave_final),
            fmt_f64(r.eps_ave_time),
            fmt_f64(r.max_l2_error),
            fmt_f64(r.h1_time_integral),
        ])?;
    }
    w.flush()?;
    Ok(())
}
