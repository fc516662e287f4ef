//! Global matrices of the velocity-only penalty scheme and the per-step linear system.
//!
//! Element loops compute local blocks in parallel and scatter them serially in element order,
//! so assembled values are independent of the thread count.

use rayon::prelude::*;

use crate::error::FemError;
use crate::fem::{DofLayout, QuadratureRule, Tabulation};
use crate::mesh::TriMesh;
use crate::sparse::{symbolic_pattern, CsrMatrix};

/// Vector-valued function of `(x, y, t)`.
pub type VectorFn<'a> = &'a (dyn Fn(f64, f64, f64) -> [f64; 2] + Sync);

struct ElementCache {
    dofs: [usize; 12],
    /// CSR value index of local entry `(i, j)` at `12 i + j`.
    positions: [usize; 144],
    area: f64,
    /// Physical basis gradients at the degree-5 points.
    grads5: Vec<[[f64; 2]; 6]>,
    /// Unscaled grad-div block, `int div(phi_i) div(phi_j)`.
    graddiv: [f64; 144],
}

/// Cached element data, pattern and the constant matrices for one mesh.
pub struct Assembler {
    layout: DofLayout,
    pattern: CsrMatrix,
    elements: Vec<ElementCache>,
    tab5: Tabulation,
    tab7: Tabulation,
    mass: CsrMatrix,
    stiffness: CsrMatrix,
}

/// Inputs of one backward Euler step.
pub struct StepSystemSpec<'a> {
    pub nu: f64,
    pub k: f64,
    /// Advecting velocity of the linearized convection term.
    pub u_star: &'a [f64],
    pub u_n: &'a [f64],
    pub eps: &'a [f64],
    pub forcing: Option<VectorFn<'a>>,
    pub t_next: f64,
    pub boundary: VectorFn<'a>,
}

impl Assembler {
    pub fn new(mesh: &TriMesh, layout: &DofLayout) -> Result<Self, FemError> {
        let tab5 = Tabulation::new(5)?;
        let tab7 = Tabulation::new(7)?;
        let tab2 = Tabulation::new(2)?;
        let pattern = symbolic_pattern(mesh, layout);

        let elements = (0..mesh.n_triangles())
            .into_par_iter()
            .map(|t| -> Result<ElementCache, FemError> {
                let map = mesh.element_geometry(t)?;
                let dofs = layout.element_dofs(mesh, t);
                let mut positions = [0usize; 144];
                for i in 0..12 {
                    for j in 0..12 {
                        positions[12 * i + j] = pattern.position(dofs[i], dofs[j]).expect("pattern covers element");
                    }
                }
                let area = map.area();
                let grads2 = tab2.physical_grads(&map);
                let mut graddiv = [0.0; 144];
                for (g, w) in grads2.iter().zip(&tab2.rule.weights) {
                    // div of local shape function 2a+c is the c-th derivative of phi_a
                    let mut div = [0.0; 12];
                    for a in 0..6 {
                        div[2 * a] = g[a][0];
                        div[2 * a + 1] = g[a][1];
                    }
                    for i in 0..12 {
                        for j in 0..12 {
                            graddiv[12 * i + j] += w * area * div[i] * div[j];
                        }
                    }
                }
                Ok(ElementCache { dofs, positions, area, grads5: tab5.physical_grads(&map), graddiv })
            })
            .collect::<Result<Vec<_>, _>>()?;

        let mut asm = Self {
            layout: layout.clone(),
            mass: pattern.zeroed(),
            stiffness: pattern.zeroed(),
            pattern,
            elements,
            tab5,
            tab7,
        };
        asm.mass = asm.build_mass();
        asm.stiffness = asm.build_stiffness();
        Ok(asm)
    }

    pub fn layout(&self) -> &DofLayout {
        &self.layout
    }

    pub fn pattern(&self) -> &CsrMatrix {
        &self.pattern
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    /// Vector mass matrix `int phi_i . phi_j`.
    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    /// Vector stiffness matrix `int grad phi_i : grad phi_j` (without viscosity).
    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    /// L² norm of a velocity field via the mass matrix.
    pub fn l2_norm(&self, v: &[f64]) -> f64 {
        self.mass.bilinear(v, v).max(0.0).sqrt()
    }

    fn scatter_componentwise(&self, target: &mut CsrMatrix, e: &ElementCache, scalar: &[f64; 36]) {
        for a in 0..6 {
            for b in 0..6 {
                let v = scalar[6 * a + b];
                for c in 0..2 {
                    target.values[e.positions[12 * (2 * a + c) + 2 * b + c]] += v;
                }
            }
        }
    }

    fn build_mass(&self) -> CsrMatrix {
        let locals: Vec<[f64; 36]> = self
            .elements
            .par_iter()
            .map(|e| {
                let mut m = [0.0; 36];
                for (phi, w) in self.tab5.values.iter().zip(&self.tab5.rule.weights) {
                    for a in 0..6 {
                        for b in 0..6 {
                            m[6 * a + b] += w * e.area * phi[a] * phi[b];
                        }
                    }
                }
                m
            })
            .collect();
        let mut out = self.pattern.zeroed();
        for (e, m) in self.elements.iter().zip(&locals) {
            self.scatter_componentwise(&mut out, e, m);
        }
        out
    }

    fn build_stiffness(&self) -> CsrMatrix {
        let locals: Vec<[f64; 36]> = self
            .elements
            .par_iter()
            .map(|e| {
                let mut s = [0.0; 36];
                for (g, w) in e.grads5.iter().zip(&self.tab5.rule.weights) {
                    for a in 0..6 {
                        for b in 0..6 {
                            s[6 * a + b] += w * e.area * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                        }
                    }
                }
                s
            })
            .collect();
        let mut out = self.pattern.zeroed();
        for (e, s) in self.elements.iter().zip(&locals) {
            self.scatter_componentwise(&mut out, e, s);
        }
        out
    }

    fn check_eps(&self, eps: &[f64]) -> Result<(), FemError> {
        if eps.len() != self.elements.len() {
            return Err(FemError::LayoutMismatch { expected: self.elements.len(), got: eps.len() });
        }
        match eps.iter().position(|&e| !(e > 0.0 && e.is_finite())) {
            Some(t) => Err(FemError::NonPositivePenalty { element: t, value: eps[t] }),
            None => Ok(()),
        }
    }

    fn check_field(&self, v: &[f64]) -> Result<(), FemError> {
        if v.len() != self.layout.n_total() {
            return Err(FemError::LayoutMismatch { expected: self.layout.n_total(), got: v.len() });
        }
        Ok(())
    }

    fn add_graddiv_into(&self, target: &mut CsrMatrix, eps: &[f64]) {
        for (e, &ep) in self.elements.iter().zip(eps) {
            let s = 1.0 / ep;
            for (p, v) in e.positions.iter().zip(&e.graddiv) {
                target.values[*p] += s * v;
            }
        }
    }

    /// Penalty matrix `sum_T eps_T^{-1} int_T div(phi_i) div(phi_j)`.
    pub fn assemble_graddiv(&self, eps: &[f64]) -> Result<CsrMatrix, FemError> {
        self.check_eps(eps)?;
        let mut out = self.pattern.zeroed();
        self.add_graddiv_into(&mut out, eps);
        Ok(out)
    }

    fn convection_locals(&self, u_star: &[f64]) -> Vec<[f64; 36]> {
        self.elements
            .par_iter()
            .map(|e| {
                // t[a][b] = int phi_a (u* . grad phi_b)
                let mut t = [0.0; 36];
                for ((phi, g), w) in self.tab5.values.iter().zip(&e.grads5).zip(&self.tab5.rule.weights) {
                    let mut u = [0.0; 2];
                    for a in 0..6 {
                        u[0] += phi[a] * u_star[e.dofs[2 * a]];
                        u[1] += phi[a] * u_star[e.dofs[2 * a + 1]];
                    }
                    let wa = w * e.area;
                    for b in 0..6 {
                        let adv = u[0] * g[b][0] + u[1] * g[b][1];
                        for a in 0..6 {
                            t[6 * a + b] += wa * phi[a] * adv;
                        }
                    }
                }
                let mut c = [0.0; 36];
                for a in 0..6 {
                    for b in 0..6 {
                        c[6 * a + b] = 0.5 * (t[6 * a + b] - t[6 * b + a]);
                    }
                }
                c
            })
            .collect()
    }

    /// Skew-symmetric convection matrix for the advecting field `u_star`.
    pub fn assemble_convection(&self, u_star: &[f64]) -> Result<CsrMatrix, FemError> {
        self.check_field(u_star)?;
        let mut out = self.pattern.zeroed();
        for (e, c) in self.elements.iter().zip(&self.convection_locals(u_star)) {
            self.scatter_componentwise(&mut out, e, c);
        }
        Ok(out)
    }

    /// Load vector `int f(., t) . phi_i`.
    pub fn assemble_forcing(&self, mesh: &TriMesh, f: VectorFn<'_>, t: f64) -> Result<Vec<f64>, FemError> {
        let locals: Vec<[f64; 12]> = (0..self.elements.len())
            .into_par_iter()
            .map(|el| -> Result<[f64; 12], FemError> {
                let map = mesh.element_geometry(el)?;
                let area = self.elements[el].area;
                let mut b = [0.0; 12];
                for ((l, phi), w) in self.tab7.rule.points.iter().zip(&self.tab7.values).zip(&self.tab7.rule.weights) {
                    let [x, y] = map.map([l[1], l[2]]);
                    let fv = f(x, y, t);
                    for a in 0..6 {
                        b[2 * a] += w * area * fv[0] * phi[a];
                        b[2 * a + 1] += w * area * fv[1] * phi[a];
                    }
                }
                Ok(b)
            })
            .collect::<Result<_, _>>()?;
        let mut out = vec![0.0; self.layout.n_total()];
        for (e, b) in self.elements.iter().zip(&locals) {
            for (d, v) in e.dofs.iter().zip(b) {
                out[*d] += v;
            }
        }
        Ok(out)
    }

    /// Matrix and right-hand side of one step, before boundary conditions.
    pub fn build_unconstrained(&self, mesh: &TriMesh, spec: &StepSystemSpec<'_>) -> Result<(CsrMatrix, Vec<f64>), FemError> {
        if !(spec.k > 0.0 && spec.k.is_finite()) {
            return Err(FemError::InvalidParameter(format!("timestep must be positive, got {}", spec.k)));
        }
        if !(spec.nu > 0.0 && spec.nu.is_finite()) {
            return Err(FemError::InvalidParameter(format!("viscosity must be positive, got {}", spec.nu)));
        }
        self.check_eps(spec.eps)?;
        self.check_field(spec.u_star)?;
        self.check_field(spec.u_n)?;

        let inv_k = 1.0 / spec.k;
        let mut a = self.pattern.zeroed();
        for ((v, m), s) in a.values.iter_mut().zip(&self.mass.values).zip(&self.stiffness.values) {
            *v = inv_k * m + spec.nu * s;
        }
        for (e, c) in self.elements.iter().zip(&self.convection_locals(spec.u_star)) {
            self.scatter_componentwise(&mut a, e, c);
        }
        self.add_graddiv_into(&mut a, spec.eps);

        let mut b = self.mass.mul_vec(spec.u_n);
        for v in &mut b {
            *v *= inv_k;
        }
        if let Some(f) = spec.forcing {
            let load = self.assemble_forcing(mesh, f, spec.t_next)?;
            for (bi, li) in b.iter_mut().zip(load) {
                *bi += li;
            }
        }
        Ok((a, b))
    }

    /// `A = M/k + nu K + N(u*) + G(eps)`, `b = M u_n / k + F(t_next)`, with boundary values imposed.
    pub fn build_step_system(&self, mesh: &TriMesh, spec: &StepSystemSpec<'_>) -> Result<(CsrMatrix, Vec<f64>), FemError> {
        let (mut a, mut b) = self.build_unconstrained(mesh, spec)?;
        let values = self.boundary_values(mesh, spec.boundary, spec.t_next);
        a.apply_dirichlet(&mut b, self.layout.dirichlet_dofs(), &values);
        Ok((a, b))
    }

    /// Boundary data at the constrained dofs, in `dirichlet_dofs` order.
    pub fn boundary_values(&self, mesh: &TriMesh, g: VectorFn<'_>, t: f64) -> Vec<f64> {
        self.layout
            .dirichlet_dofs()
            .iter()
            .map(|&d| {
                let [x, y] = mesh.point(d / 2);
                g(x, y, t)[d % 2]
            })
            .collect()
    }
}

/// Degree-5 rule used by the assembler, exposed for independent checks.
pub fn assembly_rule() -> QuadratureRule {
    crate::fem::quad_rule(5).expect("degree 5 is supported")
}
