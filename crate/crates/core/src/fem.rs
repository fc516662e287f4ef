//! P2 Lagrange velocity space on triangles: basis, quadrature and degree-of-freedom layout.

use crate::error::FemError;
use crate::mesh::{AffineMap, TriMesh};

/// Values of the six P2 basis functions at a point given in barycentric coordinates,
/// together with their gradients in reference coordinates `(xi, eta) = (l1, l2)`.
///
/// Local numbering: vertices 0, 1, 2, then midpoints of edges (0,1), (1,2), (2,0).
pub fn p2_basis(l: [f64; 3]) -> ([f64; 6], [[f64; 2]; 6]) {
    const DL: [[f64; 2]; 3] = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
    let mut val = [0.0; 6];
    let mut grad = [[0.0; 2]; 6];
    for i in 0..3 {
        val[i] = l[i] * (2.0 * l[i] - 1.0);
        let s = 4.0 * l[i] - 1.0;
        grad[i] = [s * DL[i][0], s * DL[i][1]];
    }
    for (k, (i, j)) in [(0, 1), (1, 2), (2, 0)].into_iter().enumerate() {
        val[3 + k] = 4.0 * l[i] * l[j];
        grad[3 + k] = [
            4.0 * (l[j] * DL[i][0] + l[i] * DL[j][0]),
            4.0 * (l[j] * DL[i][1] + l[i] * DL[j][1]),
        ];
    }
    (val, grad)
}

/// Symmetric quadrature on the reference triangle. Weights sum to one; multiply by the
/// element area when integrating.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    /// Barycentric coordinates of the points.
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Integrates `f(xi, eta)` over the reference triangle (area 1/2).
    pub fn integrate_reference(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        0.5 * self
            .points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * f(p[1], p[2]))
            .sum::<f64>()
    }
}

fn orbit3(points: &mut Vec<[f64; 3]>, weights: &mut Vec<f64>, a: f64, w: f64) {
    let b = 1.0 - 2.0 * a;
    for p in [[a, a, b], [a, b, a], [b, a, a]] {
        points.push(p);
        weights.push(w);
    }
}

/// Quadrature rule exact for polynomials up to `degree` (2, 4, 5 or 7).
pub fn quad_rule(degree: usize) -> Result<QuadratureRule, FemError> {
    let mut points = Vec::new();
    let mut weights = Vec::new();
    match degree {
        2 => orbit3(&mut points, &mut weights, 1.0 / 6.0, 1.0 / 3.0),
        4 => {
            orbit3(&mut points, &mut weights, 0.445_948_490_915_964_886_318_329_253_883, 0.223_381_589_678_011_465_944_827_323_703);
            orbit3(&mut points, &mut weights, 0.091_576_213_509_770_743_459_571_463_402, 0.109_951_743_655_321_867_388_506_009_630);
        }
        5 => {
            // Radon's 7-point rule.
            let s = 15f64.sqrt();
            points.push([1.0 / 3.0; 3]);
            weights.push(9.0 / 40.0);
            orbit3(&mut points, &mut weights, (6.0 - s) / 21.0, (155.0 - s) / 1200.0);
            orbit3(&mut points, &mut weights, (6.0 + s) / 21.0, (155.0 + s) / 1200.0);
        }
        7 => {
            // Collapsed (conical) product of 5-point and 4-point Gauss-Legendre rules.
            let r70 = (10.0f64 / 7.0).sqrt();
            let gl5 = [
                (0.0, 128.0 / 225.0),
                (-(5.0 - 2.0 * r70).sqrt() / 3.0, (322.0 + 13.0 * 70f64.sqrt()) / 900.0),
                ((5.0 - 2.0 * r70).sqrt() / 3.0, (322.0 + 13.0 * 70f64.sqrt()) / 900.0),
                (-(5.0 + 2.0 * r70).sqrt() / 3.0, (322.0 - 13.0 * 70f64.sqrt()) / 900.0),
                ((5.0 + 2.0 * r70).sqrt() / 3.0, (322.0 - 13.0 * 70f64.sqrt()) / 900.0),
            ];
            let r65 = (6.0f64 / 5.0).sqrt();
            let inner = (3.0 / 7.0 - 2.0 / 7.0 * r65).sqrt();
            let outer = (3.0 / 7.0 + 2.0 / 7.0 * r65).sqrt();
            let wi = (18.0 + 30f64.sqrt()) / 36.0;
            let wo = (18.0 - 30f64.sqrt()) / 36.0;
            let gl4 = [(-outer, wo), (-inner, wi), (inner, wi), (outer, wo)];
            for &(x, wx) in &gl5 {
                let u = 0.5 * (1.0 + x);
                for &(y, wy) in &gl4 {
                    let v = 0.5 * (1.0 + y);
                    let xi = u;
                    let eta = (1.0 - u) * v;
                    points.push([1.0 - xi - eta, xi, eta]);
                    weights.push(0.5 * wx * wy * (1.0 - u));
                }
            }
        }
        d => return Err(FemError::UnsupportedDegree(d)),
    }
    Ok(QuadratureRule { points, weights, degree })
}

/// Basis values and reference gradients tabulated at the points of a rule.
#[derive(Debug, Clone)]
pub struct Tabulation {
    pub rule: QuadratureRule,
    pub values: Vec<[f64; 6]>,
    pub ref_grads: Vec<[[f64; 2]; 6]>,
}

impl Tabulation {
    pub fn new(degree: usize) -> Result<Self, FemError> {
        let rule = quad_rule(degree)?;
        let (values, ref_grads) = rule.points.iter().map(|&l| p2_basis(l)).unzip();
        Ok(Self { rule, values, ref_grads })
    }

    /// Physical gradients of the six basis functions at every quadrature point.
    pub fn physical_grads(&self, map: &AffineMap) -> Vec<[[f64; 2]; 6]> {
        self.ref_grads
            .iter()
            .map(|g| {
                let mut out = [[0.0; 2]; 6];
                for (o, gi) in out.iter_mut().zip(g) {
                    *o = map.push_gradient(*gi);
                }
                out
            })
            .collect()
    }
}

/// Global numbering of the vector P2 velocity unknowns.
///
/// Node-major: the two components of point `i` are `2i` and `2i + 1`.
#[derive(Debug, Clone)]
pub struct DofLayout {
    n_scalar: usize,
    dirichlet: Vec<usize>,
    is_dirichlet: Vec<bool>,
}

impl DofLayout {
    /// Constrains both components at every boundary vertex and boundary edge midpoint.
    pub fn new(mesh: &TriMesh) -> Self {
        let n_scalar = mesh.n_points();
        let mut dirichlet = Vec::new();
        let mut is_dirichlet = vec![false; 2 * n_scalar];
        for p in mesh.boundary_points() {
            for c in 0..2 {
                dirichlet.push(2 * p + c);
                is_dirichlet[2 * p + c] = true;
            }
        }
        dirichlet.sort_unstable();
        Self { n_scalar, dirichlet, is_dirichlet }
    }

    pub fn n_scalar(&self) -> usize {
        self.n_scalar
    }

    pub fn n_total(&self) -> usize {
        2 * self.n_scalar
    }

    #[inline]
    pub fn dof(&self, point: usize, component: usize) -> usize {
        2 * point + component
    }

    pub fn dirichlet_dofs(&self) -> &[usize] {
        &self.dirichlet
    }

    pub fn is_dirichlet(&self, dof: usize) -> bool {
        self.is_dirichlet[dof]
    }

    pub fn n_interior(&self) -> usize {
        self.n_total() - self.dirichlet.len()
    }

    /// The twelve velocity unknowns of a triangle, local index `2a + c` for basis `a`, component `c`.
    pub fn element_dofs(&self, mesh: &TriMesh, t: usize) -> [usize; 12] {
        let pts = mesh.element_points(t);
        let mut out = [0; 12];
        for (a, &p) in pts.iter().enumerate() {
            out[2 * a] = 2 * p;
            out[2 * a + 1] = 2 * p + 1;
        }
        out
    }
}

/// Coefficients of a P2 velocity field with the time it represents.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub coeffs: Vec<f64>,
    pub time: f64,
}

impl VelocityField {
    pub fn zeros(layout: &DofLayout, time: f64) -> Self {
        Self { coeffs: vec![0.0; layout.n_total()], time }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Value of the field on element `t` at barycentric point `l`.
    pub fn eval(&self, mesh: &TriMesh, t: usize, basis_values: &[f64; 6]) -> [f64; 2] {
        let pts = mesh.element_points(t);
        let mut v = [0.0; 2];
        for (a, &p) in pts.iter().enumerate() {
            v[0] += basis_values[a] * self.coeffs[2 * p];
            v[1] += basis_values[a] * self.coeffs[2 * p + 1];
        }
        v
    }

    /// Velocity gradient `[[du/dx, du/dy], [dv/dx, dv/dy]]` from physical basis gradients.
    pub fn eval_grad(&self, mesh: &TriMesh, t: usize, grads: &[[f64; 2]; 6]) -> [[f64; 2]; 2] {
        let pts = mesh.element_points(t);
        let mut g = [[0.0; 2]; 2];
        for (a, &p) in pts.iter().enumerate() {
            for c in 0..2 {
                let u = self.coeffs[2 * p + c];
                g[c][0] += u * grads[a][0];
                g[c][1] += u * grads[a][1];
            }
        }
        g
    }

    /// Overwrites the constrained entries with `g(x, y, self.time)`.
    pub fn impose_dirichlet(&mut self, mesh: &TriMesh, layout: &DofLayout, g: impl Fn(f64, f64, f64) -> [f64; 2]) {
        for p in mesh.boundary_points() {
            let [x, y] = mesh.point(p);
            let v = g(x, y, self.time);
            self.coeffs[layout.dof(p, 0)] = v[0];
            self.coeffs[layout.dof(p, 1)] = v[1];
        }
    }
}

/// Nodal P2 interpolant (values at vertices and edge midpoints) of `u(x, y, t)`.
pub fn interpolate_exact(
    u: impl Fn(f64, f64, f64) -> [f64; 2],
    mesh: &TriMesh,
    layout: &DofLayout,
    t: f64,
) -> VelocityField {
    let mut field = VelocityField::zeros(layout, t);
    for p in 0..mesh.n_points() {
        let [x, y] = mesh.point(p);
        let v = u(x, y, t);
        field.coeffs[layout.dof(p, 0)] = v[0];
        field.coeffs[layout.dof(p, 1)] = v[1];
    }
    field
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    /// Exact integral of xi^m eta^n over the reference triangle.
    fn monomial_integral(m: u32, n: u32) -> f64 {
        factorial(m) * factorial(n) / factorial(m + n + 2)
    }

    #[test]
    fn nodal_property() {
        let nodes = [
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.5, 0.5, 0.0],
            [0.0, 0.5, 0.5],
            [0.5, 0.0, 0.5],
        ];
        for (i, n) in nodes.iter().enumerate() {
            let (v, _) = p2_basis(*n);
            for (j, vj) in v.iter().enumerate() {
                assert_eq!(*vj, if i == j { 1.0 } else { 0.0 }, "basis {j} at node {i}");
            }
        }
    }

    #[test]
    fn centroid_values() {
        let (v, _) = p2_basis([1.0 / 3.0; 3]);
        for vi in &v[..3] {
            assert_relative_eq!(*vi, -1.0 / 9.0, epsilon = 1e-15);
        }
        assert_relative_eq!(v.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn partition_of_unity_at_all_rules() {
        for d in [2, 4, 5, 7] {
            let rule = quad_rule(d).unwrap();
            for p in &rule.points {
                let (v, g) = p2_basis(*p);
                assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-13);
                let gs = g.iter().fold([0.0, 0.0], |a, b| [a[0] + b[0], a[1] + b[1]]);
                assert!(gs[0].abs() < 1e-13 && gs[1].abs() < 1e-13);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let l = [0.2, 0.3, 0.5];
        let (_, g) = p2_basis(l);
        let h = 1e-6;
        let at = |xi: f64, eta: f64| p2_basis([1.0 - xi - eta, xi, eta]).0;
        let (xi, eta) = (l[1], l[2]);
        for a in 0..6 {
            let dx = (at(xi + h, eta)[a] - at(xi - h, eta)[a]) / (2.0 * h);
            let dy = (at(xi, eta + h)[a] - at(xi, eta - h)[a]) / (2.0 * h);
            assert_relative_eq!(g[a][0], dx, epsilon = 1e-8);
            assert_relative_eq!(g[a][1], dy, epsilon = 1e-8);
        }
    }

    #[test]
    fn quadrature_exactness_table() {
        for d in [2usize, 4, 5, 7] {
            let rule = quad_rule(d).unwrap();
            assert!(rule.weights.iter().all(|&w| w > 0.0));
            assert_relative_eq!(rule.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
            for m in 0..=d as u32 {
                for n in 0..=(d as u32 - m) {
                    let q = rule.integrate_reference(|x, y| x.powi(m as i32) * y.powi(n as i32));
                    let exact = monomial_integral(m, n);
                    assert!((q - exact).abs() < 1e-14, "degree {d}: x^{m} y^{n}: {q} vs {exact}");
                }
            }
        }
    }

    #[test]
    fn degree5_specific_values() {
        let rule = quad_rule(5).unwrap();
        assert_eq!(rule.len(), 7);
        assert_relative_eq!(rule.integrate_reference(|_, _| 1.0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(rule.integrate_reference(|x, y| x * x * y * y), 1.0 / 180.0, epsilon = 1e-15);
        // x^6 is beyond the rule's degree.
        let q = rule.integrate_reference(|x, _| x.powi(6));
        assert!((q - monomial_integral(6, 0)).abs() > 1e-6);
    }

    #[test]
    fn unsupported_degree() {
        assert!(matches!(quad_rule(3), Err(FemError::UnsupportedDegree(3))));
    }

    #[test]
    fn layout_counts() {
        let mesh = TriMesh::rectangle(0.0, 1.0, 0.0, 1.0, 3, 3).unwrap();
        let layout = DofLayout::new(&mesh);
        assert_eq!(layout.n_scalar(), mesh.n_vertices() + mesh.n_edges());
        let d = layout.dirichlet_dofs();
        assert!(d.windows(2).all(|w| w[0] < w[1]));
        assert!(d.iter().all(|&i| i < layout.n_total()));
        // 12 boundary edges, 12 boundary vertices, two components each.
        assert_eq!(d.len(), 2 * 24);
        assert_eq!(layout.n_interior(), layout.n_total() - d.len());
    }

    #[test]
    fn interpolate_zero_and_linear() {
        let mesh = TriMesh::rectangle(0.0, 1.0, 0.0, 1.0, 2, 3).unwrap();
        let layout = DofLayout::new(&mesh);
        let z = interpolate_exact(|_, _, _| [0.0, 0.0], &mesh, &layout, 0.0);
        assert!(z.coeffs.iter().all(|&c| c == 0.0));

        let lin = |x: f64, y: f64, _t: f64| [2.0 * x - y + 0.5, x + 3.0 * y];
        let f = interpolate_exact(lin, &mesh, &layout, 0.0);
        let tab = Tabulation::new(7).unwrap();
        for t in 0..mesh.n_triangles() {
            let map = mesh.element_geometry(t).unwrap();
            for (q, l) in tab.rule.points.iter().enumerate() {
                let [x, y] = map.map([l[1], l[2]]);
                let v = f.eval(&mesh, t, &tab.values[q]);
                let e = lin(x, y, 0.0);
                assert!((v[0] - e[0]).abs() < 1e-13 && (v[1] - e[1]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn quadratic_reproduction() {
        let mesh = TriMesh::rectangle(-1.0, 1.0, 0.0, 2.0, 3, 2).unwrap();
        let layout = DofLayout::new(&mesh);
        let quad = |x: f64, y: f64, _t: f64| [x * x - 2.0 * x * y + 0.3, y * y + x - 1.0];
        let f = interpolate_exact(quad, &mesh, &layout, 0.0);
        let tab = Tabulation::new(5).unwrap();
        for t in 0..mesh.n_triangles() {
            let map = mesh.element_geometry(t).unwrap();
            let grads = tab.physical_grads(&map);
            for (q, l) in tab.rule.points.iter().enumerate() {
                let [x, y] = map.map([l[1], l[2]]);
                let v = f.eval(&mesh, t, &tab.values[q]);
                let e = quad(x, y, 0.0);
                assert!((v[0] - e[0]).abs() < 1e-12 && (v[1] - e[1]).abs() < 1e-12);
                let g = f.eval_grad(&mesh, t, &grads[q]);
                assert!((g[0][0] - (2.0 * x - 2.0 * y)).abs() < 1e-12);
                assert!((g[1][1] - 2.0 * y).abs() < 1e-12);
            }
        }
    }
}
