//! Compressed-sparse-row matrices with a fixed finite-element pattern, and the direct solve.
//!
//! The pattern is built once per mesh; values are rewritten every timestep. Factorization
//! uses faer's sparse LU (fill-reducing ordering, partial pivoting) with a reusable symbolic
//! analysis, followed by a few steps of iterative refinement.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};

use crate::error::SolveError;
use crate::fem::DofLayout;
use crate::mesh::TriMesh;

/// Relative residual a successful solve must reach.
pub const SOLVE_TOLERANCE: f64 = 1e-10;

/// Largest normwise backward error a time step tolerates when the relative residual misses
/// [`SOLVE_TOLERANCE`].
pub const BACKWARD_ERROR_LIMIT: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Square matrix with the given per-row column sets and zero values.
    pub fn from_rows(rows: &[BTreeSet<usize>]) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for r in rows {
            col_idx.extend(r.iter().copied());
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        Self { n, row_ptr, col_idx, values: vec![0.0; nnz] }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds from dense rows, keeping the nonzeros.
    pub fn from_dense(dense: &[Vec<f64>]) -> Self {
        let rows: Vec<BTreeSet<usize>> = dense
            .iter()
            .map(|r| r.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, _)| j).collect())
            .collect();
        let mut m = Self::from_rows(&rows);
        for (i, r) in dense.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                if *v != 0.0 {
                    let p = m.position(i, j).unwrap();
                    m.values[p] = *v;
                }
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    /// Index into `values` of entry `(row, col)`, if it is in the pattern.
    #[inline]
    pub fn position(&self, row: usize, col: usize) -> Option<usize> {
        let start = self.row_ptr[row];
        let cols = &self.col_idx[start..self.row_ptr[row + 1]];
        cols.binary_search(&col).ok().map(|k| start + k)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.position(row, col).map_or(0.0, |p| self.values[p])
    }

    /// Same pattern, all values zero.
    pub fn zeroed(&self) -> Self {
        Self { values: vec![0.0; self.values.len()], ..self.clone() }
    }

    pub fn same_pattern(&self, other: &CsrMatrix) -> bool {
        self.n == other.n && self.row_ptr == other.row_ptr && self.col_idx == other.col_idx
    }

    /// Accumulates a dense `rows.len() x cols.len()` block (row-major) into the matrix.
    pub fn scatter_add(&mut self, rows: &[usize], cols: &[usize], local: &[f64]) -> Result<(), SolveError> {
        debug_assert_eq!(local.len(), rows.len() * cols.len());
        for (a, &r) in rows.iter().enumerate() {
            for (b, &c) in cols.iter().enumerate() {
                let p = self.position(r, c).ok_or(SolveError::PatternMiss { row: r, col: c })?;
                self.values[p] += local[a * cols.len() + b];
            }
        }
        Ok(())
    }

    /// `self += alpha * other`, patterns must match.
    pub fn add_scaled(&mut self, alpha: f64, other: &CsrMatrix) {
        assert!(self.same_pattern(other), "pattern mismatch in add_scaled");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
        }
    }

    /// `x^T A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        (0..self.n)
            .map(|i| {
                let (cols, vals) = self.row(i);
                x[i] * cols.iter().zip(vals).map(|(&j, &v)| v * y[j]).sum::<f64>()
            })
            .sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.dim())
            .map(|i| self.values[self.row_ptr[i]..self.row_ptr[i + 1]].iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                row[j] = v;
            }
        }
        d
    }

    /// Imposes `x[dof] = value` for each constrained dof.
    ///
    /// Constrained columns are moved to the right-hand side and zeroed, then constrained rows
    /// become identity rows. A symmetric matrix stays symmetric on the free block.
    pub fn apply_dirichlet(&mut self, rhs: &mut [f64], dofs: &[usize], values: &[f64]) {
        let mut fixed = vec![None; self.n];
        for (&d, &v) in dofs.iter().zip(values) {
            fixed[d] = Some(v);
        }
        for i in 0..self.n {
            let range = self.row_ptr[i]..self.row_ptr[i + 1];
            if let Some(g) = fixed[i] {
                for p in range {
                    self.values[p] = if self.col_idx[p] == i { 1.0 } else { 0.0 };
                }
                rhs[i] = g;
            } else {
                for p in range {
                    if let Some(g) = fixed[self.col_idx[p]] {
                        rhs[i] -= self.values[p] * g;
                        self.values[p] = 0.0;
                    }
                }
            }
        }
    }

    /// MatrixMarket coordinate dump (1-based indices), for debugging.
    pub fn to_matrix_market(&self) -> String {
        let mut s = String::from("%%MatrixMarket matrix coordinate real general\n");
        let _ = writeln!(s, "{} {} {}", self.n, self.n, self.nnz());
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let _ = writeln!(s, "{} {} {:?}", i + 1, j + 1, v);
            }
        }
        s
    }

    pub fn write_matrix_market(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_matrix_market())
    }
}

/// Union over elements of the 12x12 couplings between their velocity unknowns.
pub fn symbolic_pattern(mesh: &TriMesh, layout: &DofLayout) -> CsrMatrix {
    let mut rows = vec![BTreeSet::new(); layout.n_total()];
    for t in 0..mesh.n_triangles() {
        let dofs = layout.element_dofs(mesh, t);
        for &r in &dofs {
            rows[r].extend(dofs.iter().copied());
        }
    }
    CsrMatrix::from_rows(&rows)
}

/// Restricts the factorization to one thread so repeated runs give bitwise-identical results.
pub fn set_deterministic(on: bool) {
    faer::set_global_parallelism(if on { faer::Par::Seq } else { faer::Par::rayon(0) });
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSolveReport {
    pub residual_norm: f64,
    pub relative_residual: f64,
    /// Normwise backward error `|r|_inf / (|A|_inf |x|_inf + |b|_inf)`. Unlike the relative
    /// residual this stays near machine precision for a stable solve of an ill-conditioned system.
    pub backward_error: f64,
    pub success: bool,
    pub refinement_steps: usize,
    pub nnz: usize,
}

/// Sparse LU solver bound to one sparsity pattern.
#[derive(Debug, Clone)]
pub struct SparseLu {
    n: usize,
    symbolic_csc: SymbolicSparseColMat<usize>,
    csr_to_csc: Vec<usize>,
    symbolic_lu: SymbolicLu<usize>,
    pub max_refinement: usize,
}

impl SparseLu {
    pub fn new(pattern: &CsrMatrix) -> Result<Self, SolveError> {
        let n = pattern.dim();
        // Transpose the CSR pattern into CSC, remembering where each entry goes.
        let mut counts = vec![0usize; n + 1];
        for &c in pattern.col_idx() {
            counts[c + 1] += 1;
        }
        for j in 0..n {
            counts[j + 1] += counts[j];
        }
        let col_ptr = counts.clone();
        let mut next = counts;
        let mut row_idx = vec![0usize; pattern.nnz()];
        let mut csr_to_csc = vec![0usize; pattern.nnz()];
        for i in 0..n {
            for p in pattern.row_ptr()[i]..pattern.row_ptr()[i + 1] {
                let c = pattern.col_idx()[p];
                let q = next[c];
                next[c] += 1;
                row_idx[q] = i;
                csr_to_csc[p] = q;
            }
        }
        let symbolic_csc = SymbolicSparseColMat::new_checked(n, n, col_ptr, None, row_idx);
        let symbolic_lu = SymbolicLu::try_new(symbolic_csc.as_ref())
            .map_err(|e| SolveError::Factorization(format!("{e:?}")))?;
        Ok(Self { n, symbolic_csc, csr_to_csc, symbolic_lu, max_refinement: 4 })
    }

    /// Solves `a x = b`. `a` must have the pattern this solver was built for.
    ///
    /// A residual above [`SOLVE_TOLERANCE`] after refinement is reported through
    /// `success = false`, not as an error.
    pub fn solve(&self, a: &CsrMatrix, b: &[f64]) -> Result<(Vec<f64>, LinearSolveReport), SolveError> {
        assert_eq!(a.dim(), self.n);
        assert_eq!(a.nnz(), self.csr_to_csc.len());
        let mut csc_values = vec![0.0; a.nnz()];
        for (p, &q) in self.csr_to_csc.iter().enumerate() {
            csc_values[q] = a.values[p];
        }
        let mat = SparseColMatRef::new(self.symbolic_csc.as_ref(), &csc_values);
        let lu = Lu::try_new_with_symbolic(self.symbolic_lu.clone(), mat)
            .map_err(|e| SolveError::Factorization(format!("{e:?}")))?;

        let b_norm = norm2(b);
        let scale = if b_norm > 0.0 { b_norm } else { 1.0 };
        let mut rhs = faer::Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        lu.solve_in_place(rhs.as_mut());
        let mut x: Vec<f64> = (0..self.n).map(|i| rhs[(i, 0)]).collect();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SolveError::Factorization("non-finite solution (singular matrix)".into()));
        }

        let mut r = residual(a, &x, b);
        let mut r_norm = norm2(&r);
        let mut steps = 0;
        while r_norm / scale > SOLVE_TOLERANCE * 1e-3 && steps < self.max_refinement {
            let mut corr = faer::Mat::<f64>::from_fn(self.n, 1, |i, _| r[i]);
            lu.solve_in_place(corr.as_mut());
            let candidate: Vec<f64> = x.iter().enumerate().map(|(i, v)| v + corr[(i, 0)]).collect();
            let rc = residual(a, &candidate, b);
            let rc_norm = norm2(&rc);
            steps += 1;
            if !(rc_norm < r_norm) {
                break;
            }
            x = candidate;
            r = rc;
            r_norm = rc_norm;
        }
        let relative = r_norm / scale;
        let denom = a.norm_inf() * max_abs(&x) + max_abs(b);
        let backward_error = if denom > 0.0 { max_abs(&r) / denom } else { 0.0 };
        Ok((
            x,
            LinearSolveReport {
                residual_norm: r_norm,
                relative_residual: relative,
                backward_error,
                success: relative <= SOLVE_TOLERANCE,
                refinement_steps: steps,
                nnz: a.nnz(),
            },
        ))
    }
}

/// One-shot solve (symbolic analysis included).
pub fn solve(a: &CsrMatrix, b: &[f64]) -> Result<(Vec<f64>, LinearSolveReport), SolveError> {
    SparseLu::new(a)?.solve(a, b)
}

fn residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    let ax = a.mul_vec(x);
    b.iter().zip(ax).map(|(bi, axi)| bi - axi).collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
