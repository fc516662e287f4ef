use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("i/o error reading mesh: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed .msh at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unsupported .msh format version {0} (expected 2.2 or 4.1)")]
    UnsupportedVersion(String),
    #[error("unsupported element type {0}: only 3-node triangles (2) and 2-node lines (1) are accepted")]
    UnsupportedElement(i64),
    #[error("element references unknown node {0}")]
    DanglingNode(usize),
    #[error("mesh has no nodes or no triangles")]
    Empty,
    #[error("triangle {0} has zero area")]
    Degenerate(usize),
    #[error("edge ({0}, {1}) is shared by more than two triangles")]
    NonManifoldEdge(usize, usize),
    #[error("boundary line elements do not match the topological boundary")]
    BoundaryMismatch,
}

#[derive(Debug, Error)]
pub enum FemError {
    #[error("no quadrature rule of degree {0} (supported: 2, 4, 5, 7)")]
    UnsupportedDegree(usize),
    #[error("penalty parameter of element {element} must be positive, got {value}")]
    NonPositivePenalty { element: usize, value: f64 },
    #[error("vector length {got} does not match layout size {expected}")]
    LayoutMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("sparse LU factorization failed: {0}")]
    Factorization(String),
    #[error("linear solve did not converge: relative residual {0:e}")]
    Residual(f64),
    #[error("entry ({row}, {col}) is outside the sparsity pattern")]
    PatternMiss { row: usize, col: usize },
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("step {step} (t = {time}): {source}")]
    Solve {
        step: usize,
        time: f64,
        #[source]
        source: SolveError,
    },
    #[error("step {step}: divergence norm {div} exceeds the bound {bound} although every element met its local tolerance")]
    ToleranceLemma { step: usize, div: f64, bound: f64 },
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
