//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFiniteInput(&'static str),

    #[error("eigensolver failed to converge for a {dim}x{dim} Hamiltonian")]
    EigenNonConvergence { dim: usize },

    #[error("level index {index} out of range for dimension {dim}")]
    LevelIndexOutOfRange { index: usize, dim: usize },

    #[error("temperature must be positive, got {0} K")]
    NonPositiveTemperature(f64),

    #[error("no resonance in range [{lo} T, {hi} T] for transition ({i},{j}) at {f_target} GHz")]
    NoResonanceInRange {
        i: usize,
        j: usize,
        f_target: f64,
        lo: f64,
        hi: f64,
    },

    #[error("relative parameter step must lie in (0, 0.05], got {0}")]
    InvalidStrainStep(f64),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header at {path}:{line}: {detail}")]
    MalformedHeader {
        path: String,
        line: usize,
        detail: String,
    },

    #[error("malformed row at {path}:{line}: {detail}")]
    MalformedRow {
        path: String,
        line: usize,
        detail: String,
    },

    #[error("row count mismatch in {path}: expected {expected}, got {got}")]
    RowCountMismatch {
        path: String,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value at {path}:{line}")]
    NonFiniteValue { path: String, line: usize },

    #[error("empty sheet: {0}")]
    EmptySheet(String),

    #[error(
        "evaluation point {point:?} violates the minimum clearance to current element ({i},{j})"
    )]
    ClearanceViolation {
        point: [usize; 3],
        i: usize,
        j: usize,
    },

    #[error("sample point {point:?} um lies outside the field grid")]
    OutOfGridBounds { point: [f64; 3] },

    #[error("region selects no grid cells")]
    EmptyRegion,

    #[error("axis not strictly monotone: {0}")]
    AxisNotMonotone(&'static str),

    #[error("map is inconsistent: {0}")]
    MalformedMap(String),

    #[error("value {value} not found on the {axis} axis")]
    NotOnAxis { axis: &'static str, value: f64 },

    #[error("normalization pair is degenerate: B1 = B2 = {0} T")]
    DegenerateNormalizationPair(f64),

    #[error("coupled-mode matrix is singular at f = {f} GHz (zero loss rate on some mode)")]
    SingularSystem { f: f64 },

    #[error(
        "integrator accuracy failure: step-halving error estimate {estimate:.3e} exceeds {tol:.3e}"
    )]
    AccuracyFailure { estimate: f64, tol: f64 },

    #[error("time step {step} us does not resolve the fastest rate (limit {limit} us)")]
    StepTooLarge { step: f64, limit: f64 },

    #[error("no resolvable dip in column (depth {depth:.3e} below threshold {threshold:.3e})")]
    NoDip { depth: f64, threshold: f64 },

    #[error("crystal box does not intersect the field grid")]
    CrystalOutsideGrid,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
