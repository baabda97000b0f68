use thiserror::Error;

/// Errors raised while building or validating a planar configuration.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("configuration needs at least one body")]
    NoBodies,
    #[error("mass {index} must be positive, got {value}")]
    NonPositiveMass { index: usize, value: f64 },
    #[error("period must be positive and finite, got {0}")]
    BadPeriod(f64),
    #[error("eccentricity must lie in [0, 1), got {0}")]
    EccentricityOutOfRange(f64),
    #[error("{what} must be non-negative and finite, got {value}")]
    BadLength { what: &'static str, value: f64 },
    #[error("expected {expected} per-body values, got {got}")]
    BodyCountMismatch { expected: usize, got: usize },
    #[error("declared symmetry point {t0} fails: max mismatch {mismatch:e}")]
    SymmetryViolated { t0: f64, mismatch: f64 },
    #[error("{0} is not a declared symmetry point of this configuration")]
    UndeclaredSymmetry(f64),
    #[error(transparent)]
    Table(#[from] TableError),
}

/// Parse and validation failures for tabulated orbit files.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TableError {
    #[error("missing `# masses:` header line")]
    MissingMasses,
    #[error("missing `# period:` header line")]
    MissingPeriod,
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: expected {expected} columns, found {found}")]
    ColumnCount { line: usize, expected: usize, found: usize },
    #[error("need at least two rows, found {0}")]
    TooFewRows(usize),
    #[error("theta grid must start at 0, found {0}")]
    GridStart(f64),
    #[error("theta grid must end at the period {period}, found {last}")]
    GridEnd { last: f64, period: f64 },
    #[error("line {line}: theta grid is not strictly increasing")]
    NonMonotoneGrid { line: usize },
    #[error("line {line}: radius {value} is negative")]
    NegativeRadius { line: usize, value: f64 },
    #[error("line {line}: dilation {value} is negative")]
    NegativeDilation { line: usize, value: f64 },
    #[error("first and last rows differ by {mismatch:e}; the table does not close periodically")]
    OpenClosure { mismatch: f64 },
    #[error("i/o error: {0}")]
    Io(String),
}

/// Failures of the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericError {
    #[error("{0}")]
    Domain(String),
    #[error("integration blew up at t = {t}")]
    BlowUp { t: f64 },
    #[error("dilation vanished at phase {theta} outside a guarded collision window")]
    ZeroDilation { theta: f64 },
    #[error("inconsistent bracket at theta = {theta}: {message}")]
    InconsistentBracket { theta: f64, message: String },
    #[error("at theta = {theta}: {source}")]
    AtPhase {
        theta: f64,
        #[source]
        source: Box<NumericError>,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

impl NumericError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        NumericError::Domain(msg.into())
    }
}
