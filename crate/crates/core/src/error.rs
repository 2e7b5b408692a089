use thiserror::Error;

/// Errors surfaced by the numerical kernels and the simulation engine.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    /// A matrix handed to QR has (numerically) dependent columns.
    #[error("matrix is rank deficient (smallest singular value below tolerance)")]
    RankDeficient,

    /// The Gram matrix of a least-squares design is numerically singular.
    /// `column` identifies the offending column when the solve happens per
    /// column of a larger system.
    #[error("least-squares system is singular{}", column_suffix(.column))]
    SingularSystem { column: Option<usize> },

    /// A symmetric eigensolver was given a matrix that is not symmetric.
    #[error("matrix is not symmetric within tolerance")]
    NotSymmetric,

    /// Operands have incompatible shapes.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A weight matrix was requested for a graph with a degree-zero node.
    #[error("graph has an isolated node")]
    IsolatedNode,

    /// Consensus cannot contract: the weight matrix has gamma >= 1.
    #[error("consensus does not contract (gamma = {gamma})")]
    NoContraction { gamma: f64 },

    /// A non-symmetric weight matrix that cannot be symmetrized by the
    /// degree similarity transform.
    #[error("weight matrix spectrum is not analyzable via symmetrization")]
    NotAnalyzable,

    /// An input that must have orthonormal columns does not.
    #[error("matrix columns are not orthonormal within tolerance")]
    NotOrthonormal,

    /// The QR step inside an iteration collapsed to a rank-deficient basis.
    #[error("orthonormalization collapsed: iterate lost rank")]
    RankCollapse,

    /// Problem dimensions are inconsistent (e.g. r > min(n, q)).
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    /// More nodes than columns to distribute.
    #[error("cannot split {q} columns across {l} nodes")]
    TooManyNodes { q: usize, l: usize },

    /// No connected graph was found within the attempt budget.
    #[error("failed to sample a connected graph in {attempts} attempts")]
    Disconnected { attempts: u32 },

    /// A run configuration is internally inconsistent.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

fn column_suffix(column: &Option<usize>) -> String {
    match column {
        Some(k) => format!(" (column {k})"),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, Error>;
