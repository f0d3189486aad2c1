use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("qubit index {index} out of range for {n} qubits")]
    QubitOutOfRange { index: usize, n: usize },

    #[error("subset must be nonempty")]
    EmptySubset,

    #[error("invalid bipartition: {0}")]
    InvalidBipartition(String),

    #[error("matrix is not Hermitian (max deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("invalid Pauli string {0:?}")]
    InvalidPauli(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("unknown state name {0:?}")]
    UnknownState(String),

    #[error("noise parameter {0} outside [0, 1]")]
    NoiseOutOfRange(f64),

    #[error("no catalog witness for ({state}, {id})")]
    UnknownWitness { state: String, id: usize },

    #[error("invalid subset family: {0}")]
    InvalidFamily(String),

    #[error("solver did not converge after {iterations} iterations (gap {gap:.3e}, residual {residual:.3e})")]
    SolverNonConvergence { iterations: usize, gap: f64, residual: f64 },

    #[error("no sign change of the tolerance difference on [{lo}, {hi}]")]
    NoCrossover { lo: f64, hi: f64 },

    #[error("parse error at position {pos}: {msg}")]
    Parse { pos: usize, msg: String },

    #[error("composite axis is not unit length (norm {norm:.6})")]
    NonUnitAxis { norm: f64 },

    #[error("term {0} is not a product of single-qubit ±1 observables")]
    NonProductTerm(String),

    #[error("operator {0} is not covered by any measurement setting")]
    UncoveredOperator(String),

    #[error("operator {0} has no matching expectation record")]
    MissingRecord(String),

    #[error("operator {0} matches more than one expectation record")]
    DuplicateRecord(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
