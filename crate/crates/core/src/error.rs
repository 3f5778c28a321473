use thiserror::Error;

pub type Result<T, E = GameError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("non-finite utility: {0}")]
    NonFiniteUtility(String),
    #[error("potential not differentiable here: {0}")]
    NonDifferentiable(String),
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("polytope is infeasible (best slack {0:e})")]
    Infeasible(f64),
    #[error("polytope is not bounded: {0}")]
    Unbounded(String),
    #[error("solver hit the iteration cap after {0} Newton steps")]
    MaxIter(usize),
    #[error("Hessian is singular or not negative definite")]
    SingularHessian,
    #[error("KKT block matrix is singular")]
    SingularKkt,
    #[error("boundary gradient precondition failed: {0}")]
    BoundaryPrecondition(String),
    #[error("every refined subspace failed to solve: {0}")]
    AllSubspacesFailed(String),
    #[error("no subspace contains the trajectory")]
    NoContainingSubspace,
    #[error("parameters not identifiable at a boundary point")]
    NotIdentifiableHere,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("missing forward cache")]
    MissingCache,
    #[error("data error: {0}")]
    Data(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("config error: {0}")]
    Config(String),
}

impl From<std::io::Error> for GameError {
    fn from(e: std::io::Error) -> Self {
        GameError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for GameError {
    fn from(e: serde_json::Error) -> Self {
        GameError::Data(e.to_string())
    }
}

impl From<csv::Error> for GameError {
    fn from(e: csv::Error) -> Self {
        GameError::Data(e.to_string())
    }
}
