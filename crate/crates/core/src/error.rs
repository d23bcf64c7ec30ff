use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("ghost width {width} exceeds cell count {n_cells}")]
    GhostWidth { width: usize, n_cells: usize },

    #[error("non-finite value produced by `{op}` (tape node {node})")]
    NonFinite { op: &'static str, node: usize },

    #[error("cholesky factorization failed for batch row {row}")]
    Cholesky { row: usize },

    #[error("quadrature left the admissible set in component {component}")]
    Quadrature { component: usize },

    #[error("inadmissible state at cell {cell}")]
    Inadmissible { cell: usize },

    #[error("non-finite numerical flux at edge {edge}")]
    NonFiniteFlux { edge: usize },

    #[error("solution blew up at step {step}")]
    BlowUp { step: usize },

    #[error("singular matrix")]
    Singular,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("trajectory {index}: {source}")]
    Trajectory { index: usize, source: Box<Error> },

    #[error("training failed: {0}")]
    Training(String),
}
