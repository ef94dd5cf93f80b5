use thiserror::Error;

/// Crate-wide error type. Variants carry enough context to point at the
/// offending piece of input (segment index, layer pair, parameter value).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid Lame parameters: {0}")]
    InvalidLame(String),

    #[error("invalid domain geometry: {0}")]
    InvalidGeometry(String),

    #[error("layer partition violation between layers {layer_a} and {layer_b}: {detail}")]
    PartitionViolation {
        layer_a: usize,
        layer_b: usize,
        detail: String,
    },

    #[error("invalid fault: {0}")]
    InvalidFault(String),

    #[error("invalid jump data: {0}")]
    InvalidJump(String),

    #[error("meshing failed: {0}")]
    Mesh(String),

    #[error("geometry too fine for requested mesh size: {0}")]
    GeometryTooFine(String),

    #[error("linear solve failed: {0}")]
    Solver(String),

    #[error("invalid probe setup: {0}")]
    Probe(String),

    #[error("probe direction inadmissible: {0}")]
    NoNegativeSeparation(String),

    #[error("extrapolation inconclusive: {0}")]
    Extrapolation(String),

    #[error("invalid quadrature request: {0}")]
    Quadrature(String),

    #[error("invalid config at {pointer}: {detail}")]
    Config { pointer: String, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
