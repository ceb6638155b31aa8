use thiserror::Error;

/// Errors reported by the library operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("OU driver unstable on this refinement: delta/eps = {ratio} (must be < 1)")]
    RefinementTooCoarse { ratio: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite state at t = {time}")]
    BlowUp { time: f64 },

    #[error("commutation condition violated: {violation:.3e} > tol {tol:.3e} at {point:?}")]
    CommutationViolation {
        violation: f64,
        tol: f64,
        point: Vec<f64>,
    },

    #[error("unknown model `{name}`; valid names: {}", valid.join(", "))]
    UnknownModel { name: String, valid: Vec<String> },

    #[error("bad parameters for model `{model}`: {reason}")]
    BadModelParams { model: String, reason: String },

    #[error("matrix has non-finite entries")]
    NonFiniteMatrix,

    #[error("certification grid too large: {points} points (max {max})")]
    GridTooLarge { points: u128, max: u128 },

    #[error("{condition} fails on the certification box: sup value {sup_value:.6} at {point:?}")]
    CertificationFailed {
        condition: String,
        sup_value: f64,
        point: Vec<f64>,
    },

    #[error("diffusion is not positive on the box: sigma({point}) = {value}")]
    NonPositiveDiffusion { point: f64, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
