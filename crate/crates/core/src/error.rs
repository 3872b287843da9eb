use thiserror::Error;

/// Errors shared by the modeling, filtering, and verification layers.
#[derive(Debug, Error)]
pub enum CbfError {
    /// An ECBF root is not a strictly negative finite real.
    #[error("root {index} is {value}; ECBF roots must be strictly negative and finite")]
    InvalidRoot { index: usize, value: f64 },

    /// A channel's box is empty or inverted.
    #[error("channel '{channel}': upper bound {upper} must be strictly greater than lower bound {lower}")]
    InvalidBounds {
        channel: String,
        lower: f64,
        upper: f64,
    },

    /// A scalar parameter is outside its documented range.
    #[error("parameter {name} = {value} rejected: {requirement}")]
    InvalidParam {
        name: String,
        value: f64,
        requirement: String,
    },

    /// The state violates the model's valid-region predicate.
    #[error("state outside the valid region: {detail}")]
    OutsideValidRegion { detail: String },

    /// A NaN or infinity appeared where a finite value is required.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// A vector or matrix has the wrong size.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: usize,
        got: usize,
    },

    /// The decoupling matrix lost rank at the queried state.
    #[error("decoupling matrix is numerically singular (smallest singular value {sigma_min:.3e}, threshold {threshold:.0e})")]
    SingularDecouplingMatrix { sigma_min: f64, threshold: f64 },

    /// A QP instance violates its structural invariants.
    #[error("invalid QP instance: {detail}")]
    InvalidInstance { detail: String },

    /// The enumeration oracle found no feasible candidate.
    #[error("QP reported infeasible: {detail}")]
    Infeasible { detail: String },

    /// A linear system was too ill-conditioned to trust.
    #[error("linear system too ill-conditioned (estimated condition number {cond:.3e})")]
    IllConditioned { cond: f64 },

    /// An algebraic identity that must hold to roundoff was violated,
    /// which indicates a bug rather than a property failure.
    #[error("algebraic identity violated: {detail}")]
    IdentityViolation { detail: String },

    /// A stability certificate failed its own validation grid.
    #[error("invalid certificate: {detail}")]
    InvalidCertificate { detail: String },

    /// A model name is not one of the bundled systems.
    #[error("unknown model '{name}'")]
    UnknownModel { name: String },
}
