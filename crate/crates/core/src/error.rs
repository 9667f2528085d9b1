use thiserror::Error;

/// Failures raised by the numerical routines in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("rotation projection is not unique: {0}")]
    DegenerateProjection(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("energy assumption violated (clause {clause}): {detail}")]
    AssumptionViolation { clause: &'static str, detail: String },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    #[error("line search failed: {0}")]
    LineSearch(String),

    #[error("point lies on the dislocation line: {0}")]
    OnLine(String),

    #[error("tangential boundary crossing: {0}")]
    TangentialCrossing(String),

    #[error("core tubes overlap: {0}")]
    OverlappingCores(String),

    #[error("measure is not dilute at eps = {eps}: {detail}")]
    DilutenessViolation { eps: f64, detail: String },

    #[error("envelope growth violated: {0}")]
    GrowthViolation(String),

    #[error("envelope iteration is not monotone: {0}")]
    NonMonotone(String),

    #[error("certificate tree contains a cycle at {0}")]
    CertificateCycle(String),

    #[error("quadrature did not stabilize: {0}")]
    UnresolvedCore(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
