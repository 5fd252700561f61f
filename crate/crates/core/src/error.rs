use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is singular or not finite")]
    Singular,
    #[error("zero vector has no projective class")]
    ZeroVector,
    #[error("fixed points are undefined for the identity")]
    IdentityInput,
    #[error("moment is not finite: chi({0}) overflowed")]
    NonFinite(f64),
    #[error("atom count {count} exceeds the cap {cap}")]
    Blowup { count: usize, cap: usize },
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("operation requires an atomic measure")]
    NotAtomic,
    #[error("region carries no quadrature mass")]
    EmptyRegion,
    #[error("radius {radius} is not resolved by the mesh (local mesh size {mesh})")]
    UnresolvedRadius { radius: f64, mesh: f64 },
    #[error("Luxemburg bisection diverged: Phi(|f|/A) overflows for every admissible A")]
    Diverged,
    #[error("exponential integral overflowed")]
    Overflow,
    #[error("invalid Young function: {0}")]
    InvalidYoung(String),
    #[error("measure is elementary ({0})")]
    ElementaryMeasure(String),
    #[error("boundary map did not stabilise: extension moved the point by {0:e}")]
    Unstable(f64),
    #[error("Green-Kubo partial sums did not stabilise (last change {0:e})")]
    NotConverged(f64),
    #[error("second moment is not finite")]
    MomentViolation,
    #[error("underresolved: {0}")]
    Underresolved(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("grid mismatch")]
    GridMismatch,
}
