use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("branch ambiguity at z = {z}: discriminant {disc:e} too small, perturb z")]
    BranchAmbiguity { z: Complex64, disc: f64 },
    #[error("contour geometry: {0}")]
    Geometry(String),
    #[error("contours not separated: minimum node distance {0:e}")]
    Separation(f64),
    #[error("quadrature did not converge: residual {0:e}")]
    QuadratureNonConvergence(f64),
    #[error("integrand not finite at z = {0}")]
    NonFinite(Complex64),
    #[error("pole proximity at z = {0}")]
    PoleProximity(Complex64),
    #[error("coincident points: |z1 - z2| = {0:e}")]
    Coincidence(f64),
    #[error("column {0} has zero norm")]
    DegenerateColumn(usize),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("insufficient moments: need {need}, have {have}")]
    InsufficientMoments { need: usize, have: usize },
    #[error("eigensolver failed: {0}")]
    Eigen(String),
    #[error("near-singular resolvent solve: distance to spectrum {0:e}")]
    NearSingular(f64),
    #[error("insufficient spectrum: {0}")]
    InsufficientSpectrum(String),
    #[error("fixed point did not converge after {iterations} iterations (residual {residual:e})")]
    FixedPointNonConvergence { iterations: usize, residual: f64 },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("bracket failure: {0}")]
    Bracket(String),
    #[error("calibration ambiguous: both KS scores exceed 0.2 ({0:.4}, {1:.4})")]
    Ambiguous(f64, f64),
    #[error("degenerate variance: sigma^2 = {0:e}")]
    DegenerateVariance(f64),
    #[error("guardrail: {0}")]
    Guardrail(String),
    #[error("too many failed replicates: {failed} of {total}")]
    FailedReplicates { failed: usize, total: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
