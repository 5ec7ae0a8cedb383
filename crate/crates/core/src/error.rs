//! Error taxonomy shared by the library and the CLI.
//!
//! Every failure mode carries enough context to act on: the offending
//! quantity (a spectral radius, a condition number, an eigenvalue gap) is
//! embedded in the variant rather than stringified at the call site.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A state vector picked up a NaN or infinity during iteration.
    #[error("non-finite state at step {step}")]
    NonFiniteState { step: usize },

    /// A source map could not be inverted (singular or near-singular).
    #[error("source map is singular (|det| = {det_abs:.3e})")]
    SingularMap { det_abs: f64 },

    /// Two eigenvalues of the inverse source map coincide within tolerance.
    #[error("eigenvalues of the inverse map are not distinct (min gap {min_gap:.3e}, tol {tol:.3e})")]
    NonDistinctEigenvalues { min_gap: f64, tol: f64 },

    /// The synchronization series does not converge: rho(A) * rho(M^-1) >= 1.
    #[error("synchronization series diverges: rho(A) = {rho_a:.6}, rho(M^-1) = {rho_m_inv:.6}, product = {product:.6} >= 1")]
    DivergentSeries {
        rho_a: f64,
        rho_m_inv: f64,
        product: f64,
    },

    /// A linear solve was attempted on a matrix with excessive condition number.
    #[error("{context}: condition number {cond:.3e} exceeds {limit:.3e}")]
    IllConditioned {
        context: &'static str,
        cond: f64,
        limit: f64,
    },

    /// The column-stacked matrix P lost rank; the embedding construction needs full column rank.
    #[error("P is rank deficient: smallest singular value ratio {ratio:.3e} below {tol:.3e}")]
    RankDeficientP { ratio: f64, tol: f64 },

    /// The pair (A, C) fails the observability-style rank condition.
    #[error("reservoir pair fails rank condition: smallest singular value ratio {ratio:.3e} below {tol:.3e}")]
    ObservabilityFailure { ratio: f64, tol: f64 },

    /// A metric tensor was supplied that is not symmetric positive definite.
    #[error("metric tensor is not positive definite: {reason}")]
    NotPositiveDefinite { reason: String },

    /// A matrix supplied as a rotation fails orthogonality or has det != +1.
    #[error("matrix is not a rotation: {reason}")]
    NotRotation { reason: String },

    /// The conjugation matrix H could not be formed or inverted.
    #[error("conjugation is singular: {context}")]
    SingularConjugation { context: String },

    /// The eigenvector matrix V of the inverse map is numerically singular.
    #[error("eigenvector basis is singular (condition estimate {cond:.3e})")]
    SingularEigenbasis { cond: f64 },

    /// The driven trajectory gap never fell below the synchronization tolerance.
    #[error("no synchronization after {steps} steps: final gap {final_gap:.3e} > tol {tol:.3e}")]
    NoSynchronization {
        steps: usize,
        final_gap: f64,
        tol: f64,
    },

    /// A diagnostic was asked to run on fewer samples than it needs.
    #[error("{context}: got {got} samples, need at least {need}")]
    InsufficientSamples {
        context: &'static str,
        got: usize,
        need: usize,
    },

    /// Tangent estimation produced a degenerate (near-zero or collinear) basis.
    #[error("degenerate tangent data: {reason}")]
    DegenerateTangent { reason: String },

    /// Matrix or vector dimensions do not agree.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// The run configuration is invalid for reasons beyond TOML syntax.
    #[error("config error: {0}")]
    Config(String),

    /// The config or record file does not match the expected schema.
    #[error("schema mismatch: found {found}, this build supports {supported}")]
    Schema { found: String, supported: String },

    /// A stored record's checksum does not match its recomputed value.
    #[error("checksum mismatch for {path}: stored {stored}, computed {computed}")]
    ChecksumMismatch {
        path: String,
        stored: String,
        computed: String,
    },

    /// A stored or freshly computed result violates its own tolerance.
    #[error("verification failed: {context} = {value:.3e} exceeds {limit:.3e}")]
    VerificationFailed {
        context: String,
        value: f64,
        limit: f64,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI. Grouped by failure family so scripts
    /// can branch on the cause without parsing stderr.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFiniteState { .. }
            | Error::SingularMap { .. }
            | Error::IllConditioned { .. }
            | Error::SingularConjugation { .. }
            | Error::SingularEigenbasis { .. }
            | Error::DegenerateTangent { .. }
            | Error::InsufficientSamples { .. } => 1,
            Error::Config(_)
            | Error::Schema { .. }
            | Error::DimensionMismatch { .. }
            | Error::NotRotation { .. }
            | Error::NotPositiveDefinite { .. }
            | Error::Io(_)
            | Error::Json(_) => 2,
            Error::DivergentSeries { .. } => 3,
            Error::RankDeficientP { .. } | Error::ObservabilityFailure { .. } => 4,
            Error::NonDistinctEigenvalues { .. } => 5,
            Error::NoSynchronization { .. } => 6,
            Error::ChecksumMismatch { .. } | Error::VerificationFailed { .. } => 7,
        }
    }
}
