//! Error type shared by all modules of the crate.

use thiserror::Error;

/// Errors produced by the numerical kernels, streams and maintainers.
#[derive(Debug, Error)]
pub enum KfoError {
    /// Input claimed symmetric deviates from its transpose beyond tolerance.
    #[error("matrix not symmetric: max |M - M^T| = {max_asym:.3e} exceeds {tol:.3e}")]
    NotSymmetric { max_asym: f64, tol: f64 },

    /// A PSD-tagged matrix has an eigenvalue below the negative tolerance.
    #[error("indefinite input: eigenvalue {eigenvalue:.6e} below -{tol:.3e}")]
    IndefiniteInput { eigenvalue: f64, tol: f64 },

    /// Requested sketch size exceeds the matrix dimension.
    #[error("rank too large: r + r_o = {requested} > d = {dim}")]
    RankTooLarge { requested: usize, dim: usize },

    /// Low-rank update would not stay thin: r + n must be < min(m, d).
    #[error("rank budget exceeded: r + n = {combined} >= limit {limit}")]
    RankBudgetExceeded { combined: usize, limit: usize },

    /// Operand shapes do not conform.
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    /// Correction block size outside 1..=rank.
    #[error("invalid correction size: n_crc = {n_crc}, rank = {rank}")]
    InvalidCorrectionSize { n_crc: usize, rank: usize },

    /// Relative regularization requested on an all-zero spectrum.
    #[error("zero spectrum: relative lambda undefined when max eigenvalue is 0")]
    ZeroSpectrum,

    /// Reference step has zero norm, metrics are undefined.
    #[error("zero reference step: metrics undefined")]
    ZeroReference,

    /// Stream file is corrupt; offset is the first unreadable byte.
    #[error("malformed stream file at byte {offset}: {reason}")]
    MalformedFile { offset: u64, reason: String },

    /// Configuration value out of its documented range.
    #[error("invalid config: field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    /// Symmetric eigensolver exceeded its iteration budget.
    #[error("eigensolver failed to converge on row {row}")]
    EigenNoConvergence { row: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, KfoError>;
