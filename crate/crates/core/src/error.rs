use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("post-selection is impossible: success probability {probability:e}")]
    PostSelectionImpossible { probability: f64 },

    #[error("pointer is not in the strong regime: min separation {separation} <= 6 sigma ({six_sigma})")]
    NotInStrongRegime { separation: f64, six_sigma: f64 },

    #[error("pre- and post-selected states are nearly orthogonal: |<phi|psi>| = {overlap:e} <= {threshold:e}")]
    NearOrthogonalPrePost { overlap: f64, threshold: f64 },

    #[error("no trial passed post-selection out of {trials}")]
    NoAcceptedTrials { trials: u64 },

    #[error("Hilbert dimension {dim} exceeds the brute-force limit {limit}")]
    TooLargeForOracle { dim: u128, limit: usize },

    #[error("final boundary is orthogonal to every forward branch")]
    NoConsistentHistory,

    #[error("collapsed state {index} is orthogonal to its pre-collapse state (gamma1 = 0)")]
    OrthogonalCollapseForbidden { index: usize },
}
