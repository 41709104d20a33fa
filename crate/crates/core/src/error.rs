use thiserror::Error;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A physical or statistical parameter failed validation.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A state, pose or covariance stopped being finite during integration.
    #[error("numeric blow-up at step {step}: {what}")]
    NonFinite { step: usize, what: &'static str },

    /// The stacked observation matrix lost column rank; attack synthesis is
    /// undefined without a well-separated range space.
    #[error("observation matrix is rank deficient (sigma_min = {sigma_min:.3e})")]
    RankDeficient { sigma_min: f64 },

    /// The requested attack support cannot produce any in-range energy.
    #[error("no effective attack on support {support:?}")]
    NoEffectiveAttack { support: Vec<usize> },

    /// A covariance could not be factorized even after symmetrization and
    /// jitter.
    #[error("covariance is not positive definite ({context})")]
    CovarianceNotPd { context: &'static str },

    /// The filter was asked to update with no trusted channels.
    #[error("empty channel mask: measurement update skipped")]
    EmptyMask,

    /// Pruning removed every channel; the caller should fall back to a
    /// prediction-only step.
    #[error("insufficient trusted channels after pruning")]
    InsufficientTrustedChannels,

    /// Monitor histories do not line up.
    #[error("misaligned monitor histories: {0}")]
    MisalignedHistories(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
