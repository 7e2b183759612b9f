use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible shapes or an empty input where data is required.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// A parameter outside its admissible range.
    #[error("domain error: {0}")]
    Domain(String),
    /// Non-finite data or a failed matrix factorization.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// A model whose spectrum carries no information (e.g. all-zero λ).
    #[error("degenerate model: {0}")]
    DegenerateModel(String),
    /// Noise-precision estimate with a vanishing denominator.
    #[error("degenerate fit: residual power and posterior variance are both zero")]
    DegenerateFit,
    /// An AMP-family solver produced non-finite iterates. Carries the last
    /// finite state so callers can still report it.
    #[error("solver diverged at iteration {iteration}")]
    AmpDiverged {
        iteration: usize,
        last: Box<crate::amp::AmpRun>,
    },
    /// Every Bi-UTAMP restart diverged. The boxed result holds per-restart
    /// status and the best last-finite estimates.
    #[error("all {restarts} restarts diverged")]
    BiUtampDiverged {
        restarts: usize,
        result: Box<crate::solver::BiUtampResult>,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
