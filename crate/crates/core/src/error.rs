use thiserror::Error;

/// Failure modes of the pipeline.
///
/// Every variant maps onto one of the two nonzero process exit codes, see
/// [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error(
        "band {band} is not simple at k = ({:.6}, {:.6}, {:.6}): gap {gap:.3e} <= {delta_gap:.3e}",
        k[0], k[1], k[2]
    )]
    Simplicity {
        k: [f64; 3],
        band: usize,
        gap: f64,
        delta_gap: f64,
    },

    #[error("level set E = {e0} is not bracketed along the seed ray")]
    LevelSetNotFound { e0: f64 },

    #[error("orbit did not close before s = {s_max}")]
    NotClosed { s_max: f64 },

    #[error("frame degeneracy at s = {s:.6}: |det Y| = {det:.3e} < {d_min:.3e}")]
    FrameDegeneracy { s: f64, det: f64, d_min: f64 },

    #[error("numerical accuracy: {0}")]
    Accuracy(String),

    #[error("consistency check failed: {0}")]
    Consistency(String),

    #[error("outside domain: {0}")]
    Domain(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// 2 for assumption and input violations, 3 for numerical or I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_)
            | Error::Assumption(_)
            | Error::Simplicity { .. }
            | Error::LevelSetNotFound { .. }
            | Error::NotClosed { .. }
            | Error::Domain(_)
            | Error::Config(_) => 2,
            Error::FrameDegeneracy { .. }
            | Error::Accuracy(_)
            | Error::Consistency(_)
            | Error::Io(_) => 3,
        }
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::Assumption(_) => "assumption-violation",
            Error::Simplicity { .. } => "simplicity-violation",
            Error::LevelSetNotFound { .. } => "level-set-not-found",
            Error::NotClosed { .. } => "not-closed",
            Error::FrameDegeneracy { .. } => "frame-degeneracy",
            Error::Accuracy(_) => "accuracy",
            Error::Consistency(_) => "consistency",
            Error::Domain(_) => "domain",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
