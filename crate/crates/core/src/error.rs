use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid harmonic order {0}: must be even, non-negative and at most 16")]
    InvalidOrder(i64),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid rotation: {0}")]
    InvalidRotation(String),
    #[error("folding deformation: {0}")]
    Folding(String),
    #[error("degenerate jacobian: {0}")]
    DegenerateJacobian(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("rank-deficient normal matrix (smallest eigenvalue {0:e})")]
    RankDeficient(f64),
    #[error("degenerate probability density: all mass is zero")]
    DegeneratePdf,
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("deformation inversion did not converge at {failed} of {total} voxels")]
    InversionQuality { failed: usize, total: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Folding(_)
                | Error::DegenerateJacobian(_)
                | Error::RankDeficient(_)
                | Error::DegeneratePdf
                | Error::Divergence(_)
                | Error::InversionQuality { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
