use thiserror::Error;

/// Errors raised by model evaluation, simulation and estimation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("model callable produced a non-finite value in {0}")]
    NonFiniteOutput(&'static str),

    #[error("matrix is not symmetric (asymmetry {asymmetry:.3e}, norm {norm:.3e})")]
    NotSymmetric { asymmetry: f64, norm: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("drift matrix H has an eigenvalue with non-positive real part ({0:.6e}); no stationary law")]
    UnstableH(f64),

    #[error("linear system is ill-conditioned (condition estimate {0:.3e})")]
    IllConditioned(f64),

    #[error("diffusion matrix a(vartheta, x) is singular at observation {index} (condition estimate {cond:.3e})")]
    SingularDiffusion { index: usize, cond: f64 },

    #[error("drift Gram matrix is singular (condition estimate {0:.3e}); drift is not identifiable on this sample")]
    SingularGram(f64),

    #[error("diffusion integral matrix is singular (condition estimate {0:.3e})")]
    SingularIntegral(f64),

    #[error("drift information matrix Sigma is singular (condition estimate {0:.3e})")]
    SingularSigma(f64),

    #[error("simulation blew up at step {step} (state norm {norm:.3e})")]
    Blowup { step: u64, norm: f64 },

    #[error("model is not dissipative at radius {radius}: max <x, b(mu, x)> = {max_inner:.3e}")]
    NotDissipative { radius: f64, max_inner: f64 },

    #[error("observation times are not uniformly spaced: gap-uniformity violated at index {index} (step {step:.17e}, expected {gap:.17e})")]
    NonUniformGrid { index: usize, step: f64, gap: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Stable short name, used by the CLI when reporting numerical failures.
    pub fn name(&self) -> &'static str {
        match self {
            Error::NonFiniteOutput(_) => "NonFiniteOutput",
            Error::NotSymmetric { .. } => "NotSymmetric",
            Error::NotPositiveDefinite(_) => "NotPositiveDefinite",
            Error::UnstableH(_) => "UnstableH",
            Error::IllConditioned(_) => "IllConditioned",
            Error::SingularDiffusion { .. } => "SingularDiffusion",
            Error::SingularGram(_) => "SingularGram",
            Error::SingularIntegral(_) => "SingularIntegral",
            Error::SingularSigma(_) => "SingularSigma",
            Error::Blowup { .. } => "Blowup",
            Error::NotDissipative { .. } => "NotDissipative",
            Error::NonUniformGrid { .. } => "NonUniformGrid",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::InvalidInput(_) => "InvalidInput",
            Error::Io(_) => "Io",
        }
    }

    /// True for failures caused by malformed input rather than numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::NonUniformGrid { .. }
                | Error::DimensionMismatch(_)
                | Error::InvalidInput(_)
                | Error::Io(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
