use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure category, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    DataFormat,
    Numerical,
    Io,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("envelope leaks out of the time window: {fraction:.3e} of the energy sits in the outer 5% of the grid")]
    WindowLeakage { fraction: f64 },

    #[error("integrator step {step:.3e} s exceeds the limit {limit:.3e} s")]
    StepTooLarge { step: f64, limit: f64 },

    #[error("weak-excitation regime violated: peak excitation probability {peak:.3e} >= 1e-2")]
    NotWeak { peak: f64 },

    #[error("time grid ends {covered:.3e} s after the pulse peak, need at least {required:.3e} s")]
    GridTooShort { covered: f64, required: f64 },

    #[error("coherent removal hazard is not finite at sample {index}")]
    HazardNotFinite { index: usize },

    #[error("quadrature did not converge: achieved error estimate {achieved:.3e}, requested {requested:.3e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("slice count {slices} not converged: doubling changes tauT/tau0 by {change:.3e}")]
    SlicesNotConverged { slices: usize, change: f64 },

    #[error("model evaluation failed at peak OD {od}: {source}")]
    AtOpticalDepth {
        od: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("bin `{bin}` holds {count} shots, need at least {required}")]
    BinUnderpopulated {
        bin: &'static str,
        count: u64,
        required: u64,
    },

    #[error("design matrix is rank deficient (condition estimate {condition:.3e})")]
    RankDeficient { condition: f64 },

    #[error("entry {index}: phi0 = {phi0:.3e} is within 5 standard errors of zero (se {se:.3e})")]
    Phi0NearZero { index: usize, phi0: f64, se: f64 },

    #[error("invariant violated at shot {index}: {reason}")]
    ShotInvariant { index: u64, reason: String },

    #[error("data format error: {0}")]
    Format(String),

    #[error("config digest mismatch: file {file}, config {config}")]
    DigestMismatch { file: String, config: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidParameter { .. }
            | Error::Config(_)
            | Error::StepTooLarge { .. }
            | Error::GridTooShort { .. }
            | Error::NotWeak { .. } => ErrorKind::Config,
            Error::Format(_) | Error::DigestMismatch { .. } | Error::BinUnderpopulated { .. } => {
                ErrorKind::DataFormat
            }
            Error::WindowLeakage { .. }
            | Error::HazardNotFinite { .. }
            | Error::Quadrature { .. }
            | Error::SlicesNotConverged { .. }
            | Error::RankDeficient { .. }
            | Error::Phi0NearZero { .. }
            | Error::ShotInvariant { .. } => ErrorKind::Numerical,
            Error::AtOpticalDepth { source, .. } => source.kind(),
            Error::Io { .. } | Error::Csv(_) => ErrorKind::Io,
        }
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
