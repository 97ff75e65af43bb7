use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),

    #[error("geometry: {0}")]
    Geometry(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An equivalent channel collapsed to zero, so neither MRC nor the
    /// fusion statistics are defined for this (AP, UE) pair.
    #[error("degenerate channel at AP {ap}, UE {ue}: ||q|| = 0")]
    DegenerateChannel { ap: usize, ue: usize },

    #[error("conditioning: {reason} (min eigenvalue estimate {min_eigenvalue:e})")]
    Conditioning { reason: String, min_eigenvalue: f64 },

    #[error("experiment {experiment}, point {point}, trial {trial}: {source}")]
    Experiment {
        experiment: String,
        point: usize,
        trial: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code grouped by failure category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Geometry(_) | Error::Dimension(_) => 3,
            Error::Conditioning { .. } | Error::DegenerateChannel { .. } => 4,
            Error::Experiment { source, .. } => source.exit_code(),
            Error::Io(_) | Error::Csv(_) => 1,
        }
    }
}
