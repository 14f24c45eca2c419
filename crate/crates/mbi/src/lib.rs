//! Files, generators, workloads and the `mbi` command-line tool built on
//! [`mbi_core`].

pub mod cli;
pub mod csvio;
pub mod file;
pub mod gen;
pub mod run;
pub mod workload;

pub use mbi_core as core;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] mbi_core::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
    #[error("format: {0}")]
    Format(String),
}

impl Error {
    /// Whether the error comes from bad input rather than a failure while
    /// running.
    pub fn is_validation(&self) -> bool {
        use mbi_core::Error as E;
        match self {
            Error::Invalid(_) => true,
            Error::Core(e) => matches!(
                e,
                E::InvalidArgument(_)
                    | E::InsufficientBuffer { .. }
                    | E::InvalidK
                    | E::DimensionMismatch { .. }
                    | E::UnsupportedDimensionality(_)
                    | E::InvalidLayout(_)
                    | E::NonFinite
                    | E::InvalidBox { .. }
                    | E::EmptyPointSet
            ),
            Error::Io(_) | Error::Format(_) => false,
        }
    }
}
