//! Video captioning with a temporal graph transformer teacher and a student
//! decoder distilled from it. Caption metrics live in [`metrics`].
//!
//! The numeric core is generic over the scalar type; the aliases below fix
//! it to `f64`, which is what training and the CLI use.

pub mod caption;
pub mod cli;
pub mod features;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod numerics;
pub mod semantic;
pub mod temporal;
pub mod training;

use thiserror::Error;

/// Matrix instantiated at the model precision.
pub type Matrix = numerics::Matrix<f64>;
/// Tape instantiated at the model precision.
pub type Tape = numerics::Tape<f64>;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Feature(#[from] features::FeatureError),
    #[error(transparent)]
    Graph(#[from] graph::GraphError),
    #[error(transparent)]
    Train(#[from] training::TrainError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Check(#[from] gradcheck::CheckError),
    #[error("{failed} parameter group(s) exceed the gradient tolerance")]
    GradientMismatch { failed: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Process exit status: 3 for numeric failures, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        let numeric = match self {
            Error::GradientMismatch { .. } => true,
            Error::Train(e) => e.is_numeric(),
            Error::Check(gradcheck::CheckError::Numerics(numerics::NumericsError::NonFinite(_))) => true,
            _ => false,
        };
        if numeric {
            EXIT_NUMERIC
        } else {
            EXIT_DATA
        }
    }
}
