use std::path::PathBuf;

use thiserror::Error;

/// Which dimension of a location × base-station quantity disagreed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Locations,
    BaseStations,
    Slots,
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Axis::Locations => "locations",
            Axis::BaseStations => "base stations",
            Axis::Slots => "slots",
        })
    }
}

#[derive(Debug, Error)]
pub enum OnoError {
    #[error("dimension mismatch on {axis} axis ({context}): expected {expected}, found {found}")]
    Dimension {
        axis: Axis,
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),
    #[error("no rows")]
    NoRows,
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Nn(#[from] ono_nn::NnError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl OnoError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        OnoError::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_dim(axis: Axis, context: &'static str, expected: usize, found: usize) -> crate::Result<()> {
    if expected != found {
        return Err(OnoError::Dimension {
            axis,
            context,
            expected,
            found,
        });
    }
    Ok(())
}
