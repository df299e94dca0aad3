use std::path::PathBuf;

use thiserror::Error;

/// Which side of the cutoff an observation falls on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Control,
    Treated,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Side::Control => f.write_str("control"),
            Side::Treated => f.write_str("treated"),
        }
    }
}

/// Broad failure classes, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad parameters or an impossible request.
    Config,
    /// Unreadable, malformed or invalid input data.
    Data,
    /// The analysis itself is undefined on the data (empty side, singular fit).
    Degenerate,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema error: column `{column}` not found in header")]
    Schema { column: String },

    #[error("parse error at row {row}, column `{column}`: cannot parse {value:?} as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("invalid data: {0}")]
    Validation(String),

    #[error("invalid parameters: {0}")]
    InvalidSpec(String),

    #[error("window has no {0} observations")]
    EmptySide(Side),

    #[error(
        "exhaustive enumeration needs {assignments} assignments, above the cap of {cap}; use Monte Carlo or raise the cap"
    )]
    PlanTooLarge { assignments: String, cap: u64 },

    #[error(
        "polynomial of order {order} needs at least {needed} distinct running values on the {side} side, found {found}"
    )]
    RankDeficient {
        side: Side,
        order: usize,
        needed: usize,
        found: usize,
    },

    #[error("numerically degenerate: {0}")]
    Degenerate(String),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. }
            | Error::Schema { .. }
            | Error::Parse { .. }
            | Error::Csv(_)
            | Error::Validation(_) => ErrorClass::Data,
            Error::InvalidSpec(_) | Error::PlanTooLarge { .. } => ErrorClass::Config,
            Error::EmptySide(_) | Error::RankDeficient { .. } | Error::Degenerate(_) => {
                ErrorClass::Degenerate
            }
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
