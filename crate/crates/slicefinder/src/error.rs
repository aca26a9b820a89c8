use std::path::{Path, PathBuf};

use slicefinder_core::Error as CoreError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{}: file not found", .0.display())]
    MissingFile(PathBuf),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: malformed header: {msg}", path.display())]
    MalformedHeader { path: PathBuf, msg: String },
    #[error("{}: expected {expected} bytes of voxel data, found {found}", path.display())]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        found: u64,
    },
    #[error("{}: malformed image: {msg}", path.display())]
    MalformedImage { path: PathBuf, msg: String },
    #[error("{}: line {line}: {msg}", path.display())]
    MalformedCsv {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("configuration: {0}")]
    Config(String),
    #[error("cannot export: {0}")]
    Export(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }

    /// 2 for usage and precondition failures, 3 for failures during
    /// computation or output.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Core(e) => match e {
                CoreError::SingularTransform
                | CoreError::DegenerateConfiguration(_)
                | CoreError::ZeroVariance
                | CoreError::NoOverlap
                | CoreError::InsufficientContrast
                | CoreError::LabelAbsentEverywhere(_)
                | CoreError::DegenerateX
                | CoreError::ExcessiveDeformation { .. }
                | CoreError::AllPairsFailed
                | CoreError::AllUndefined
                | CoreError::EmptyCartography => 3,
                _ => 2,
            },
            Error::Io { .. } | Error::Export(_) => 3,
            _ => 2,
        }
    }
}
