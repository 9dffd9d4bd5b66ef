use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o failure on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic in {}: expected {expected:?}, found {found:?}", path.display())]
    BadMagic {
        path: PathBuf,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("unsupported format version {version} in {}", path.display())]
    UnsupportedVersion { path: PathBuf, version: u32 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("declared size {height}x{width}x{dim} exceeds reader limit {max_height}x{max_width}x{max_dim}")]
    DimensionsTooLarge {
        height: usize,
        width: usize,
        dim: usize,
        max_height: usize,
        max_width: usize,
        max_dim: usize,
    },

    #[error("patch {index} has a zero-length embedding (norm {norm:e})")]
    ZeroVector { index: usize, norm: f64 },

    #[error("patch {index} is flagged as normalized but has norm {norm}")]
    NotNormalized { index: usize, norm: f64 },

    #[error("manifest {}: {message}", path.display())]
    Manifest { path: PathBuf, message: String },

    #[error("similarity matrix is empty")]
    EmptyMatrix,

    #[error("object {object_id} has no cycle pairs in this frame")]
    NoPairs { object_id: u16 },

    #[error("memory capacity {capacity} is below the {required} initial object patches")]
    CapacityTooSmall { capacity: usize, required: usize },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("insertion needs {required} protected slots but capacity is {capacity}")]
    InsertionOverflow { capacity: usize, required: usize },

    #[error("need to evict {needed} entries but only {evictable} are evictable")]
    NothingEvictable { needed: usize, evictable: usize },

    #[error("memory bank is empty")]
    EmptyBank,

    #[error("frame {frame} is not after the latest stored frame {latest}")]
    FrameOrder { frame: u32, latest: u32 },

    #[error("point ({row}, {col}) is outside the {height}x{width} grid")]
    OutOfBounds {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },

    #[error("no patch passes the granularity threshold")]
    EmptyMask,

    #[error("no objects detected in the first frame")]
    NoObjectsDetected,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("infeasible synthetic spec: {0}")]
    InfeasibleSpec(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
