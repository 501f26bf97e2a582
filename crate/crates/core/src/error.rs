use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("obj parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("face {face} at line {line} has {count} vertices; only triangles are supported")]
    NonTriangleFace { face: usize, line: usize, count: usize },

    #[error("degenerate faces (repeated index or zero area): {faces:?}")]
    DegenerateFaces { faces: Vec<usize> },

    #[error("mesh is empty")]
    EmptyMesh,

    #[error("mesh has zero spatial extent")]
    ZeroExtent,

    #[error("mesh is disconnected ({components} components); the Poisson system needs a single component")]
    Disconnected { components: usize },

    #[error("factorization failed at pivot {pivot}: matrix is not positive definite")]
    Factorization { pivot: usize },

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid camera: {0}")]
    Camera(String),

    #[error("invalid patch grid: {0}")]
    PatchGrid(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("guidance provider unavailable: {0}")]
    ProviderUnavailable(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("protocol version mismatch: expected {expected}, got {got}")]
    VersionMismatch { expected: u32, got: u32 },

    #[error("non-finite value in guidance response for view {view} (pixel {pixel})")]
    NonFiniteResponse { view: usize, pixel: usize },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn non_finite(what: impl Into<String>) -> Self {
        Error::NonFinite { what: what.into() }
    }
}
