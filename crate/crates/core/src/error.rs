use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("surface topology: {0}")]
    Topology(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("geometry: {0}")]
    Geometry(String),

    #[error("embedding of element {element} failed: {msg}")]
    Embedding { element: usize, msg: String },

    #[error("refinement limit {max_depth} reached in element {element}")]
    RefinementLimit { element: usize, max_depth: usize },

    #[error("point ({x:.6}, {y:.6}, {z:.6}) lies outside the mesh (nearest tet {nearest})")]
    Location {
        x: f64,
        y: f64,
        z: f64,
        nearest: usize,
    },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("non-finite value in element {element}")]
    Numerical { element: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
