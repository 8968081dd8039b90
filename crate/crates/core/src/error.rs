use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("vocab error: {0}")]
    Vocab(String),
    #[error("empty expression")]
    EmptyExpression,
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("generation error: {0}")]
    Generation(String),
    #[error("scene {scene}: invalid field `{field}`: {message}")]
    Schema {
        scene: String,
        field: String,
        message: String,
    },
    #[error("scene {scene}: expression failed quality control: {violations}")]
    Qc { scene: String, violations: String },
    #[error("scene {scene}: {source}")]
    Scene {
        scene: String,
        #[source]
        source: Box<Error>,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_scene(self, scene: &str) -> Self {
        Error::Scene {
            scene: scene.to_string(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping scene annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::Scene { source, .. } => source.root(),
            e => e,
        }
    }

    /// True for failures of the numerical pipeline (non-finite values).
    pub fn is_numeric(&self) -> bool {
        matches!(self.root(), Error::Numeric(_))
    }
}
