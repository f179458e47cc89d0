use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument was outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A semantic index was not below the scene's semantic count.
    #[error("semantic index {index} out of range (K = {k})")]
    SemanticOutOfRange { index: usize, k: usize },

    /// An operation requiring a non-empty semantic set got an empty one.
    #[error("empty semantic set")]
    EmptySemanticSet,

    /// A scene with no primitives cannot be sampled.
    #[error("empty scene")]
    EmptyScene,

    /// A mesh-consuming operation got a mesh with no vertices.
    #[error("empty mesh")]
    EmptyMesh,

    /// Buffer shapes disagree.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unknown preset \"{0}\"")]
    UnknownPreset(String),

    /// Optimization diverged; the recorded loss history is attached.
    #[error("optimization diverged at iteration {iteration} (loss {loss:.6e}, initial {initial:.6e})")]
    Diverged {
        iteration: usize,
        loss: f64,
        initial: f64,
        history: Vec<f64>,
    },

    #[error("config error: {0}")]
    Config(String),

    /// Pipeline stage failure, tagged with the stage name.
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Format(String),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
