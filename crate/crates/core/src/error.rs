use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("mask size mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    SizeMismatch {
        left_w: u32,
        left_h: u32,
        right_w: u32,
        right_h: u32,
    },

    #[error("invalid run-length mask: {0}")]
    Rle(String),

    #[error("image {image_id}: invalid field `{field}`: {message}")]
    Record {
        image_id: String,
        field: String,
        message: String,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("task {task_id}: {message}")]
    Task { task_id: String, message: String },

    #[error("evaluation: {0}")]
    Evaluation(String),

    #[error("model: {0}")]
    Model(String),

    #[error("training diverged at stage {stage}, step {step}: loss is {loss}")]
    Diverged { stage: String, step: usize, loss: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
