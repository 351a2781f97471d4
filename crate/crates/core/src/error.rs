use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("tensor of shape {shape:?} needs {expected} elements, got {actual}")]
    BadLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid configuration at `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("unknown task {0}")]
    UnknownTask(usize),

    #[error("selection parameters for task {0} already exist")]
    DuplicateSelection(usize),

    #[error("missing pathway weights for layer {0}")]
    MissingPathway(usize),

    #[error("task {0} has no synapses unique to it")]
    NoUniqueSynapses(usize),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("dataset for task {0} is empty")]
    EmptyDataset(usize),

    #[error("non-finite loss on task {task}, epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss {
        task: usize,
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("{path}: malformed data at {location}: {reason}")]
    Malformed {
        path: String,
        location: String,
        reason: String,
    },

    #[error("manifest references class {class} which is absent from the dataset")]
    AbsentClass { class: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
