use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate box: {0}")]
    DegenerateBox(&'static str),

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("intersection point ({x:.3}, {y:.3}) lies outside the {width}x{height} image")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },

    #[error("class id {class_id} outside vocabulary of {num_classes} classes")]
    ClassOutOfRange { class_id: usize, num_classes: usize },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("ground-truth heatmap holds non-binary value {0}")]
    NonBinaryGroundTruth(f64),

    #[error("evaluation point too close to a non-differentiable kink: {0}")]
    KinkProximity(String),

    #[error("rotated IoU requires convex polygons")]
    NonConvexInput,

    #[error("unknown class id {0}")]
    UnknownClass(usize),

    #[error("unknown class names: {}", .0.join(", "))]
    UnknownClassNames(Vec<String>),

    #[error("annotation file is empty")]
    EmptyFile,

    #[error("all {0} annotation lines are malformed")]
    AllLinesMalformed(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{}: {message}", path.display())]
    Container { path: PathBuf, message: String },
}

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

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
