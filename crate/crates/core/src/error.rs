use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("polyline is open; winding and distance need a closed outline")]
    OpenPolyline,

    #[error("polyline is degenerate (collapsed to a point)")]
    DegeneratePolyline,

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("label {label} out of range (map has {num_labels} labels)")]
    LabelOutOfRange { label: usize, num_labels: usize },

    #[error("requested {requested} superpixels but the image has only {pixels} pixels")]
    TooManySuperpixels { requested: usize, pixels: usize },

    #[error("soft-min temperature must be positive for gradients (got gamma = {0})")]
    NonDifferentiable(f64),

    #[error("brute-force enumeration of {count} matchings exceeds the limit of {limit}")]
    EnumerationTooLarge { count: u128, limit: u128 },

    #[error("{stage}: loss became non-finite at step {step} (value {value})")]
    NonFiniteLoss {
        stage: &'static str,
        step: usize,
        value: f64,
    },

    #[error("DPW guidance requested (lambda_dpw = {0}) but no pseudo ground truth was given")]
    MissingPseudoGroundTruth(f64),

    #[error("path budget {budget} is smaller than the superpixel count {superpixels}")]
    BudgetTooSmall { budget: usize, superpixels: usize },

    #[error("svg element {element}: {message}")]
    SvgElement { element: usize, message: String },

    #[error("svg: {0}")]
    Svg(String),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Png(#[from] png::EncodingError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, found: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
