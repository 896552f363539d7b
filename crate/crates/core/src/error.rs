use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid coefficient {value} on element {element}")]
    InvalidCoefficient { element: usize, value: f64 },

    #[error("regularization parameter must be positive, got {0}")]
    InvalidRegularization(f64),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("parameter {value:?} outside the parameter domain: {reason}")]
    OutOfDomain { value: Vec<f64>, reason: String },

    #[error("solver failure in {context} (condition estimate {condition_estimate:.3e})")]
    SolverFailure {
        context: String,
        condition_estimate: f64,
    },

    #[error("degenerate basis: {0}")]
    DegenerateBasis(String),

    #[error("degenerate reduced system: {0}")]
    DegenerateReducedSystem(String),

    #[error("invalid geometry: element {element} has Jacobian determinant {det:.3e}")]
    InvalidGeometry { element: usize, det: f64 },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("not enough samples: {0}")]
    InsufficientSamples(String),

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn in_stage(self, stage: impl Into<String>) -> Error {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}
