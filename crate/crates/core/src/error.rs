use std::path::PathBuf;

use thiserror::Error;

use crate::dataset::{Source, Treatment};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // Loading and validation.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("non-numeric cell in row {row}, column `{column}`: {value:?}")]
    NonNumericCell { row: usize, column: String, value: String },
    #[error("missing value in row {row}, column `{column}`")]
    MissingValue { row: usize, column: String },
    #[error("row {row}: source code {code} is not one of 0, 1, 2")]
    InvalidSource { row: usize, code: String },
    #[error("treatment {a} is not in the declared treatment set of source {s}")]
    TreatmentOutsideDeclaredSet { s: Source, a: Treatment },
    #[error("no index trial (s=1) rows")]
    EmptySource,
    #[error("row {row}: outcome {value} is not 0/1 but the outcome is declared binary")]
    NonBinaryOutcome { row: usize, value: f64 },
    #[error("row {row}: categorical covariate `{column}` has non-integer value {value}")]
    NonIntegerLevel { row: usize, column: String, value: f64 },
    #[error("covariate `{0}` is continuous and no binning rule was supplied")]
    ContinuousWithoutBinning(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    // Nuisance fitting.
    #[error("no rows in the fitting subset {0}")]
    EmptySubset(String),
    #[error("IRLS did not converge after {0} iterations")]
    IrlsNonConvergence(usize),
    #[error("logistic coefficients diverge (separation) in subset {0}")]
    SeparationDetected(String),
    #[error("design matrix is singular for subset {0}")]
    SingularDesign(String),
    #[error("covariate cell {0} was not seen when the model was fit")]
    UnseenCategoryLevel(String),
    #[error("logistic family requires a binary response")]
    NonBinaryResponse,
    #[error("covariate vector has {got} entries, the model expects {expected}")]
    CovariateArity { expected: usize, got: usize },

    // Estimation.
    #[error("no rows with s={s}, a={a}")]
    EmptyCell { s: Source, a: Treatment },
    #[error("no rows in target population s={0}")]
    EmptyTarget(Source),
    #[error("external rows do not all receive a single treatment{0}")]
    ExternalNotUniform(String),
    #[error("anchor treatment {a} is missing in source {s}")]
    MissingAnchorArm { s: Source, a: Treatment },
    #[error("fitted denominator mean {value:e} is within 1e-8 of zero at covariate cell {cell}")]
    DenominatorNearZero { value: f64, cell: String },
    #[error("external-only covariates are missing for {0} external rows")]
    MissingW(usize),
    #[error("{floored} of {total} propensity denominators fell below the floor")]
    PositivityFloorTriggered { floored: usize, total: usize },
    #[error("invalid estimand: {0}")]
    InvalidEstimand(String),

    // Diagnostics.
    #[error("no covariate cell is shared by the two control arms")]
    NoCommonSupport,
    #[error("control arm a={a} is missing in source {s}")]
    MissingControlArm { s: Source, a: Treatment },

    // Inference.
    #[error("{failed} of {total} bootstrap replicates failed; first failure: {first}")]
    TooManyReplicateFailures {
        failed: usize,
        total: usize,
        first: String,
    },
    #[error("invalid bootstrap settings: {0}")]
    InvalidBootstrap(String),

    // Scenarios.
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("sample size must be at least 1")]
    EmptySample,

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid config {path}: {message}")]
    InvalidConfig { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
