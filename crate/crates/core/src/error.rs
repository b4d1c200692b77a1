use thiserror::Error;

/// Errors surfaced by the model, quadrature, fitting, and diagnostics layers.
#[derive(Debug, Error)]
pub enum VdrError {
    #[error("invalid parameters: {0:?}")]
    InvalidParams(Vec<String>),

    #[error("spec is infeasible for fitting: N(M-1) = {data_df} must exceed U = {n_params}")]
    InfeasibleSpec { data_df: usize, n_params: usize },

    #[error("quadrature failed to converge in cell ({row}, {col}): est_error {est_error:e}")]
    QuadratureFailure {
        row: usize,
        col: usize,
        est_error: f64,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("fit results refer to different data (digest mismatch)")]
    DataMismatch,

    #[error("sample size {n_obs} too small for AICc with {n_params} parameters")]
    SampleTooSmall { n_obs: usize, n_params: usize },

    #[error("degenerate series: {0}")]
    DegenerateSeries(String),

    #[error("all ratings equal; cannot bin")]
    AllEqualRatings,

    #[error("undefined value: {0}")]
    Undefined(String),

    #[error("no stable sample size within the scanned grid")]
    NoStablePoint,

    #[error("screening failed: {0}")]
    ScreeningFailed(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
