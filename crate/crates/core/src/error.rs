use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite {what} at s={s}, x={x:?}, u={u:?}")]
    NonFinite {
        what: &'static str,
        s: f64,
        x: Vec<f64>,
        u: Vec<f64>,
    },

    #[error("expression error: {0}")]
    Expression(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown fixture `{0}` (expected 5.1 or 5.2)")]
    UnknownFixture(String),

    #[error("rank-deficient regression at step {step}")]
    RankDeficient { step: usize },

    #[error("transformed value non-positive at step {step}, path {path}: {value}")]
    NonPositiveTransform { step: usize, path: usize, value: f64 },

    #[error("backward solve diverged at step {step}: |Y|={value} exceeds {limit}")]
    Divergence { step: usize, value: f64, limit: f64 },

    #[error("CFL condition needs {required} time steps, budget is {budget}; coarsen the spatial grid or raise the step budget")]
    Cfl { required: usize, budget: usize },

    #[error("missing derivative callbacks: {}", .0.join(", "))]
    MissingDerivatives(Vec<&'static str>),

    #[error("jet radius {radius} below value resolution {resolution}")]
    RadiusBelowResolution { radius: f64, resolution: f64 },

    #[error("matrix not symmetric (asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
