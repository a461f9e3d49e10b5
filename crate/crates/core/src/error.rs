use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point {point:?} lies outside the {geometry} chart")]
    Domain {
        geometry: &'static str,
        point: Vec<f64>,
    },

    #[error("flow left the chart at t = {t} after {steps} steps")]
    FlowLeftChart {
        t: f64,
        steps: usize,
        partial: Box<crate::odeint::Trajectory>,
    },

    #[error("non-finite value at t = {t}: {what}")]
    NonFinite { t: f64, what: String },

    #[error("no invariant set registered for ({geometry}, order {order})")]
    UnsupportedGeometry { geometry: String, order: usize },

    #[error("inverse did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("training diverged at epoch {epoch}: {what}")]
    Diverged { epoch: usize, what: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("checkpoint version {found:?} is not supported (expected {expected:?})")]
    CheckpointVersion {
        found: String,
        expected: &'static str,
    },

    #[error("invalid configuration: {0}")]
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

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
