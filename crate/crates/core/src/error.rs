use thiserror::Error;

/// Errors raised anywhere in the fitting / prediction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid bandwidth {0}: must be finite and strictly positive")]
    InvalidBandwidth(f64),

    #[error("smoothing failed at {location}: local design degenerate after widening bandwidth to {bandwidth}")]
    SmoothingFailure { location: String, bandwidth: f64 },

    #[error("bandwidth selection failed; every candidate failed on some fold: {failed:?}")]
    BandwidthSelection { failed: Vec<f64> },

    #[error("invalid covariance surface: {0}")]
    InvalidCovariance(String),

    #[error("no variance: covariance has no strictly positive eigenvalue")]
    NoVariance,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("current time {tau} is too early: observed segment has fewer than {min_points} grid points")]
    TooEarly { tau: f64, min_points: usize },

    #[error("empty cluster in k-means after {attempts} seedings")]
    EmptyCluster { attempts: usize },

    #[error("cluster {cluster} shrank to {size} curves (minimum {min})")]
    ClusterTooSmall { cluster: usize, size: usize, min: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("bootstrap interval failed: only {successes} of {requested} replicates succeeded")]
    IntervalFailure { successes: usize, requested: usize },

    #[error("study failed: {failures} of {replicates} replicates failed")]
    StudyFailure { failures: usize, replicates: usize },

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("artifact error: {0}")]
    Artifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
