use thiserror::Error;

/// Errors surfaced by the simulator and training harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("trajectory file is empty")]
    EmptyTrajectoryFile,

    #[error("non-monotone trajectory time for vehicle {vehicle} at line {line}")]
    NonMonotoneTrajectory { vehicle: u32, line: usize },

    #[error("unstable queue: workload {rho} >= 1")]
    UnstableQueue { rho: f64 },

    #[error("queue oracle requires at least one arrival")]
    NoArrivals,

    #[error("service distribution unrealizable: second moment {second_moment} < mean^2 {mean_sq}")]
    UnrealizableService { second_moment: f64, mean_sq: f64 },

    #[error("reliability target infeasible: fading mean {mean} too small for delta {delta}")]
    InfeasibleReliability { mean: f64, delta: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("no twins counted: aggregate undefined")]
    NoTwins,

    #[error("zero denominator in {metric}")]
    ZeroDenominator { metric: &'static str },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),
}
