use thiserror::Error;

/// A single configuration problem, located by line when the key can be found.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub line: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid norm specification: {0}")]
    InvalidNorm(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("negative density {value:e} at node {node}")]
    NegativeDensity { node: usize, value: f64 },

    #[error("integration failed at t = {t}: {reason}")]
    IntegrationFailure { t: f64, reason: String },

    #[error("stable step {dt:e} fell below the floor {floor:e} at t = {t}")]
    StepTooSmall { t: f64, dt: f64, floor: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("configuration rejected:\n{}", format_issues(.0))]
    Config(Vec<ConfigIssue>),

    #[error("malformed snapshot: {0}")]
    MalformedSnapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn format_issues(issues: &[ConfigIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("  {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}

pub type Result<T> = std::result::Result<T, Error>;
