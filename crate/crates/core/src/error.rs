//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed CSV in {path}: {message}")]
    Csv { path: String, message: String },

    #[error("invalid group label {label:?} (row {row}); expected 0 or 1")]
    InvalidGroupLabel { label: String, row: usize },

    #[error("missing required column {column:?}")]
    MissingColumn { column: String },

    #[error("analysis column missing: requested s_{requested} but file has s_1..s_{available}")]
    AnalysisColumnMissing { requested: usize, available: usize },

    #[error("empty {arm} arm after filtering")]
    EmptyArm { arm: &'static str },

    #[error("schedule times must be strictly increasing")]
    ScheduleNotIncreasing,

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("degenerate surrogate distribution (zero spread) at analysis column {column}")]
    DegenerateSurrogate { column: usize },

    #[error("no effective neighbors at query point {query} (analysis {analysis}{})",
            subject.as_deref().map(|s| format!(", subject {s}")).unwrap_or_default())]
    NoEffectiveNeighbors {
        query: f64,
        analysis: usize,
        subject: Option<String>,
    },

    #[error("degenerate variance at analysis {analysis}: all conditional-mean values equal")]
    DegenerateVariance { analysis: usize },

    #[error("arm {arm} has {n} usable subjects at analysis {analysis}; need at least 2")]
    ArmTooSmall {
        arm: &'static str,
        n: usize,
        analysis: usize,
    },

    #[error("correlation estimate not PSD: eigenvalue {eigenvalue} below tolerance")]
    NotPsd { eigenvalue: f64 },

    #[error("inner wedge parameter range violated: {0}")]
    InnerWedgeParamRange(String),

    #[error("inner wedge calibration infeasible: {0}")]
    InnerWedgeInfeasible(String),

    #[error("spending function not increasing: increment {increment} at analysis {analysis}")]
    SpendingNotIncreasing { increment: f64, analysis: usize },

    #[error("out-of-order analysis: got {got}, expected {expected}")]
    OutOfOrderAnalysis { got: usize, expected: usize },

    #[error("analysis already recorded: {analysis}")]
    AnalysisAlreadyRecorded { analysis: usize },

    #[error("trial already terminated ({status})")]
    TrialTerminated { status: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
