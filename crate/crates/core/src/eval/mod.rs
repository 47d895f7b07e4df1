//! Metrics, precision-recall curves, cross-validation, and report output.

pub mod metrics;
pub mod report;
pub mod runner;

use thiserror::Error;

use crate::baseline::BaselineError;
use crate::corpus::CorpusError;
use crate::fewshot::FewShotError;
use crate::llm::LlmError;
use crate::strategy::StrategyError;

pub use metrics::{
    confusion, evaluate, macro_average, micro_pr_curve, pr_curve, ConfusionMatrix, MetricsReport,
    PrCurve, PrPoint,
};
pub use runner::{
    run_experiment, run_folds, Experiment, ExperimentResult, FoldResult, Method, PredictionRecord,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {left} labels vs {right} values")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("no positive labels; the precision-recall curve is undefined")]
    NoPositives,
    #[error("score {0} is outside [0, 1]")]
    InvalidScore(f64),
    #[error("no results to report")]
    NoResults,
    #[error("no runs with probabilistic outputs")]
    NoProbabilisticRuns,
    #[error("sample `{0}` is not in the dataset")]
    UnknownSample(String),
    #[error("this run needs a chat backend")]
    MissingBackend,
    #[error("this run needs a prompt template")]
    MissingTemplate,
    #[error("similarity-based selection needs an embedder")]
    MissingEmbedder,
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    FewShot(#[from] FewShotError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Llm(LlmError),
}
