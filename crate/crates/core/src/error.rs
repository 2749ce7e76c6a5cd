//! Error types shared across the pipeline.

use thiserror::Error;

/// Failure to extract structure from an LLM response.
#[derive(Debug, Clone, Error)]
pub enum ParseError {
    #[error("no stance code or label word found in {0:?}")]
    StanceCode(String),
    #[error("judgment text is empty")]
    EmptyJudgment,
    #[error("missing section {0:?}")]
    MissingSection(&'static str),
    #[error("section {0:?} is empty")]
    EmptySection(&'static str),
    #[error("no `knowledge --> conclusion` pairs found in the reasoning section")]
    NoPairs,
    #[error("fine-grained label group {0} is missing or empty")]
    MissingFslGroup(char),
    #[error("fine-grained label codes are not consecutive letters starting at 'a'")]
    NonConsecutiveFsl,
    #[error("explicit stance label line {0} is missing")]
    MissingEslLine(char),
    #[error("favor and against descriptions must differ and be non-empty")]
    DegenerateEsl,
    #[error("unknown placeholder {{{0}}} in template")]
    UnknownPlaceholder(String),
    #[error("template {0:?} not found")]
    TemplateNotFound(String),
}

/// Errors raised by chat and embedding backends.
#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("backend {backend_id:?} unavailable: {reason}")]
    BackendUnavailable { backend_id: String, reason: String },
    #[error("replay cache has no entry for request digest {digest}")]
    ReplayMiss { digest: String },
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding contains non-finite values")]
    InvalidEmbedding,
    #[error("cache i/o failure at {path}: {source}")]
    CacheIo {
        path: String,
        source: std::io::Error,
    },
    #[error("cache entry {digest} is corrupt: {reason}")]
    CacheCorrupt { digest: String, reason: String },
}

/// Errors from the knowledge preparation stage.
#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("search provider unavailable: {0}")]
    SearchUnavailable(String),
    #[error("search returned zero pages for target {0:?}")]
    EmptyResults(String),
    #[error("need {needed} distractor chunks but only {available} available")]
    InsufficientDistractors { needed: usize, available: usize },
    #[error("chunk {0:?} has no embedding")]
    NotEmbedded(String),
    #[error("explicit stance label generation failed: {0}")]
    EslGeneration(#[from] ParseError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("i/o failure at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Errors from dataset loading, metrics, and the pipeline runner.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction and gold vectors have different lengths ({preds} vs {golds})")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("need at least {needed} data points, got {got}")]
    NotEnoughData { needed: usize, got: usize },
    #[error("dataset schema error at line {line}: {reason}")]
    SchemaError { line: usize, reason: String },
    #[error("dataset {0:?} contains no samples")]
    EmptyDataset(String),
    #[error("no judgments to aggregate")]
    EmptyJudgments,
    #[error("rhetoric labels file {0:?} required for the rhetoric experiment")]
    MissingRhetoricLabels(String),
    #[error("manifest version {found} does not match expected {expected}")]
    ManifestVersionMismatch { found: u32, expected: u32 },
    #[error("no prepared knowledge for target {0:?}")]
    MissingKnowledge(String),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("i/o failure at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("json failure at {path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
}

/// Invalid run configuration.
#[derive(Debug, Clone, Error)]
#[error("invalid configuration: {0}")]
pub struct ConfigError(pub String);
