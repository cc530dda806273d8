//! Error types shared across the pipeline.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid scale: {0}")]
    InvalidScale(String),
    #[error("unknown answer label: {0:?}")]
    UnknownLabel(String),
    #[error("answer value {value} outside scale range [1, {size}]")]
    ValueOutOfRange { value: f64, size: i32 },
    #[error("duplicate cell for respondent {respondent}, item {item}")]
    DuplicateCell { respondent: String, item: String },
    #[error("trait {0} has no definition")]
    MissingDefinition(String),
    #[error("unknown trait: {0}")]
    UnknownTrait(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid respondent profile: {0}")]
    InvalidProfile(String),
}

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("sequences have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} observations, got {got}")]
    TooFewObservations { need: usize, got: usize },
    #[error("respondent {respondent} answered no official items of trait {trait_id}")]
    MissingTraitData { respondent: String, trait_id: String },
    #[error("row sums have zero variance; alpha is degenerate")]
    DegenerateVariance,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("selection size {n} exceeds pool size {pool}")]
    SelectionTooLarge { n: usize, pool: usize },
    #[error("selection must be non-empty")]
    EmptySelection,
    #[error("undefined CV for items: {0:?}")]
    UndefinedCv(Vec<String>),
    #[error("subsample size {size} exceeds respondent pool {pool}")]
    SubsampleTooLarge { size: usize, pool: usize },
    #[error("trait {trait_id}: {source}")]
    Trait {
        trait_id: String,
        #[source]
        source: Box<EvalError>,
    },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("trait {0} has no definition")]
    MissingDefinition(String),
    #[error("no parseable items in generation output")]
    GenerationFailure,
    #[error("k = {k} exceeds point count {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("item count {items} does not match embedding count {embeddings}")]
    EmbeddingMismatch { items: usize, embeddings: usize },
    #[error("embedding dimensions disagree ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("zero-norm embedding for item {0}")]
    ZeroNorm(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Error)]
pub enum MediatorError {
    #[error("strategy {strategy} produced no mediators for trait {trait_id}")]
    StrategyFailure { strategy: String, trait_id: String },
    #[error("could not classify WVS conflict verdict: {0:?}")]
    ClassificationParse(String),
    #[error("persona-sentence conversion failed after retry: {0:?}")]
    ConversionFailure(String),
    #[error("strategy {0} requires inputs that were not supplied")]
    MissingInputs(String),
    #[error("empty mediator list")]
    EmptyInput,
    #[error("demographics row {row} missing field {field}")]
    MissingField { row: usize, field: String },
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("no scale label found in response: {0:?}")]
    NoLabel(String),
    #[error("multiple distinct scale labels in response: {0:?}")]
    AmbiguousLabels(String),
    #[error("missing prompt template: {0}")]
    MissingTemplate(String),
    #[error("backend exhausted after {completed} of {total} cells; checkpoint written")]
    PartialRun { completed: usize, total: usize },
    #[error("checkpoint/log i/o: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("selection size {n} exceeds pool size {pool}")]
    SelectionTooLarge { n: usize, pool: usize },
    #[error("selection must be non-empty")]
    EmptySelection,
    #[error("could not parse judge scores from: {0:?}")]
    JudgeParse(String),
    #[error("item {0} had zero successful judge runs")]
    JudgeFailure(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("respondent {respondent} is missing bogus-item answers")]
    MissingBogus { respondent: String },
    #[error("respondent {respondent} has unpaired duplicate item {item}")]
    UnpairedDuplicate { respondent: String, item: String },
    #[error("input file is empty")]
    EmptyFile,
    #[error("row {row}: missing field {field}")]
    MissingField { row: usize, field: String },
    #[error("bogus item generation failed: {0}")]
    Generation(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("missing credentials: set {0}")]
    MissingCredentials(String),
    #[error("request failed after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("replay cache has no record for this request")]
    StrictReplayMiss,
    #[error("embedding dimensions disagree within a batch ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("cache i/o: {0}")]
    CacheIo(#[from] std::io::Error),
    #[error("cache record corrupt: {0}")]
    CacheCorrupt(#[from] serde_json::Error),
}
