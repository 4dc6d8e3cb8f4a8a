//! Attention-gated risk classification for clinical event-time case records,
//! trained with pool-based margin-uncertainty active learning.
//!
//! The pipeline runs bottom-up:
//!
//! - [`dataset`]: case records, the line-delimited case file, validation,
//!   the case-report text filter and a seeded synthetic cohort generator.
//! - [`featurizer`]: event embeddings, the fixed 768→32 projection, timestamp
//!   normalization and the 150 × 33 = 4,950-dimensional padded layout.
//! - [`network`]: the attention-gated two-layer classifier with hand-written
//!   forward/backward passes, training and checkpoints.
//! - [`active_loop`]: margin scoring, query selection, label oracles and the
//!   acquisition loop.
//! - [`experiment`]: repeated-split AL-vs-random comparisons and CSV export.
//! - [`importance`]: gated-input feature importance mapped back to event
//!   names, `"Time"` or `"Unknown"`.

pub mod active_loop;
pub mod dataset;
pub mod experiment;
pub mod featurizer;
pub mod importance;
pub mod network;

pub use active_loop::{
    run_al_loop, select_query, uncertainty_score, ActiveLoop, LabelOracle, LabeledCase, LoopConfig,
    LoopError, LoopTrace, Pool, RetrainPolicy, SimulatedOracle, Strategy,
};
pub use dataset::{CaseRecord, DatasetError, EventTime, RiskLevel, ValidationReport};
pub use experiment::{ExperimentConfig, ExperimentError, ExperimentResult, SplitSpec};
pub use featurizer::{
    EmbeddingStore, FeatureError, FeatureSlot, FeatureVector, Featurizer, ProjectionMatrix,
    SlotKind, TimeNormalizer, FEATURE_DIM, PAIR_CAP,
};
pub use importance::{ImportanceError, NameKind, NamedFeature};
pub use network::{GateKind, Mode, Model, ModelConfig, NetworkError, OptimizerKind};
