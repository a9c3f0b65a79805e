//! Retrieval-augmented grading engine for handwritten exam answers.
//!
//! A response is embedded, checked against the faculty model answer, and
//! enriched from a per-question tiered fact cache (with a deep-store
//! fallback) before a rubric evaluator scores it. Every grading decision is
//! appended to a hash-chained audit log.

pub mod ablation;
pub mod allocation;
pub mod api;
pub mod audit;
pub mod cache;
pub mod corpus;
pub mod embedding;
pub mod evaluation;
pub mod metrics;
pub mod pipeline;
pub mod retrieval;
pub mod synthetic;
pub mod transcription;

pub use ablation::EngineConfig;
pub use audit::{AuditLog, VerifyOutcome};
pub use corpus::Corpus;
pub use embedding::{Embedder, Embedding, HashEmbedder};
pub use evaluation::{Category, GradeResult, MockEvaluator, Stage};
pub use pipeline::{GradingEngine, PipelineConfig, PipelineMode, StudentResponse};
