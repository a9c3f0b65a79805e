//! Retrieval ablation: grade the same synthetic workload with retrieval
//! disabled, faculty answers only, and the full pipeline, then track the
//! Pearson correlation with ground truth as more responses are included.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::AuditLog;
use crate::cache::CacheConfig;
use crate::embedding::{EmbedderConfig, HashEmbedder};
use crate::evaluation::{EvaluationError, MockEvaluator, RubricWeights};
use crate::metrics::{pearson, MetricsError};
use crate::pipeline::{GradingEngine, PipelineConfig, PipelineError, PipelineMode};
use crate::synthetic::{generate_synthetic, SyntheticCorpus, SyntheticError, SyntheticSpec};

pub const MIN_RESPONSES: usize = 50;

#[derive(Debug, Error)]
pub enum AblationError {
    #[error("insufficient data: {0} responses, need at least {MIN_RESPONSES}")]
    InsufficientData(usize),
    #[error("scores and oracle differ in length: {0} vs {1}")]
    Misaligned(usize, usize),
    #[error("response `{0}` failed to grade: {1}")]
    Grading(String, String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error(transparent)]
    Synthetic(#[from] SyntheticError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Engine settings shared by batch grading, the ablation harness and the service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct EngineConfig {
    pub embedder: EmbedderConfig,
    pub cache: CacheConfig,
    pub weights: RubricWeights,
    pub pipeline: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub mode: PipelineMode,
    pub n: usize,
    pub pearson: f64,
}

/// 50, 100, 200, ... below `total`, then `total` itself.
pub fn prefix_lengths(total: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut n = MIN_RESPONSES;
    while n < total {
        out.push(n);
        n *= 2;
    }
    if total >= MIN_RESPONSES {
        out.push(total);
    }
    out
}

/// Pearson correlation over each prefix of the two aligned series.
pub fn correlation_series(scores: &[f64], oracle: &[f64]) -> Result<Vec<(usize, f64)>, AblationError> {
    if scores.len() != oracle.len() {
        return Err(AblationError::Misaligned(scores.len(), oracle.len()));
    }
    if scores.len() < MIN_RESPONSES {
        return Err(AblationError::InsufficientData(scores.len()));
    }
    prefix_lengths(scores.len())
        .into_iter()
        .map(|n| Ok((n, pearson(&scores[..n], &oracle[..n])?)))
        .collect()
}

/// Scores for every response, in corpus order, under one mode.
pub fn grade_corpus(
    synthetic: &SyntheticCorpus,
    mode: PipelineMode,
    config: &EngineConfig,
) -> Result<Vec<f64>, AblationError> {
    let embedder = Arc::new(HashEmbedder::new(config.embedder.clone()).map_err(PipelineError::from)?);
    let evaluator = Arc::new(MockEvaluator::new(config.weights.clone())?);
    let engine = GradingEngine::new(
        &synthetic.corpus,
        embedder,
        evaluator,
        PipelineConfig {
            mode,
            ..config.pipeline.clone()
        },
        config.cache.clone(),
        Arc::new(AuditLog::new()),
    )?;
    synthetic
        .responses
        .iter()
        .map(|r| {
            engine
                .grade(r)
                .map(|o| o.result.score)
                .map_err(|f| AblationError::Grading(r.response_id.clone(), f.error.to_string()))
        })
        .collect()
}

/// Every mode's correlation curve on one corpus.
pub fn run_ablation(synthetic: &SyntheticCorpus, config: &EngineConfig) -> Result<Vec<AblationPoint>, AblationError> {
    if synthetic.responses.len() < MIN_RESPONSES {
        return Err(AblationError::InsufficientData(synthetic.responses.len()));
    }
    let oracle: Vec<f64> = synthetic.oracle_scores.iter().map(|s| s.score).collect();
    let mut points = Vec::new();
    for mode in PipelineMode::ALL {
        let scores = grade_corpus(synthetic, mode, config)?;
        for (n, r) in correlation_series(&scores, &oracle)? {
            points.push(AblationPoint { mode, n, pearson: r });
        }
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationSummary {
    pub per_seed: Vec<(u64, Vec<AblationPoint>)>,
    /// Mean over seeds, same (mode, n) order as each run.
    pub mean: Vec<AblationPoint>,
}

impl AblationSummary {
    pub fn mean_at(&self, mode: PipelineMode, n: usize) -> Option<f64> {
        self.mean.iter().find(|p| p.mode == mode && p.n == n).map(|p| p.pearson)
    }
}

/// Runs the ablation on `seeds` corpora generated from `spec.seed`,
/// `spec.seed + 1`, ...
pub fn run_ablation_seeds(
    spec: &SyntheticSpec,
    seeds: usize,
    config: &EngineConfig,
) -> Result<AblationSummary, AblationError> {
    let mut per_seed = Vec::with_capacity(seeds);
    for i in 0..seeds as u64 {
        let seed = spec.seed.wrapping_add(i);
        let synthetic = generate_synthetic(&SyntheticSpec { seed, ..spec.clone() })?;
        per_seed.push((seed, run_ablation(&synthetic, config)?));
    }
    let mean = match per_seed.first() {
        None => Vec::new(),
        Some((_, first)) => first
            .iter()
            .enumerate()
            .map(|(i, p)| AblationPoint {
                mode: p.mode,
                n: p.n,
                pearson: per_seed.iter().map(|(_, run)| run[i].pearson).sum::<f64>() / per_seed.len() as f64,
            })
            .collect(),
    };
    Ok(AblationSummary { per_seed, mean })
}

/// CSV with header `mode,n,pearson`.
pub fn ablation_csv(points: &[AblationPoint]) -> String {
    let mut s = String::from("mode,n,pearson\n");
    for p in points {
        let _ = writeln!(s, "{},{},{:.6}", p.mode.as_str(), p.n, p.pearson);
    }
    s
}
