//! Scoring stage: build an evaluation request from the faculty answer, the
//! transcript and retrieved evidence, then score it with a pluggable
//! evaluator that returns a score, a sectioned rationale and citations.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cache::{RetrievedFact, Tier};
use crate::retrieval::{ReferenceChunk, SimilarityVerdict};

/// Evidence at or above this similarity counts as covered.
pub const COVERAGE_FLOOR: f64 = 0.5;
/// Verdicts this close to the threshold are flagged for review.
pub const NEAR_THRESHOLD_BAND: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvaluationError {
    #[error("question id mismatch: request is for `{expected}`, chunk `{chunk_id}` belongs to `{found}`")]
    InconsistentQuestionId {
        expected: String,
        found: String,
        chunk_id: String,
    },
    #[error("stage {0} requires at least one faculty chunk")]
    MissingFacultyChunks(Stage),
    #[error("stage {stage} inconsistent with request contents: {reason}")]
    InconsistentStage { stage: Stage, reason: &'static str },
    #[error("invalid rubric weights: {0}")]
    InvalidWeights(String),
    #[error("evaluation provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("malformed provider response: {0}")]
    MalformedProviderResponse(String),
}

/// Which path through the pipeline produced the evidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Stage {
    /// Response exceeded the faculty-answer threshold.
    Rag1Pass,
    /// Below threshold with further retrieval disabled (ablation arm).
    Rag1Only,
    CacheAugmented,
    Rag2Fallback,
    /// No retrieval at all (ablation arm).
    LlmOnly,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Rag1Pass => "RAG1_PASS",
            Stage::Rag1Only => "RAG1_ONLY",
            Stage::CacheAugmented => "CACHE_AUGMENTED",
            Stage::Rag2Fallback => "RAG2_FALLBACK",
            Stage::LlmOnly => "LLM_ONLY",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Category {
    Fail,
    Average,
    Good,
    Excellent,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Fail, Category::Average, Category::Good, Category::Excellent];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Category::Fail => "FAIL",
            Category::Average => "AVERAGE",
            Category::Good => "GOOD",
            Category::Excellent => "EXCELLENT",
        };
        f.write_str(s)
    }
}

pub const DEFAULT_CATEGORY_BOUNDS: [f64; 3] = [0.40, 0.60, 0.80];

/// Lower bounds are inclusive: `[b1, b2)` is AVERAGE, and so on.
pub fn bin_category(fraction: f64, bounds: &[f64; 3]) -> Category {
    if fraction >= bounds[2] {
        Category::Excellent
    } else if fraction >= bounds[1] {
        Category::Good
    } else if fraction >= bounds[0] {
        Category::Average
    } else {
        Category::Fail
    }
}

/// Category of a score out of `max_marks`; a zero-mark question bins as FAIL.
pub fn category_for_score(score: f64, max_marks: f64, bounds: &[f64; 3]) -> Category {
    let fraction = if max_marks > 0.0 { score / max_marks } else { 0.0 };
    bin_category(fraction, bounds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RubricWeights {
    pub alpha: f64,
    pub beta: f64,
    pub category_bounds: [f64; 3],
}

impl Default for RubricWeights {
    fn default() -> Self {
        Self {
            alpha: 0.7,
            beta: 0.3,
            category_bounds: DEFAULT_CATEGORY_BOUNDS,
        }
    }
}

impl RubricWeights {
    pub fn validate(&self) -> Result<(), EvaluationError> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(EvaluationError::InvalidWeights(
                "alpha and beta must be non-negative".into(),
            ));
        }
        if (self.alpha + self.beta - 1.0).abs() > 1e-9 {
            return Err(EvaluationError::InvalidWeights("alpha + beta must equal 1".into()));
        }
        let [b1, b2, b3] = self.category_bounds;
        if !(0.0 < b1 && b1 < b2 && b2 < b3 && b3 < 1.0) {
            return Err(EvaluationError::InvalidWeights(
                "category bounds must be strictly ascending inside (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacultyAnswer {
    pub chunk_id: String,
    pub text: String,
    pub max_marks: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marking_notes: Option<String>,
}

impl From<&ReferenceChunk> for FacultyAnswer {
    fn from(c: &ReferenceChunk) -> Self {
        Self {
            chunk_id: c.chunk_id.clone(),
            text: c.text.clone(),
            max_marks: c.max_marks,
            marking_notes: c.marking_notes.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceFact {
    pub fact_id: String,
    pub topic: String,
    pub text: String,
    pub similarity: f64,
    /// Where the fact was found: HOT, COLD or the deep store.
    pub source: Tier,
}

impl EvidenceFact {
    pub fn from_retrieved(r: &RetrievedFact) -> Self {
        Self {
            fact_id: r.fact.fact_id.clone(),
            topic: r.fact.topic.clone(),
            text: r.fact.text.clone(),
            similarity: r.similarity,
            source: r.fact.tier,
        }
    }

    /// Same fact, attributed to a deep-store retrieval.
    pub fn from_fallback(r: &RetrievedFact) -> Self {
        Self {
            source: Tier::DeepStore,
            ..Self::from_retrieved(r)
        }
    }
}

/// Everything the evaluator sees. Field order is fixed, so the serialized
/// form (and therefore [`EvaluationRequest::content_hash`]) is stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRequest {
    pub question_id: String,
    pub question_text: String,
    pub transcript: String,
    pub faculty_chunks: Vec<FacultyAnswer>,
    pub evidence_facts: Vec<EvidenceFact>,
    pub rag1_verdict: Option<SimilarityVerdict>,
    /// Similarity of the transcript to the question prompt itself.
    pub prompt_similarity: f64,
    pub max_marks: f64,
    pub stage: Stage,
}

impl EvaluationRequest {
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("request is always serializable")
    }

    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// Ids a grade may cite: faculty chunks, the verdict's best chunk and evidence facts.
    pub fn citable_ids(&self) -> BTreeSet<&str> {
        self.faculty_chunks
            .iter()
            .map(|c| c.chunk_id.as_str())
            .chain(self.rag1_verdict.iter().map(|v| v.best_chunk_id.as_str()))
            .chain(self.evidence_facts.iter().map(|f| f.fact_id.as_str()))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct RequestParts<'a> {
    pub question_id: &'a str,
    pub question_text: &'a str,
    pub transcript: &'a str,
    pub faculty_chunks: &'a [ReferenceChunk],
    pub evidence: Vec<EvidenceFact>,
    pub verdict: Option<SimilarityVerdict>,
    pub prompt_similarity: f64,
    pub max_marks: f64,
    pub stage: Stage,
}

pub fn assemble_request(parts: RequestParts<'_>) -> Result<EvaluationRequest, EvaluationError> {
    if let Some(c) = parts.faculty_chunks.iter().find(|c| c.question_id != parts.question_id) {
        return Err(EvaluationError::InconsistentQuestionId {
            expected: parts.question_id.to_string(),
            found: c.question_id.clone(),
            chunk_id: c.chunk_id.clone(),
        });
    }
    let stage = parts.stage;
    if stage != Stage::LlmOnly && parts.faculty_chunks.is_empty() {
        return Err(EvaluationError::MissingFacultyChunks(stage));
    }
    let inconsistent = |reason| Err(EvaluationError::InconsistentStage { stage, reason });
    match stage {
        Stage::LlmOnly => {
            if !parts.faculty_chunks.is_empty() || !parts.evidence.is_empty() || parts.verdict.is_some() {
                return inconsistent("ungrounded requests carry no retrieval context");
            }
        }
        Stage::Rag1Pass if !parts.verdict.as_ref().is_some_and(|v| v.passed) => {
            return inconsistent("requires a passing verdict");
        }
        Stage::Rag1Only | Stage::CacheAugmented | Stage::Rag2Fallback
            if parts.verdict.as_ref().is_none_or(|v| v.passed) =>
        {
            return inconsistent("requires a failing verdict");
        }
        Stage::Rag2Fallback if !parts.evidence.iter().any(|e| e.source == Tier::DeepStore) => {
            return inconsistent("requires at least one deep-store retrieval");
        }
        _ => {}
    }
    Ok(EvaluationRequest {
        question_id: parts.question_id.to_string(),
        question_text: parts.question_text.to_string(),
        transcript: parts.transcript.to_string(),
        faculty_chunks: parts.faculty_chunks.iter().map(FacultyAnswer::from).collect(),
        evidence_facts: parts.evidence,
        rag1_verdict: parts.verdict,
        prompt_similarity: parts.prompt_similarity,
        max_marks: parts.max_marks,
        stage,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rationale {
    pub correct_points: String,
    pub omissions: String,
    pub improvements: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeResult {
    pub score: f64,
    pub max_marks: f64,
    pub category: Category,
    pub rationale: Rationale,
    pub evidence_citations: Vec<String>,
    pub confidence_flag: bool,
    pub stage: Stage,
}

pub trait Evaluator: Send + Sync {
    fn evaluate(&self, request: &EvaluationRequest) -> Result<GradeResult, EvaluationError>;
}

/// Deterministic rubric scorer standing in for the language model.
#[derive(Debug, Clone, Default)]
pub struct MockEvaluator {
    weights: RubricWeights,
}

impl MockEvaluator {
    pub fn new(weights: RubricWeights) -> Result<Self, EvaluationError> {
        weights.validate()?;
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &RubricWeights {
        &self.weights
    }
}

pub fn fact_coverage(request: &EvaluationRequest) -> f64 {
    if request.stage == Stage::Rag1Pass {
        return 1.0;
    }
    let covered = request
        .evidence_facts
        .iter()
        .filter(|f| f.similarity >= COVERAGE_FLOOR)
        .count();
    covered as f64 / request.evidence_facts.len().max(1) as f64
}

/// Rounds to the nearest half mark and clamps into `[0, max_marks]`.
pub fn half_mark(raw_fraction: f64, max_marks: f64) -> f64 {
    ((raw_fraction * max_marks * 2.0).round() / 2.0).clamp(0.0, max_marks)
}

impl Evaluator for MockEvaluator {
    fn evaluate(&self, request: &EvaluationRequest) -> Result<GradeResult, EvaluationError> {
        let w = &self.weights;
        let coverage = fact_coverage(request);
        let signal = request
            .rag1_verdict
            .as_ref()
            .map_or(request.prompt_similarity, |v| v.similarity);
        let raw = w.alpha * signal + w.beta * coverage;
        let score = half_mark(raw, request.max_marks);
        let category = category_for_score(score, request.max_marks, &w.category_bounds);

        let near_threshold = request
            .rag1_verdict
            .as_ref()
            .is_some_and(|v| (v.similarity - v.threshold).abs() < NEAR_THRESHOLD_BAND);
        let unsupported = request.stage != Stage::Rag1Pass && request.evidence_facts.is_empty();

        let mut citations: Vec<String> = request.rag1_verdict.iter().map(|v| v.best_chunk_id.clone()).collect();
        citations.extend(request.evidence_facts.iter().map(|f| f.fact_id.clone()));

        Ok(GradeResult {
            score,
            max_marks: request.max_marks,
            category,
            rationale: template_rationale(request, category),
            evidence_citations: citations,
            confidence_flag: near_threshold || unsupported,
            stage: request.stage,
        })
    }
}

fn template_rationale(request: &EvaluationRequest, category: Category) -> Rationale {
    let mut correct = Vec::new();
    if let Some(v) = &request.rag1_verdict {
        correct.push(format!(
            "Aligned with faculty answer {} at similarity {:.3}.",
            v.best_chunk_id, v.similarity
        ));
    }
    let (covered, missed): (Vec<_>, Vec<_>) = request
        .evidence_facts
        .iter()
        .partition(|f| f.similarity >= COVERAGE_FLOOR);
    if !covered.is_empty() {
        let ids: Vec<_> = covered.iter().map(|f| f.fact_id.as_str()).collect();
        correct.push(format!("Supported by facts {}.", ids.join(", ")));
    }
    if correct.is_empty() {
        correct.push("No grounded points identified.".into());
    }

    let omissions = if missed.is_empty() {
        "None identified.".to_string()
    } else {
        let ids: Vec<_> = missed.iter().map(|f| f.fact_id.as_str()).collect();
        format!("Weak or missing coverage of facts {}.", ids.join(", "))
    };

    let improvements = match category {
        Category::Excellent => "Maintain the current level of detail.",
        Category::Good => "Add the remaining supporting details from the reference material.",
        Category::Average => "Elaborate on key points and cite specific facts.",
        Category::Fail => "Revisit the topic; the answer does not address the expected content.",
    }
    .to_string();

    Rationale {
        correct_points: correct.join(" "),
        omissions,
        improvements,
    }
}

/// Transport for a remote evaluator: serialized request in, raw JSON body out.
pub trait EvaluatorTransport: Send + Sync {
    fn send(&self, request_json: &str) -> Result<String, String>;
}

/// Evaluator backed by a remote language model. Failures are surfaced, never retried.
#[derive(Clone)]
pub struct RemoteEvaluator {
    transport: Arc<dyn EvaluatorTransport>,
    bounds: [f64; 3],
}

impl RemoteEvaluator {
    pub fn new(transport: Arc<dyn EvaluatorTransport>, bounds: [f64; 3]) -> Self {
        Self { transport, bounds }
    }
}

impl Evaluator for RemoteEvaluator {
    fn evaluate(&self, request: &EvaluationRequest) -> Result<GradeResult, EvaluationError> {
        let body = self
            .transport
            .send(&request.canonical_json())
            .map_err(EvaluationError::ProviderUnavailable)?;
        parse_provider_response(request, &body, &self.bounds)
    }
}

/// Parses a provider reply `{score, rationale: {correct_points, omissions,
/// improvements}, citations}`. Out-of-range scores are clamped and flagged;
/// anything else malformed is rejected.
pub fn parse_provider_response(
    request: &EvaluationRequest,
    body: &str,
    bounds: &[f64; 3],
) -> Result<GradeResult, EvaluationError> {
    let malformed = |m: String| EvaluationError::MalformedProviderResponse(m);
    let value: Value = serde_json::from_str(body).map_err(|e| malformed(format!("not JSON: {e}")))?;

    let raw_score = value
        .get("score")
        .and_then(Value::as_f64)
        .filter(|s| s.is_finite())
        .ok_or_else(|| malformed("score missing or not a finite number".into()))?;

    let rationale = value
        .get("rationale")
        .ok_or_else(|| malformed("rationale missing".into()))?;
    let section = |name: &str| {
        rationale
            .get(name)
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| malformed(format!("rationale.{name} missing or not a string")))
    };
    let rationale = Rationale {
        correct_points: section("correct_points")?,
        omissions: section("omissions")?,
        improvements: section("improvements")?,
    };

    let citations = value
        .get("citations")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed("citations missing or not an array".into()))?
        .iter()
        .map(|c| {
            c.as_str()
                .map(str::to_string)
                .ok_or_else(|| malformed("citation is not a string".into()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let citable = request.citable_ids();
    if let Some(bad) = citations.iter().find(|c| !citable.contains(c.as_str())) {
        return Err(malformed(format!("citation `{bad}` not present in the request")));
    }

    let score = raw_score.clamp(0.0, request.max_marks);
    Ok(GradeResult {
        score,
        max_marks: request.max_marks,
        category: category_for_score(score, request.max_marks, bounds),
        rationale,
        evidence_citations: citations,
        confidence_flag: score != raw_score,
        stage: request.stage,
    })
}
