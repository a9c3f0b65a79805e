//! Per-response grading flow: embed → faculty check → cache lookup →
//! deep fallback → evaluate → audit.
//!
//! [`grade_response`] is the single-response primitive. [`GradingEngine`]
//! owns the corpora, one cache per question behind its own lock, and the
//! shared audit log, so distinct questions grade concurrently while
//! responses to one question are serialized.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{AuditAction, AuditError, AuditLog, AuditPayload, AuditRecord};
use crate::cache::{CacheConfig, CacheError, CacheSnapshot, DeepStore, TieredCache};
use crate::corpus::{Corpus, QuestionRecord};
use crate::embedding::{clamped_similarity, Embedder, Embedding, EmbeddingError};
use crate::evaluation::{
    assemble_request, EvaluationError, EvaluationRequest, Evaluator, EvidenceFact, GradeResult, RequestParts, Stage,
    COVERAGE_FLOOR,
};
use crate::retrieval::{Rag1Index, RetrievalError, Threshold};

/// Transcripts below this OCR confidence are always flagged for review.
pub const LOW_TRANSCRIPTION_CONFIDENCE: f64 = 0.5;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("unknown question `{0}`")]
    QuestionUnknown(String),
    #[error("transcript is empty")]
    EmptyTranscript,
    #[error("no cache initialized for question `{0}`")]
    CacheMissing(String),
    #[error("invalid pipeline configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error(transparent)]
    Audit(#[from] AuditError),
}

/// A failed grading attempt and the UNRESOLVED record it left, if the log
/// accepted one.
#[derive(Debug, Error)]
#[error("{error}")]
pub struct GradeFailure {
    pub error: PipelineError,
    pub audit: Option<Box<AuditRecord>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PipelineMode {
    LlmOnly,
    LlmRag1,
    #[default]
    LlmRag1Rag2,
}

impl PipelineMode {
    pub const ALL: [PipelineMode; 3] = [PipelineMode::LlmOnly, PipelineMode::LlmRag1, PipelineMode::LlmRag1Rag2];

    pub fn as_str(self) -> &'static str {
        match self {
            PipelineMode::LlmOnly => "LLM_ONLY",
            PipelineMode::LlmRag1 => "LLM_RAG1",
            PipelineMode::LlmRag1Rag2 => "LLM_RAG1_RAG2",
        }
    }
}

impl std::str::FromStr for PipelineMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PipelineMode::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown mode `{s}` (expected LLM_ONLY, LLM_RAG1 or LLM_RAG1_RAG2)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub threshold: f64,
    pub min_evidence: usize,
    pub mode: PipelineMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            threshold: crate::retrieval::DEFAULT_THRESHOLD,
            min_evidence: 1,
            mode: PipelineMode::LlmRag1Rag2,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<Threshold, PipelineError> {
        if self.min_evidence == 0 {
            return Err(PipelineError::InvalidConfig("min_evidence must be positive".into()));
        }
        Ok(Threshold::new(self.threshold)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentResponse {
    pub response_id: String,
    pub pseudonym: String,
    pub question_id: String,
    pub transcript: String,
    pub transcript_confidence: f64,
}

#[derive(Debug, Clone)]
pub struct GradeOutcome {
    pub result: GradeResult,
    pub request: EvaluationRequest,
    pub audit: AuditRecord,
}

/// Read-only inputs shared by every grading call.
pub struct GradingContext<'a> {
    pub embedder: &'a dyn Embedder,
    pub rag1: &'a Rag1Index,
    pub question: Option<&'a QuestionRecord>,
    pub evaluator: &'a dyn Evaluator,
    pub config: &'a PipelineConfig,
    pub audit: &'a AuditLog,
}

/// Grades one response and appends exactly one audit record, GRADED on
/// success and UNRESOLVED on any failure.
pub fn grade_response(
    ctx: &GradingContext<'_>,
    cache: Option<&mut TieredCache>,
    response: &StudentResponse,
) -> Result<GradeOutcome, GradeFailure> {
    match evaluate_response(ctx, cache, response) {
        Ok((request, mut result)) => {
            if response.transcript_confidence < LOW_TRANSCRIPTION_CONFIDENCE {
                result.confidence_flag = true;
            }
            let payload = AuditPayload {
                stage: Some(result.stage),
                request_hash: Some(request.content_hash()),
                score: Some(result.score),
                evidence_citations: result.evidence_citations.clone(),
                ..AuditPayload::system(&response.response_id, AuditAction::Graded)
            };
            match ctx.audit.append(&payload) {
                Ok(audit) => Ok(GradeOutcome { result, request, audit }),
                Err(e) => Err(GradeFailure {
                    error: e.into(),
                    audit: None,
                }),
            }
        }
        Err((error, request)) => {
            let payload = AuditPayload {
                stage: request.as_ref().map(|r| r.stage),
                request_hash: request.as_ref().map(|r| r.content_hash()),
                note: Some(error.to_string()),
                ..AuditPayload::system(&response.response_id, AuditAction::Unresolved)
            };
            Err(GradeFailure {
                audit: ctx.audit.append(&payload).ok().map(Box::new),
                error,
            })
        }
    }
}

type Failed = (PipelineError, Option<Box<EvaluationRequest>>);

fn evaluate_response(
    ctx: &GradingContext<'_>,
    cache: Option<&mut TieredCache>,
    response: &StudentResponse,
) -> Result<(EvaluationRequest, GradeResult), Failed> {
    let early = |e: PipelineError| (e, None);
    let threshold = ctx.config.validate().map_err(early)?;
    if response.transcript.trim().is_empty() {
        return Err(early(PipelineError::EmptyTranscript));
    }
    let chunks = ctx
        .rag1
        .chunks_for(&response.question_id)
        .map_err(|_| early(PipelineError::QuestionUnknown(response.question_id.clone())))?;
    let max_marks = chunks.iter().map(|c| c.max_marks).fold(0.0, f64::max);

    let transcript = ctx.embedder.embed(&response.transcript).map_err(|e| early(e.into()))?;
    let question_text = ctx.question.map_or(response.question_id.as_str(), |q| q.text.as_str());
    let prompt = ctx.embedder.embed(question_text).map_err(|e| early(e.into()))?;
    let prompt_similarity = clamped_similarity(&transcript, &prompt).map_err(|e| early(e.into()))?;

    let mut parts = RequestParts {
        question_id: &response.question_id,
        question_text,
        transcript: &response.transcript,
        faculty_chunks: chunks,
        evidence: Vec::new(),
        verdict: None,
        prompt_similarity,
        max_marks,
        stage: Stage::LlmOnly,
    };

    if ctx.config.mode == PipelineMode::LlmOnly {
        parts.faculty_chunks = &[];
    } else {
        let verdict = ctx
            .rag1
            .check(&response.question_id, &transcript, threshold)
            .map_err(|e| early(e.into()))?;
        let passed = verdict.passed;
        parts.verdict = Some(verdict);
        parts.stage = if passed {
            Stage::Rag1Pass
        } else if ctx.config.mode == PipelineMode::LlmRag1 {
            Stage::Rag1Only
        } else {
            let cache = cache.ok_or_else(|| early(PipelineError::CacheMissing(response.question_id.clone())))?;
            let found = cache.lookup(&transcript).map_err(|e| early(e.into()))?;
            let strong = found.iter().filter(|f| f.similarity >= COVERAGE_FLOOR).count();
            if strong >= ctx.config.min_evidence {
                parts.evidence = found.iter().map(EvidenceFact::from_retrieved).collect();
                Stage::CacheAugmented
            } else {
                let deep = cache.fallback_retrieve(&transcript).map_err(|e| early(e.into()))?;
                parts.evidence = deep.iter().map(EvidenceFact::from_fallback).collect();
                Stage::Rag2Fallback
            }
        };
    }

    let request = assemble_request(parts).map_err(|e| early(e.into()))?;
    match ctx.evaluator.evaluate(&request) {
        Ok(result) => Ok((request, result)),
        Err(e) => Err((e.into(), Some(Box::new(request)))),
    }
}

/// Corpora, caches and audit log for a grading session.
pub struct GradingEngine {
    embedder: Arc<dyn Embedder>,
    rag1: Rag1Index,
    questions: BTreeMap<String, QuestionRecord>,
    deep: Arc<DeepStore>,
    caches: BTreeMap<String, Mutex<TieredCache>>,
    evaluator: Arc<dyn Evaluator>,
    config: PipelineConfig,
    audit: Arc<AuditLog>,
}

impl GradingEngine {
    pub fn new(
        corpus: &Corpus,
        embedder: Arc<dyn Embedder>,
        evaluator: Arc<dyn Evaluator>,
        config: PipelineConfig,
        cache_config: CacheConfig,
        audit: Arc<AuditLog>,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        let rag1 = Rag1Index::from_records(corpus.references.clone(), embedder.as_ref())?;
        let deep = Arc::new(DeepStore::from_records(corpus.facts.clone(), embedder.as_ref())?);
        let questions: BTreeMap<_, _> = corpus
            .questions
            .iter()
            .map(|q| (q.question_id.clone(), q.clone()))
            .collect();

        let mut caches = BTreeMap::new();
        if config.mode == PipelineMode::LlmRag1Rag2 {
            for qid in rag1.question_ids() {
                let seed_query = match questions.get(qid) {
                    Some(q) => embedder.embed(&q.text)?,
                    None => rag1.chunks_for(qid)?[0].embedding.clone(),
                };
                let cache = TieredCache::init_for_question(deep.clone(), &seed_query, cache_config.clone())?;
                caches.insert(qid.to_string(), Mutex::new(cache));
            }
        }
        Ok(Self {
            embedder,
            rag1,
            questions,
            deep,
            caches,
            evaluator,
            config,
            audit,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn audit(&self) -> &Arc<AuditLog> {
        &self.audit
    }

    pub fn rag1(&self) -> &Rag1Index {
        &self.rag1
    }

    pub fn deep_store(&self) -> &Arc<DeepStore> {
        &self.deep
    }

    pub fn question(&self, question_id: &str) -> Option<&QuestionRecord> {
        self.questions.get(question_id)
    }

    pub fn embed(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        self.embedder.embed(text)
    }

    pub fn grade(&self, response: &StudentResponse) -> Result<GradeOutcome, GradeFailure> {
        let ctx = GradingContext {
            embedder: self.embedder.as_ref(),
            rag1: &self.rag1,
            question: self.questions.get(&response.question_id),
            evaluator: self.evaluator.as_ref(),
            config: &self.config,
            audit: &self.audit,
        };
        match self.caches.get(&response.question_id) {
            Some(lock) => {
                let mut cache = lock.lock().expect("cache lock poisoned");
                grade_response(&ctx, Some(&mut cache), response)
            }
            None => grade_response(&ctx, None, response),
        }
    }

    pub fn cache_snapshot(&self, question_id: &str) -> Option<CacheSnapshot> {
        self.caches
            .get(question_id)
            .map(|c| c.lock().expect("cache lock poisoned").snapshot())
    }

    pub fn with_cache<R>(&self, question_id: &str, f: impl FnOnce(&TieredCache) -> R) -> Option<R> {
        self.caches
            .get(question_id)
            .map(|c| f(&c.lock().expect("cache lock poisoned")))
    }

    /// Replaces one question's cache with a restored snapshot.
    pub fn restore_cache(&mut self, question_id: &str, snapshot: &CacheSnapshot) -> Result<(), PipelineError> {
        let cache = TieredCache::restore(self.deep.clone(), snapshot)?;
        self.caches.insert(question_id.to_string(), Mutex::new(cache));
        Ok(())
    }
}
