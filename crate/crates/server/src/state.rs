use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

use thiserror::Error;
use truegrade_core::api::{Appeal, AppealStatus, GradeView, Override, ReviewItem};
use truegrade_core::audit::{AuditError, AuditLog};
use truegrade_core::cache::CacheConfig;
use truegrade_core::corpus::{Corpus, HumanScore};
use truegrade_core::embedding::EmbedderConfig;
use truegrade_core::evaluation::{category_for_score, GradeResult, RubricWeights};
use truegrade_core::pipeline::{GradingEngine, PipelineConfig, PipelineError, StudentResponse};
use truegrade_core::transcription::TranscriptionProvider;

use crate::providers::{ProviderConfig, Providers};

#[derive(Debug, Error)]
pub enum StartupError {
    #[error("provider configuration: {0}")]
    Providers(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error("cannot bind {addr}: {source}")]
    BindFailure {
        addr: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    pub corpus: Corpus,
    pub pipeline: PipelineConfig,
    pub cache: CacheConfig,
    pub embedder: EmbedderConfig,
    pub weights: RubricWeights,
    pub providers: ProviderConfig,
    /// Append-only JSONL sink for the audit chain; in memory when unset.
    pub audit_path: Option<PathBuf>,
    /// Reference human scores for the agreement endpoint.
    pub human_scores: Vec<HumanScore>,
}

#[derive(Debug, Clone)]
pub(crate) struct Entry {
    pub seq: u64,
    pub response: StudentResponse,
    pub grade: GradeResult,
    pub similarity: Option<f64>,
    pub overridden: Option<Override>,
    pub appeal: Option<Appeal>,
}

impl Entry {
    pub fn effective(&self) -> GradeResult {
        let mut g = self.grade.clone();
        if let Some(o) = &self.overridden {
            g.score = o.score;
            g.category = o.category;
        }
        g
    }

    pub fn view(&self) -> GradeView {
        GradeView {
            response_id: self.response.response_id.clone(),
            question_id: self.response.question_id.clone(),
            pseudonym: self.response.pseudonym.clone(),
            grade: self.effective(),
            original_score: self.grade.score,
            original_category: self.grade.category,
            overridden: self.overridden.clone(),
            appeal: self.appeal.clone(),
        }
    }

    pub fn appeal_open(&self) -> bool {
        self.appeal.as_ref().is_some_and(|a| a.status == AppealStatus::Open)
    }

    /// Open appeals always need attention; flagged grades until a reviewer overrides them.
    pub fn needs_review(&self) -> bool {
        self.appeal_open() || (self.grade.confidence_flag && self.overridden.is_none())
    }

    pub fn review_item(&self, question_text: &str) -> ReviewItem {
        let g = self.effective();
        ReviewItem {
            response_id: self.response.response_id.clone(),
            pseudonym: self.response.pseudonym.clone(),
            question_id: self.response.question_id.clone(),
            question_text: question_text.to_string(),
            transcript: self.response.transcript.clone(),
            score: g.score,
            max_marks: g.max_marks,
            category: g.category,
            rationale: g.rationale,
            evidence_citations: g.evidence_citations,
            confidence_flag: g.confidence_flag,
            stage: g.stage,
            similarity: self.similarity,
            appeal: self.appeal.as_ref().map(|a| a.status),
            overridden: self.overridden.is_some(),
        }
    }
}

#[derive(Debug, Default)]
pub(crate) struct Book {
    pub entries: BTreeMap<String, Entry>,
    /// Ids being graded right now.
    pub reserved: BTreeSet<String>,
    pub next_seq: u64,
    pub next_id: u64,
}

pub(crate) struct Inner {
    pub engine: GradingEngine,
    pub transcriber: Arc<dyn TranscriptionProvider>,
    pub bounds: [f64; 3],
    pub human: BTreeMap<String, f64>,
    pub book: Mutex<Book>,
}

/// Shared service state. Cheap to clone.
#[derive(Clone)]
pub struct AppState {
    pub(crate) inner: Arc<Inner>,
}

impl AppState {
    /// Builds the engine and providers. Remote providers need a running
    /// tokio runtime; this call itself is blocking.
    pub fn build(config: ServiceConfig) -> Result<Self, StartupError> {
        let providers =
            Providers::build(&config.providers, &config.embedder, &config.weights).map_err(StartupError::Providers)?;
        let audit = match &config.audit_path {
            Some(p) => AuditLog::with_file(p)?,
            None => AuditLog::new(),
        };
        let engine = GradingEngine::new(
            &config.corpus,
            providers.embedder,
            providers.evaluator,
            config.pipeline,
            config.cache,
            Arc::new(audit),
        )?;
        Ok(Self {
            inner: Arc::new(Inner {
                engine,
                transcriber: providers.transcriber,
                bounds: config.weights.category_bounds,
                human: config
                    .human_scores
                    .into_iter()
                    .map(|h| (h.response_id, h.score))
                    .collect(),
                book: Mutex::new(Book::default()),
            }),
        })
    }

    pub fn engine(&self) -> &GradingEngine {
        &self.inner.engine
    }

    pub fn audit(&self) -> &AuditLog {
        self.inner.engine.audit()
    }

    pub(crate) fn book(&self) -> MutexGuard<'_, Book> {
        self.inner.book.lock().expect("book lock poisoned")
    }

    pub(crate) fn category(&self, score: f64, max_marks: f64) -> truegrade_core::Category {
        category_for_score(score, max_marks, &self.inner.bounds)
    }
}
