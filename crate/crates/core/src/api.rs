//! JSON bodies exchanged by the grading service and its clients.

use serde::{Deserialize, Serialize};

use crate::audit::{AuditPayload, AuditRecord};
use crate::evaluation::{Category, GradeResult, Rationale, Stage};

/// `POST /responses`. Exactly one of `transcript` or `blob` must be set:
/// a transcript is graded as-is, a blob goes through the transcription
/// provider first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_id: Option<String>,
    pub pseudonym: String,
    pub question_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blob: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript_confidence: Option<f64>,
}

impl SubmitRequest {
    pub fn text(pseudonym: &str, question_id: &str, transcript: &str) -> Self {
        Self {
            response_id: None,
            pseudonym: pseudonym.to_string(),
            question_id: question_id.to_string(),
            transcript: Some(transcript.to_string()),
            blob: None,
            transcript_confidence: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub response_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AppealStatus {
    Open,
    Resolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Appeal {
    pub status: AppealStatus,
    pub opened_by: String,
    pub reason: Option<String>,
    pub resolved_by: Option<String>,
    pub resolution: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Override {
    pub score: f64,
    pub category: Category,
    pub reason: String,
    pub reviewer_id: String,
}

/// `GET /grades/{response_id}`. The flattened grade carries the effective
/// score, which is the latest override when one exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeView {
    pub response_id: String,
    pub question_id: String,
    pub pseudonym: String,
    #[serde(flatten)]
    pub grade: GradeResult,
    pub original_score: f64,
    pub original_category: Category,
    pub overridden: Option<Override>,
    pub appeal: Option<Appeal>,
}

/// `POST /review/{response_id}/override`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverrideRequest {
    pub score: f64,
    pub reason: String,
    pub reviewer_id: String,
}

/// `POST /appeals/{response_id}`. The body is optional; the opener defaults
/// to the response's pseudonym.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AppealRequest {
    #[serde(default)]
    pub reason: Option<String>,
    #[serde(default)]
    pub opened_by: Option<String>,
}

/// `POST /appeals/{response_id}/resolve`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolveAppealRequest {
    pub reviewer_id: String,
    #[serde(default)]
    pub resolution: Option<String>,
}

/// One entry of `GET /review/queue`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub response_id: String,
    pub pseudonym: String,
    pub question_id: String,
    pub question_text: String,
    pub transcript: String,
    pub score: f64,
    pub max_marks: f64,
    pub category: Category,
    pub rationale: Rationale,
    pub evidence_citations: Vec<String>,
    pub confidence_flag: bool,
    pub stage: Stage,
    /// RAG1 verdict similarity, absent when the faculty check did not run.
    pub similarity: Option<f64>,
    pub appeal: Option<AppealStatus>,
    pub overridden: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceKind {
    FacultyAnswer,
    Fact,
}

/// `GET /evidence/{id}`: resolves a citation to its text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceView {
    pub id: String,
    pub kind: EvidenceKind,
    pub text: String,
}

/// One entry of `GET /audit/records`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecordView {
    pub sequence_no: u64,
    pub prev_hash: String,
    pub hash: String,
    pub payload: AuditPayload,
}

impl TryFrom<&AuditRecord> for AuditRecordView {
    type Error = serde_json::Error;

    fn try_from(r: &AuditRecord) -> Result<Self, Self::Error> {
        Ok(Self {
            sequence_no: r.sequence_no,
            prev_hash: hex::encode(r.prev_hash),
            hash: r.hash_hex(),
            payload: r.payload()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
