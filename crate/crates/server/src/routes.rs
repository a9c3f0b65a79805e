use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use truegrade_core::api::{
    Appeal, AppealRequest, AppealStatus, AuditRecordView, EvidenceKind, EvidenceView, GradeView, Override,
    OverrideRequest, ResolveAppealRequest, ReviewItem, SubmitRequest, SubmitResponse,
};
use truegrade_core::audit::{AuditAction, AuditPayload};
use truegrade_core::metrics::{AgreementReport, KappaWeighting, ScorePair};
use truegrade_core::pipeline::StudentResponse;
use truegrade_core::VerifyOutcome;

use crate::error::ApiError;
use crate::state::{AppState, Entry};

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/responses", post(submit))
        .route("/grades/{response_id}", get(grade))
        .route("/review/queue", get(queue))
        .route("/review/{response_id}/override", post(override_grade))
        .route("/appeals/{response_id}", post(open_appeal))
        .route("/appeals/{response_id}/resolve", post(resolve_appeal))
        .route("/audit/verify", get(verify))
        .route("/audit/records", get(records))
        .route("/metrics/agreement", get(agreement))
        .route("/evidence/{id}", get(evidence))
        .with_state(state)
}

/// Reserves the requested id, or the next free generated one.
fn reserve(state: &AppState, requested: Option<String>) -> Result<String, ApiError> {
    let mut book = state.book();
    let id = match requested {
        Some(id) => {
            if book.entries.contains_key(&id) || book.reserved.contains(&id) {
                return Err(ApiError::Conflict(format!("response `{id}` already submitted")));
            }
            id
        }
        None => loop {
            let id = format!("resp-{:06}", book.next_id);
            book.next_id += 1;
            if !book.entries.contains_key(&id) && !book.reserved.contains(&id) {
                break id;
            }
        },
    };
    book.reserved.insert(id.clone());
    Ok(id)
}

async fn submit(
    State(state): State<AppState>,
    Json(req): Json<SubmitRequest>,
) -> Result<(StatusCode, Json<SubmitResponse>), ApiError> {
    if req.pseudonym.trim().is_empty() {
        return Err(ApiError::BadRequest("pseudonym is required".into()));
    }
    if req.transcript.is_some() == req.blob.is_some() {
        return Err(ApiError::BadRequest(
            "exactly one of transcript or blob is required".into(),
        ));
    }
    if let Some(c) = req.transcript_confidence {
        if !(0.0..=1.0).contains(&c) {
            return Err(ApiError::BadRequest("transcript_confidence must lie in [0, 1]".into()));
        }
    }
    if req.response_id.as_ref().is_some_and(|id| id.trim().is_empty()) {
        return Err(ApiError::BadRequest("response_id is empty".into()));
    }
    let response_id = reserve(&state, req.response_id.clone())?;

    let worker = state.clone();
    let id = response_id.clone();
    let graded = tokio::task::spawn_blocking(move || grade_submission(&worker, id, req))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()));

    let mut book = state.book();
    book.reserved.remove(&response_id);
    let mut entry = graded??;
    entry.seq = book.next_seq;
    book.next_seq += 1;
    book.entries.insert(response_id.clone(), entry);
    Ok((StatusCode::CREATED, Json(SubmitResponse { response_id })))
}

/// Transcribes when needed, then grades. Every path leaves one audit record.
fn grade_submission(state: &AppState, response_id: String, req: SubmitRequest) -> Result<Entry, ApiError> {
    let (transcript, confidence) = match (req.transcript, req.blob) {
        (Some(text), _) => (text, req.transcript_confidence.unwrap_or(1.0)),
        (None, Some(blob)) => match state.inner.transcriber.transcribe(&blob) {
            Ok(t) => (t.text, req.transcript_confidence.unwrap_or(t.confidence)),
            Err(e) => {
                let payload = AuditPayload {
                    note: Some(e.to_string()),
                    ..AuditPayload::system(&response_id, AuditAction::Unresolved)
                };
                state.audit().append(&payload)?;
                return Err(ApiError::Unprocessable(e.to_string()));
            }
        },
        (None, None) => unreachable!("validated by the handler"),
    };
    let response = StudentResponse {
        response_id,
        pseudonym: req.pseudonym,
        question_id: req.question_id,
        transcript,
        transcript_confidence: confidence,
    };
    let outcome = state
        .engine()
        .grade(&response)
        .map_err(|f| ApiError::Unprocessable(f.error.to_string()))?;
    Ok(Entry {
        seq: 0,
        similarity: outcome.request.rag1_verdict.as_ref().map(|v| v.similarity),
        response,
        grade: outcome.result,
        overridden: None,
        appeal: None,
    })
}

async fn grade(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<GradeView>, ApiError> {
    let book = state.book();
    let entry = book
        .entries
        .get(&id)
        .ok_or_else(|| ApiError::NotFound(format!("grade for `{id}`")))?;
    Ok(Json(entry.view()))
}

async fn queue(State(state): State<AppState>) -> Json<Vec<ReviewItem>> {
    let book = state.book();
    let mut pending: Vec<&Entry> = book.entries.values().filter(|e| e.needs_review()).collect();
    pending.sort_by_key(|e| (!e.appeal_open(), !e.grade.confidence_flag, e.seq));
    let items = pending
        .into_iter()
        .map(|e| {
            let question = state.engine().question(&e.response.question_id);
            e.review_item(question.map_or("", |q| q.text.as_str()))
        })
        .collect();
    Json(items)
}

async fn override_grade(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<OverrideRequest>,
) -> Result<Json<GradeView>, ApiError> {
    if req.reason.trim().is_empty() {
        return Err(ApiError::BadRequest("reason is required".into()));
    }
    if req.reviewer_id.trim().is_empty() {
        return Err(ApiError::BadRequest("reviewer_id is required".into()));
    }
    let mut book = state.book();
    let entry = book
        .entries
        .get_mut(&id)
        .ok_or_else(|| ApiError::NotFound(format!("grade for `{id}`")))?;
    let max = entry.grade.max_marks;
    if !(req.score.is_finite() && (0.0..=max).contains(&req.score)) {
        return Err(ApiError::BadRequest(format!("score must lie in [0, {max}]")));
    }
    let payload = AuditPayload {
        stage: Some(entry.grade.stage),
        score: Some(req.score),
        actor: req.reviewer_id.clone(),
        note: Some(req.reason.clone()),
        ..AuditPayload::system(&id, AuditAction::Overridden)
    };
    state.audit().append(&payload)?;
    entry.overridden = Some(Override {
        score: req.score,
        category: state.category(req.score, max),
        reason: req.reason,
        reviewer_id: req.reviewer_id,
    });
    Ok(Json(entry.view()))
}

async fn open_appeal(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Option<Json<AppealRequest>>,
) -> Result<(StatusCode, Json<GradeView>), ApiError> {
    let req = body.map(|Json(r)| r).unwrap_or_default();
    let mut book = state.book();
    let entry = book
        .entries
        .get_mut(&id)
        .ok_or_else(|| ApiError::NotFound(format!("grade for `{id}`")))?;
    if entry.appeal_open() {
        return Err(ApiError::Conflict(format!("an appeal on `{id}` is already open")));
    }
    let opened_by = req
        .opened_by
        .filter(|o| !o.trim().is_empty())
        .unwrap_or_else(|| entry.response.pseudonym.clone());
    let payload = AuditPayload {
        stage: Some(entry.grade.stage),
        actor: opened_by.clone(),
        note: req.reason.clone(),
        ..AuditPayload::system(&id, AuditAction::AppealOpened)
    };
    state.audit().append(&payload)?;
    entry.appeal = Some(Appeal {
        status: AppealStatus::Open,
        opened_by,
        reason: req.reason,
        resolved_by: None,
        resolution: None,
    });
    Ok((StatusCode::CREATED, Json(entry.view())))
}

async fn resolve_appeal(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<ResolveAppealRequest>,
) -> Result<Json<GradeView>, ApiError> {
    if req.reviewer_id.trim().is_empty() {
        return Err(ApiError::BadRequest("reviewer_id is required".into()));
    }
    let mut book = state.book();
    let entry = book
        .entries
        .get_mut(&id)
        .ok_or_else(|| ApiError::NotFound(format!("grade for `{id}`")))?;
    if !entry.appeal_open() {
        return Err(ApiError::Conflict(format!("no open appeal on `{id}`")));
    }
    let payload = AuditPayload {
        stage: Some(entry.grade.stage),
        score: Some(entry.effective().score),
        actor: req.reviewer_id.clone(),
        note: req.resolution.clone(),
        ..AuditPayload::system(&id, AuditAction::AppealResolved)
    };
    state.audit().append(&payload)?;
    let appeal = entry.appeal.as_mut().expect("checked open");
    appeal.status = AppealStatus::Resolved;
    appeal.resolved_by = Some(req.reviewer_id);
    appeal.resolution = req.resolution;
    Ok(Json(entry.view()))
}

async fn verify(State(state): State<AppState>) -> Json<VerifyOutcome> {
    Json(state.audit().verify())
}

#[derive(Debug, Deserialize)]
struct RecordFilter {
    response_id: Option<String>,
}

async fn records(
    State(state): State<AppState>,
    Query(filter): Query<RecordFilter>,
) -> Result<Json<Vec<AuditRecordView>>, ApiError> {
    let mut out = Vec::new();
    for r in state.audit().records() {
        let view = AuditRecordView::try_from(&r).map_err(|e| ApiError::Internal(e.to_string()))?;
        if filter
            .response_id
            .as_ref()
            .is_none_or(|id| *id == view.payload.response_id)
        {
            out.push(view);
        }
    }
    Ok(Json(out))
}

#[derive(Debug, Deserialize)]
struct AgreementQuery {
    #[serde(default)]
    weighting: KappaWeighting,
}

/// AI scores against human judgments: a reviewer override where one exists,
/// otherwise the loaded reference score.
async fn agreement(
    State(state): State<AppState>,
    Query(q): Query<AgreementQuery>,
) -> Result<Json<AgreementReport>, ApiError> {
    let book = state.book();
    let pairs: Vec<ScorePair> = book
        .entries
        .values()
        .filter_map(|e| {
            let human = e
                .overridden
                .as_ref()
                .map(|o| o.score)
                .or_else(|| state.inner.human.get(&e.response.response_id).copied())?;
            Some(ScorePair {
                item_id: e.response.response_id.clone(),
                score_a: e.grade.score,
                score_b: human,
                category_a: e.grade.category,
                category_b: state.category(human, e.grade.max_marks),
            })
        })
        .collect();
    AgreementReport::from_pairs(&pairs, q.weighting)
        .map(Json)
        .map_err(|e| ApiError::Unprocessable(format!("agreement over {} pairs: {e}", pairs.len())))
}

async fn evidence(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<EvidenceView>, ApiError> {
    let engine = state.engine();
    if let Some(c) = engine.rag1().chunk(&id) {
        return Ok(Json(EvidenceView {
            id,
            kind: EvidenceKind::FacultyAnswer,
            text: c.text.clone(),
        }));
    }
    if let Some(f) = engine.deep_store().get(&id) {
        return Ok(Json(EvidenceView {
            id,
            kind: EvidenceKind::Fact,
            text: f.text.clone(),
        }));
    }
    Err(ApiError::NotFound(format!("evidence `{id}`")))
}
