use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::extract::State;
use axum::http::{HeaderMap, Request, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use truegrade_core::cache::FactRecord;
use truegrade_core::corpus::{Corpus, HumanScore, QuestionRecord};
use truegrade_core::embedding::{Embedder, EmbedderConfig, HashEmbedder};
use truegrade_core::retrieval::ReferenceRecord;
use truegrade_server::{router, AppState, ProviderConfig, ServiceConfig};

const REFERENCE: &str = "akbar introduced the mansabdari system ranking officers by zat and sawar";
const OFF_TOPIC: &str = "xalo pivu jeqa vulo";

fn corpus() -> Corpus {
    let facts = [
        "zat denoted the personal rank of a mansabdar",
        "sawar fixed the number of cavalry a mansabdar maintained",
        "jagirs were revenue assignments in lieu of salary",
        "the mansabdari system was introduced by akbar",
        "xalo pivu jeqa vulo",
    ];
    Corpus {
        questions: vec![QuestionRecord {
            question_id: "q1".into(),
            topic: "mughal".into(),
            text: "explain the mughal mansabdari system".into(),
        }],
        references: vec![ReferenceRecord {
            chunk_id: "q1-ref".into(),
            question_id: "q1".into(),
            text: REFERENCE.into(),
            max_marks: 5.0,
            marking_notes: None,
        }],
        facts: facts
            .iter()
            .enumerate()
            .map(|(i, t)| FactRecord {
                fact_id: format!("f{i}"),
                topic: "mughal".into(),
                text: t.to_string(),
            })
            .collect(),
    }
}

fn config() -> ServiceConfig {
    ServiceConfig {
        corpus: corpus(),
        ..Default::default()
    }
}

fn app_with(config: ServiceConfig) -> (Router, AppState) {
    let state = AppState::build(config).unwrap();
    (router(state.clone()), state)
}

fn app() -> (Router, AppState) {
    app_with(config())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let builder = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => builder
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => builder.body(Body::empty()).unwrap(),
    };
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn submit(app: &Router, body: Value) -> String {
    let (status, v) = call(app, "POST", "/responses", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    v["response_id"].as_str().unwrap().to_string()
}

fn actions(state: &AppState) -> Vec<String> {
    state
        .audit()
        .records()
        .iter()
        .map(|r| {
            serde_json::to_value(r.payload().unwrap().action)
                .unwrap()
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect()
}

#[tokio::test]
async fn submit_then_fetch_grade() {
    let (app, state) = app();
    let id = submit(
        &app,
        json!({"pseudonym": "anon-1", "question_id": "q1", "transcript": REFERENCE}),
    )
    .await;
    assert_eq!(id, "resp-000000");
    let (status, g) = call(&app, "GET", &format!("/grades/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(g["stage"], "RAG1_PASS");
    assert_eq!(g["score"], 5.0);
    assert_eq!(g["category"], "EXCELLENT");
    assert_eq!(g["pseudonym"], "anon-1");
    assert_eq!(g["original_score"], 5.0);
    assert!(g["overridden"].is_null());
    assert_eq!(actions(&state), ["GRADED"]);

    let (status, _) = call(&app, "GET", "/grades/missing", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn generated_ids_skip_caller_ids() {
    let (app, _) = app();
    let a = submit(
        &app,
        json!({"response_id": "resp-000000", "pseudonym": "p", "question_id": "q1", "transcript": REFERENCE}),
    )
    .await;
    let b = submit(
        &app,
        json!({"pseudonym": "p", "question_id": "q1", "transcript": REFERENCE}),
    )
    .await;
    assert_eq!(a, "resp-000000");
    assert_eq!(b, "resp-000001");
}

#[tokio::test]
async fn invalid_submissions_leave_no_record() {
    let (app, state) = app();
    for body in [
        json!({"pseudonym": "p", "question_id": "q1"}),
        json!({"pseudonym": "p", "question_id": "q1", "transcript": "a", "blob": [97]}),
        json!({"pseudonym": " ", "question_id": "q1", "transcript": "a"}),
        json!({"pseudonym": "p", "question_id": "q1", "transcript": "a", "transcript_confidence": 1.5}),
        json!({"response_id": "", "pseudonym": "p", "question_id": "q1", "transcript": "a"}),
    ] {
        let (status, v) = call(&app, "POST", "/responses", Some(body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{v}");
        assert!(v["error"].is_string());
    }
    assert!(state.audit().is_empty());
}

#[tokio::test]
async fn duplicate_ids_conflict() {
    let (app, state) = app();
    let body = json!({"response_id": "r1", "pseudonym": "p", "question_id": "q1", "transcript": REFERENCE});
    submit(&app, body.clone()).await;
    let (status, _) = call(&app, "POST", "/responses", Some(body)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(state.audit().len(), 1);
}

#[tokio::test]
async fn grading_failures_are_audited() {
    let (app, state) = app();
    let (status, v) = call(
        &app,
        "POST",
        "/responses",
        Some(json!({"response_id": "r1", "pseudonym": "p", "question_id": "nope", "transcript": "x"})),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(v["error"].as_str().unwrap().contains("nope"));
    let (status, _) = call(
        &app,
        "POST",
        "/responses",
        Some(json!({"response_id": "r2", "pseudonym": "p", "question_id": "q1", "blob": []})),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(actions(&state), ["UNRESOLVED", "UNRESOLVED"]);
    let (status, _) = call(&app, "GET", "/grades/r1", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    // A failed id may be submitted again.
    submit(
        &app,
        json!({"response_id": "r1", "pseudonym": "p", "question_id": "q1", "transcript": REFERENCE}),
    )
    .await;
}

#[tokio::test]
async fn blobs_go_through_transcription() {
    let (app, _) = app();
    let id = submit(
        &app,
        json!({"pseudonym": "p", "question_id": "q1", "blob": REFERENCE.as_bytes()}),
    )
    .await;
    let (_, g) = call(&app, "GET", &format!("/grades/{id}"), None).await;
    assert_eq!(g["stage"], "RAG1_PASS");
    assert_eq!(g["confidence_flag"], false);
}

#[tokio::test]
async fn appeal_and_override_workflow() {
    let (app, state) = app();
    let id = submit(
        &app,
        json!({"response_id": "r1", "pseudonym": "anon-7", "question_id": "q1", "transcript": OFF_TOPIC}),
    )
    .await;
    let (_, before) = call(&app, "GET", "/grades/r1", None).await;
    let original = before["score"].as_f64().unwrap();

    let (status, v) = call(&app, "POST", &format!("/appeals/{id}"), None).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    assert_eq!(v["appeal"]["status"], "OPEN");
    assert_eq!(v["appeal"]["opened_by"], "anon-7");
    let (status, _) = call(&app, "POST", "/appeals/r1", Some(json!({"reason": "again"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (_, queue) = call(&app, "GET", "/review/queue", None).await;
    assert_eq!(queue[0]["response_id"], "r1");
    assert_eq!(queue[0]["appeal"], "OPEN");
    assert_eq!(queue[0]["question_text"], "explain the mughal mansabdari system");

    let (status, v) = call(
        &app,
        "POST",
        "/review/r1/override",
        Some(json!({"score": 4.0, "reason": "misread handwriting", "reviewer_id": "rev-2"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let (_, after) = call(&app, "GET", "/grades/r1", None).await;
    assert_eq!(after["score"], 4.0);
    assert_eq!(after["category"], "EXCELLENT");
    assert_eq!(after["original_score"], original);
    assert_eq!(after["overridden"]["reviewer_id"], "rev-2");

    let (status, v) = call(
        &app,
        "POST",
        "/appeals/r1/resolve",
        Some(json!({"reviewer_id": "rev-2", "resolution": "score raised"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["appeal"]["status"], "RESOLVED");
    let (status, _) = call(
        &app,
        "POST",
        "/appeals/r1/resolve",
        Some(json!({"reviewer_id": "rev-2"})),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);

    assert_eq!(
        actions(&state),
        ["GRADED", "APPEAL_OPENED", "OVERRIDDEN", "APPEAL_RESOLVED"]
    );
    let records = state.audit().records();
    let graded = records[0].payload().unwrap();
    let overridden = records[2].payload().unwrap();
    assert_eq!(graded.score, Some(original));
    assert_eq!(overridden.score, Some(4.0));
    assert_eq!(overridden.actor, "rev-2");
    assert_eq!(overridden.note.as_deref(), Some("misread handwriting"));

    let (_, v) = call(&app, "GET", "/audit/verify", None).await;
    assert_eq!(v, json!({"status": "ok"}));
    let (_, v) = call(&app, "GET", "/audit/records?response_id=r1", None).await;
    assert_eq!(v.as_array().unwrap().len(), 4);
    assert_eq!(v[1]["payload"]["action"], "APPEAL_OPENED");
    assert_eq!(v[0]["prev_hash"], "0".repeat(64));
}

#[tokio::test]
async fn override_validation() {
    let (app, state) = app();
    submit(
        &app,
        json!({"response_id": "r1", "pseudonym": "p", "question_id": "q1", "transcript": REFERENCE}),
    )
    .await;
    for body in [
        json!({"score": 6.0, "reason": "x", "reviewer_id": "r"}),
        json!({"score": -1.0, "reason": "x", "reviewer_id": "r"}),
        json!({"score": 2.0, "reason": "", "reviewer_id": "r"}),
        json!({"score": 2.0, "reason": "x", "reviewer_id": " "}),
    ] {
        let (status, _) = call(&app, "POST", "/review/r1/override", Some(body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
    }
    let (status, _) = call(
        &app,
        "POST",
        "/review/zz/override",
        Some(json!({"score": 1.0, "reason": "x", "reviewer_id": "r"})),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "POST", "/appeals/zz", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(state.audit().len(), 1);
}

#[tokio::test]
async fn queue_orders_appeals_then_flags_then_submission() {
    let (app, _) = app();
    let low = |id: &str| json!({"response_id": id, "pseudonym": "p", "question_id": "q1", "transcript": REFERENCE, "transcript_confidence": 0.2});
    let clean = |id: &str| json!({"response_id": id, "pseudonym": "p", "question_id": "q1", "transcript": REFERENCE});
    submit(&app, low("a")).await;
    submit(&app, clean("b")).await;
    submit(&app, low("c")).await;
    submit(&app, clean("d")).await;
    call(&app, "POST", "/appeals/d", None).await;
    call(&app, "POST", "/appeals/c", None).await;

    let ids = |q: &Value| -> Vec<String> {
        q.as_array()
            .unwrap()
            .iter()
            .map(|i| i["response_id"].as_str().unwrap().to_string())
            .collect()
    };
    let (_, q) = call(&app, "GET", "/review/queue", None).await;
    assert_eq!(ids(&q), ["c", "d", "a"]);
    assert_eq!(q[2]["confidence_flag"], true);
    assert!(q[2]["similarity"].as_f64().unwrap() > 0.99);

    // Overriding a flagged item clears it; an open appeal keeps it queued.
    let body = json!({"score": 3.0, "reason": "checked", "reviewer_id": "rev"});
    call(&app, "POST", "/review/a/override", Some(body.clone())).await;
    call(&app, "POST", "/review/c/override", Some(body)).await;
    let (_, q) = call(&app, "GET", "/review/queue", None).await;
    assert_eq!(ids(&q), ["c", "d"]);
    assert_eq!(q[0]["overridden"], true);
}

#[tokio::test]
async fn agreement_uses_overrides_then_reference_scores() {
    let human = vec![
        HumanScore {
            response_id: "a".into(),
            score: 5.0,
        },
        HumanScore {
            response_id: "b".into(),
            score: 0.0,
        },
    ];
    let (app, _) = app_with(ServiceConfig {
        human_scores: human,
        ..config()
    });
    let (status, _) = call(&app, "GET", "/metrics/agreement", None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    submit(
        &app,
        json!({"response_id": "a", "pseudonym": "p", "question_id": "q1", "transcript": REFERENCE}),
    )
    .await;
    submit(
        &app,
        json!({"response_id": "b", "pseudonym": "p", "question_id": "q1", "transcript": OFF_TOPIC}),
    )
    .await;
    submit(
        &app,
        json!({"response_id": "c", "pseudonym": "p", "question_id": "q1", "transcript": REFERENCE}),
    )
    .await;
    let (status, _) = call(
        &app,
        "POST",
        "/review/c/override",
        Some(json!({"score": 4.5, "reason": "x", "reviewer_id": "r"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);

    let (status, report) = call(&app, "GET", "/metrics/agreement", None).await;
    assert_eq!(status, StatusCode::OK, "{report}");
    assert_eq!(report["n"], 3);
    assert!(report["pearson"].as_f64().unwrap() > 0.9, "{report}");
}

#[tokio::test]
async fn evidence_resolves_citations() {
    let (app, _) = app();
    let (status, v) = call(&app, "GET", "/evidence/q1-ref", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v, json!({"id": "q1-ref", "kind": "faculty_answer", "text": REFERENCE}));
    let (_, v) = call(&app, "GET", "/evidence/f4", None).await;
    assert_eq!(v["kind"], "fact");

    submit(
        &app,
        json!({"response_id": "r", "pseudonym": "p", "question_id": "q1", "transcript": OFF_TOPIC}),
    )
    .await;
    let (_, g) = call(&app, "GET", "/grades/r", None).await;
    let cited = g["evidence_citations"].as_array().unwrap();
    assert!(!cited.is_empty());
    for c in cited {
        let (status, _) = call(&app, "GET", &format!("/evidence/{}", c.as_str().unwrap()), None).await;
        assert_eq!(status, StatusCode::OK);
    }
    let (status, _) = call(&app, "GET", "/evidence/none", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_submissions_each_leave_one_record() {
    let (app, state) = app();
    let tasks: Vec<_> = (0..32)
        .map(|i| {
            let app = app.clone();
            let text = if i % 2 == 0 { REFERENCE } else { OFF_TOPIC };
            tokio::spawn(async move {
                submit(
                    &app,
                    json!({"pseudonym": format!("p{i}"), "question_id": "q1", "transcript": text}),
                )
                .await
            })
        })
        .collect();
    let mut ids = Vec::new();
    for t in tasks {
        ids.push(t.await.unwrap());
    }
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 32);
    assert_eq!(state.audit().len(), 32);
    let (_, v) = call(&app, "GET", "/audit/verify", None).await;
    assert_eq!(v["status"], "ok");
}

#[tokio::test]
async fn audit_file_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("audit.jsonl");
    let (app, _) = app_with(ServiceConfig {
        audit_path: Some(path.clone()),
        ..config()
    });
    submit(
        &app,
        json!({"pseudonym": "p", "question_id": "q1", "transcript": REFERENCE}),
    )
    .await;
    call(&app, "POST", "/appeals/resp-000000", None).await;
    let records = truegrade_core::audit::read_log(&path).unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!(
        truegrade_core::audit::verify_records(&records),
        truegrade_core::VerifyOutcome::Ok
    );
}

#[derive(Default)]
struct Seen {
    auth: Vec<String>,
    paths: Vec<String>,
}

type Shared = Arc<Mutex<Seen>>;

fn note(seen: &Shared, headers: &HeaderMap, path: &str) {
    let mut s = seen.lock().unwrap();
    s.auth.push(
        headers
            .get("authorization")
            .map(|h| h.to_str().unwrap().to_string())
            .unwrap_or_default(),
    );
    s.paths.push(path.to_string());
}

fn mock_provider(seen: Shared) -> Router {
    let embedder = Arc::new(
        HashEmbedder::new(EmbedderConfig {
            dimension: 64,
            ..Default::default()
        })
        .unwrap(),
    );
    Router::new()
        .route(
            "/embed",
            post(
                move |State(seen): State<Shared>, headers: HeaderMap, Json(v): Json<Value>| {
                    let embedder = embedder.clone();
                    async move {
                        note(&seen, &headers, "/embed");
                        let e = embedder.embed(v["text"].as_str().unwrap()).unwrap();
                        Json(json!({"vector": e.values()}))
                    }
                },
            ),
        )
        .route(
            "/evaluate",
            post(
                |State(seen): State<Shared>, headers: HeaderMap, Json(v): Json<Value>| async move {
                    note(&seen, &headers, "/evaluate");
                    let chunk = v["faculty_chunks"][0]["chunk_id"].clone();
                    Json(json!({
                        "score": 3.5,
                        "rationale": {"correct_points": "a", "omissions": "b", "improvements": "c"},
                        "citations": [chunk],
                    }))
                },
            ),
        )
        .route(
            "/transcribe",
            post(
                |State(seen): State<Shared>, headers: HeaderMap, body: axum::body::Bytes| async move {
                    note(&seen, &headers, "/transcribe");
                    let text = String::from_utf8(body.to_vec()).unwrap();
                    Json(json!({"text": text, "confidence": 0.3}))
                },
            ),
        )
        .route(
            "/down",
            post(|| async { (StatusCode::SERVICE_UNAVAILABLE, "overloaded") }),
        )
        .with_state(seen)
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn remote_providers_over_http() {
    let seen = Shared::default();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let app = mock_provider(seen.clone());
    tokio::spawn(async move { axum::serve(listener, app).await });

    let providers = ProviderConfig {
        embedding_url: Some(format!("{base}/embed")),
        embedding_dimension: Some(64),
        evaluator_url: Some(format!("{base}/evaluate")),
        transcription_url: Some(format!("{base}/transcribe")),
        api_key: Some("k-123".into()),
        timeout: None,
    };
    let cfg = ServiceConfig { providers, ..config() };
    let state = tokio::task::spawn_blocking(move || AppState::build(cfg))
        .await
        .unwrap()
        .unwrap();
    let app = router(state.clone());

    let id = submit(
        &app,
        json!({"pseudonym": "p", "question_id": "q1", "blob": REFERENCE.as_bytes()}),
    )
    .await;
    let (_, g) = call(&app, "GET", &format!("/grades/{id}"), None).await;
    assert_eq!(g["score"], 3.5);
    assert_eq!(g["category"], "GOOD");
    assert_eq!(g["evidence_citations"], json!(["q1-ref"]));
    assert_eq!(g["confidence_flag"], true, "low transcription confidence");

    let s = seen.lock().unwrap();
    assert!(s.auth.iter().all(|a| a == "Bearer k-123"));
    for p in ["/embed", "/evaluate", "/transcribe"] {
        assert!(s.paths.iter().any(|x| x == p), "{p} never called");
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn unavailable_evaluator_is_unresolved() {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let app = mock_provider(Shared::default());
    tokio::spawn(async move { axum::serve(listener, app).await });
    let cfg = ServiceConfig {
        providers: ProviderConfig {
            evaluator_url: Some(format!("{base}/down")),
            ..Default::default()
        },
        ..config()
    };
    let state = tokio::task::spawn_blocking(move || AppState::build(cfg))
        .await
        .unwrap()
        .unwrap();
    let app = router(state.clone());
    let (status, v) = call(
        &app,
        "POST",
        "/responses",
        Some(json!({"pseudonym": "p", "question_id": "q1", "transcript": REFERENCE})),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(v["error"].as_str().unwrap().contains("503"), "{v}");
    assert_eq!(actions(&state), ["UNRESOLVED"]);
}

#[test]
fn remote_providers_need_a_runtime() {
    let cfg = ServiceConfig {
        providers: ProviderConfig {
            evaluator_url: Some("http://127.0.0.1:9/evaluate".into()),
            ..Default::default()
        },
        ..config()
    };
    assert!(AppState::build(cfg).is_err());
}
