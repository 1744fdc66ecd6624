mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use common::{build_store, fixed_time, ScriptedModel};
use hilmt::gateway::{
    ChatBackend, ChatMessage, Gateway, GatewayError, GenerationParams, RecordingBackend,
};
use hilmt::pipeline::PipelineConfig;
use hilmt::service::{
    review_log_path, router, AppState, FeedbackSubmission, ReviewStatus, TranslateRequest,
};
use hilmt::store::DemoStore;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Fixture {
    _dir: tempfile::TempDir,
    store_path: std::path::PathBuf,
    state: Arc<AppState>,
}

fn fixture_with(seed: bool, backend: Arc<dyn ChatBackend>) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let store_path = dir.path().join("store.jsonl");
    let config = PipelineConfig::default();
    let store = if seed {
        build_store(&store_path, &config)
    } else {
        DemoStore::open(&store_path).unwrap()
    };
    let state = AppState::new(store, Gateway::from_arc(backend), config)
        .unwrap()
        .with_clock(fixed_time);
    Fixture {
        _dir: dir,
        store_path,
        state: Arc::new(state),
    }
}

fn fixture(seed: bool) -> Fixture {
    fixture_with(seed, Arc::new(ScriptedModel::default()))
}

async fn call(
    state: &Arc<AppState>,
    method: Method,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let mut request = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            request = request.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let response = router(Arc::clone(state), None)
        .oneshot(request.body(body).unwrap())
        .await
        .unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn get(state: &Arc<AppState>, uri: &str) -> (StatusCode, Value) {
    call(state, Method::GET, uri, None).await
}

async fn post(state: &Arc<AppState>, uri: &str, body: Value) -> (StatusCode, Value) {
    call(state, Method::POST, uri, Some(body)).await
}

async fn translate(state: &Arc<AppState>, source: &str, strategy: &str) -> Value {
    let (status, body) = post(
        state,
        "/api/translate",
        json!({"source": source, "domain": "it", "strategy": strategy}),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    body
}

#[tokio::test]
async fn fresh_store_is_empty() {
    let f = fixture(false);
    assert_eq!(
        get(&f.state, "/api/records").await,
        (StatusCode::OK, json!([]))
    );
    let (status, summary) = get(&f.state, "/api/metrics/summary").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(
        summary,
        json!({"records": 0, "pending": 0, "reviewed": 0, "human_demos": 0, "simulated_demos": 0})
    );
}

#[tokio::test]
async fn translate_queues_a_pending_item() {
    let f = fixture(true);
    let record = translate(&f.state, "Das Handbuch zu Dolphin", "compare").await;
    let id = record["id"].as_str().unwrap();
    assert_eq!(record["draft"], "the manual for dolphin");
    assert_eq!(record["refined"], "the dolphin handbook");
    assert!(record["final"] == record["draft"] || record["final"] == record["refined"]);
    assert_eq!(record["demos_used"].as_array().unwrap().len(), 3);
    assert_eq!(record["validity"], json!(["ok"]));

    let (_, pending) = get(&f.state, "/api/records?status=pending").await;
    assert_eq!(pending.as_array().unwrap().len(), 1);
    assert_eq!(pending[0]["id"], id);
    assert_eq!(pending[0]["status"], "pending");
    let (status, item) = get(&f.state, &format!("/api/records/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(item["final"], record["final"]);
    assert_eq!(
        get(&f.state, "/api/records?domain=medical").await.1,
        json!([])
    );
}

#[tokio::test]
async fn translate_is_deterministic_under_replay() {
    let a = fixture(true);
    let b = fixture(true);
    let ra = translate(&a.state, "Speichert das aktuelle Dokument", "hil").await;
    let rb = translate(&b.state, "Speichert das aktuelle Dokument", "hil").await;
    assert_eq!(ra, rb);
    assert_eq!(ra["strategy"], "hil");
    assert_eq!(ra["final"], ra["refined"]);
}

#[tokio::test]
async fn malformed_translate_requests_are_rejected() {
    let f = fixture(true);
    for body in [
        json!({"source": "", "domain": "it"}),
        json!({"source": "Das Fenster", "domain": ""}),
        json!({"source": "Das Fenster", "domain": "it", "strategy": "best"}),
        json!({"source": "Das Fenster", "domain": "it", "shots": 0}),
        json!({"domain": "it"}),
    ] {
        let (status, err) = post(&f.state, "/api/translate", body.clone()).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert!(err["error"].is_string());
    }
    let response = router(Arc::clone(&f.state), None)
        .oneshot(
            Request::post("/api/translate")
                .header(header::CONTENT_TYPE, "application/json")
                .body(Body::from("{not json"))
                .unwrap(),
        )
        .await
        .unwrap();
    assert_eq!(response.status(), StatusCode::BAD_REQUEST);
    assert_eq!(f.state.summary().records, 0);
}

struct Unreachable;

impl ChatBackend for Unreachable {
    fn complete(&self, _: &[ChatMessage], _: &GenerationParams) -> Result<String, GatewayError> {
        Err(GatewayError::Request {
            attempts: 3,
            message: "connection refused".into(),
        })
    }
}

#[tokio::test]
async fn gateway_failure_is_502_with_a_record() {
    let f = fixture_with(false, Arc::new(Unreachable));
    let (status, record) = post(
        &f.state,
        "/api/translate",
        json!({"source": "Das Fenster", "domain": "it"}),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_eq!(record["validity"], json!(["empty", "gateway_error"]));
    assert!(record["error"]
        .as_str()
        .unwrap()
        .contains("connection refused"));
    assert_eq!(f.state.summary().pending, 1);
}

#[tokio::test]
async fn feedback_appends_a_human_demo() {
    let f = fixture(true);
    let before = f.state.demo_count();
    let record = translate(&f.state, "Schließt das Fenster", "draft").await;
    let id = record["id"].as_str().unwrap().to_owned();
    assert_eq!(record["final"], "closes the window");

    let uri = format!("/api/records/{id}/feedback");
    let (status, demo) = post(
        &f.state,
        &uri,
        json!({"post_edit": "closes the dialog", "note": "ui"}),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{demo}");
    assert_eq!(demo["provenance"], "human");
    assert_eq!(demo["hypothesis"], "closes the window");
    assert_eq!(demo["reference"], "closes the dialog");
    assert_eq!(
        demo["feedback"],
        json!(["\"window\" should be replaced with \"dialog\"."])
    );
    assert_eq!(f.state.demo_count(), before + 1);

    let (_, item) = get(&f.state, &format!("/api/records/{id}")).await;
    assert_eq!(item["status"], "reviewed");
    assert_eq!(item["post_edit"], "closes the dialog");
    assert_eq!(item["note"], "ui");
    assert_eq!(item["demo_id"], demo["id"]);
    let (_, reviewed) = get(&f.state, "/api/records?status=reviewed").await;
    assert_eq!(reviewed[0]["id"], id.as_str());

    let (status, _) = post(&f.state, &uri, json!({"post_edit": "closes it"})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(f.state.demo_count(), before + 1);

    let (_, summary) = get(&f.state, "/api/metrics/summary").await;
    assert_eq!(summary["pending"], 0);
    assert_eq!(summary["reviewed"], 1);
    assert_eq!(summary["human_demos"], 1);
    assert_eq!(summary["simulated_demos"], before);
}

#[tokio::test]
async fn accepting_the_output_stores_empty_feedback() {
    let f = fixture(false);
    let record = translate(&f.state, "Das Fenster", "draft").await;
    let uri = format!("/api/records/{}/feedback", record["id"].as_str().unwrap());
    let (status, demo) = post(&f.state, &uri, json!({"post_edit": record["final"]})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(demo["feedback"], json!([]));
    assert_eq!(demo["provenance"], "human");
}

#[tokio::test]
async fn feedback_errors() {
    let f = fixture(false);
    let (status, _) = post(
        &f.state,
        "/api/records/0123456789abcdef/feedback",
        json!({"post_edit": "x"}),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(
        get(&f.state, "/api/records/0123456789abcdef").await.0,
        StatusCode::NOT_FOUND
    );
    let record = translate(&f.state, "Das Fenster", "draft").await;
    let uri = format!("/api/records/{}/feedback", record["id"].as_str().unwrap());
    assert_eq!(
        post(&f.state, &uri, json!({"post_edit": "  "})).await.0,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(
        post(&f.state, &uri, json!({"note": "x"})).await.0,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(f.state.demo_count(), 0);
}

#[tokio::test]
async fn new_human_demo_is_retrieved_first() {
    let f = fixture(true);
    let source = "Das Handbuch zu Dolphin";
    let record = translate(&f.state, source, "compare").await;
    let uri = format!("/api/records/{}/feedback", record["id"].as_str().unwrap());
    let (_, demo) = post(&f.state, &uri, json!({"post_edit": "The Dolphin Handbook"})).await;

    let (status, hits) = get(
        &f.state,
        "/api/demos/search?q=Das%20Handbuch%20zu%20Dolphin&domain=it&k=3",
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let hits = hits.as_array().unwrap();
    assert!(!hits.is_empty() && hits.len() <= 3);
    assert_eq!(hits[0]["id"], demo["id"]);
    assert_eq!(hits[0]["rank"], 1);
    assert_eq!(hits[0]["rerank"], 1.0);
}

#[tokio::test]
async fn search_edge_cases() {
    let f = fixture(true);
    assert_eq!(
        get(&f.state, "/api/demos/search?q=&domain=it").await.0,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(
        get(&f.state, "/api/demos/search?q=%20%20&domain=it")
            .await
            .0,
        StatusCode::BAD_REQUEST
    );
    let (status, hits) = get(&f.state, "/api/demos/search?q=zebra%20quagga&domain=it").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(hits, json!([]));
    let (_, hits) = get(
        &f.state,
        "/api/demos/search?q=das%20die%20der&domain=it&k=3",
    )
    .await;
    assert_eq!(hits.as_array().unwrap().len(), 3);
    let (_, hits) = get(&f.state, "/api/demos/search?q=Fenster&domain=it&k=1").await;
    assert_eq!(hits.as_array().unwrap().len(), 1);
    assert_eq!(
        get(&f.state, "/api/demos/search?q=Fenster&domain=it&k=0")
            .await
            .0,
        StatusCode::BAD_REQUEST
    );
}

#[tokio::test]
async fn preview_matches_stored_feedback() {
    let f = fixture(false);
    let (status, preview) = post(
        &f.state,
        "/api/feedback/preview",
        json!({"hypothesis": "The manual for & kontact;", "reference": "The & kontact; Handbook"}),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(
        preview["instructions"],
        json!([
            "\"manual\" should be deleted.",
            "\"for\" should be deleted.",
            "\"handbook\" should be inserted after \"kontact;\"."
        ])
    );
    assert_eq!(
        post(
            &f.state,
            "/api/feedback/preview",
            json!({"hypothesis": "x"})
        )
        .await
        .0,
        StatusCode::BAD_REQUEST
    );
}

#[tokio::test]
async fn listing_is_newest_first() {
    let f = fixture(false);
    let mut ids = Vec::new();
    for source in ["Das Fenster", "Die Datei", "Das Programm"] {
        ids.push(
            translate(&f.state, source, "draft").await["id"]
                .as_str()
                .unwrap()
                .to_owned(),
        );
    }
    let (_, items) = get(&f.state, "/api/records").await;
    let listed: Vec<&str> = items
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["id"].as_str().unwrap())
        .collect();
    ids.reverse();
    assert_eq!(listed, ids);
    assert_eq!(
        get(&f.state, "/api/records?status=done").await.0,
        StatusCode::BAD_REQUEST
    );
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_submissions_all_persist() {
    let f = fixture(true);
    let before = f.state.demo_count();
    let sources = [
        "Das Fenster",
        "Die Datei",
        "Das Programm",
        "Der Ordner",
        "Die Seite",
        "Das Bild",
    ];
    let mut ids = Vec::new();
    for s in sources {
        ids.push(
            translate(&f.state, s, "draft").await["id"]
                .as_str()
                .unwrap()
                .to_owned(),
        );
    }
    let tasks: Vec<_> = ids
        .iter()
        .map(|id| {
            let state = Arc::clone(&f.state);
            let uri = format!("/api/records/{id}/feedback");
            tokio::spawn(async move {
                post(&state, &uri, json!({"post_edit": "an edited line"}))
                    .await
                    .0
            })
        })
        .collect();
    for task in tasks {
        assert_eq!(task.await.unwrap(), StatusCode::OK);
    }
    assert_eq!(f.state.demo_count(), before + sources.len());
    let summary = f.state.summary();
    assert_eq!(
        (summary.reviewed, summary.pending, summary.human_demos),
        (6, 0, 6)
    );

    // Everything survives a reload from disk.
    let store = DemoStore::load(&f.store_path).unwrap();
    assert_eq!(store.len(), before + sources.len());
    let reopened = AppState::new(
        store,
        Gateway::new(ScriptedModel::default()),
        PipelineConfig::default(),
    )
    .unwrap();
    assert_eq!(reopened.list(Some(ReviewStatus::Reviewed), None).len(), 6);
    assert!(review_log_path(&f.store_path).exists());
}

#[tokio::test]
async fn post_edits_never_reach_the_gateway() {
    let recording = Arc::new(RecordingBackend::new(Arc::new(ScriptedModel::default())));
    let f = fixture_with(true, recording.clone());
    for pair in common::load_pairs("it_test.tsv") {
        let post_edit = pair.reference.unwrap();
        let seen = recording.entries().len();
        let (_, response) = f
            .state
            .translate(TranslateRequest {
                source: pair.source,
                domain: "it".into(),
                strategy: Some("compare".into()),
                shots: None,
            })
            .unwrap();
        let prompts = recording.entries();
        assert!(prompts.len() > seen);
        for entry in &prompts[seen..] {
            assert!(
                entry
                    .messages
                    .iter()
                    .all(|m| !m.content.contains(&post_edit)),
                "{post_edit}"
            );
        }
        f.state
            .submit_feedback(
                &response.id,
                FeedbackSubmission {
                    post_edit,
                    note: None,
                },
            )
            .unwrap();
    }
    assert_eq!(f.state.summary().human_demos, 20);
}

#[tokio::test]
async fn cors_allows_the_review_origin() {
    let f = fixture(false);
    let origin = header::HeaderValue::from_static("http://localhost:5173");
    let response = router(Arc::clone(&f.state), Some(origin.clone()))
        .oneshot(
            Request::builder()
                .method(Method::OPTIONS)
                .uri("/api/records")
                .header(header::ORIGIN, "http://localhost:5173")
                .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
                .body(Body::empty())
                .unwrap(),
        )
        .await
        .unwrap();
    assert_eq!(
        response.headers().get(header::ACCESS_CONTROL_ALLOW_ORIGIN),
        Some(&origin)
    );
    let other = router(Arc::clone(&f.state), Some(origin.clone()))
        .oneshot(
            Request::get("/api/records")
                .header(header::ORIGIN, "http://evil.example")
                .body(Body::empty())
                .unwrap(),
        )
        .await
        .unwrap();
    // A foreign origin is never echoed back.
    assert_eq!(
        other.headers().get(header::ACCESS_CONTROL_ALLOW_ORIGIN),
        Some(&origin)
    );
}
