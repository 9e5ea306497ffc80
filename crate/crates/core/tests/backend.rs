use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use rubricon_core::backend::{
    Backend, BackendError, CachedBackend, ChatBackend, FixtureFile, FixtureMatcher, HttpSettings, Limits,
    ModelRequest, ScriptedBackend, UserPart,
};

/// Serve `status` with `body` on every POST, counting hits.
async fn serve(status: StatusCode, body: Value) -> (String, Arc<AtomicUsize>) {
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    let app = Router::new().route(
        "/v1/chat",
        post(move || {
            let counter = counter.clone();
            let body = body.clone();
            async move {
                counter.fetch_add(1, Ordering::SeqCst);
                (status, Json(body))
            }
        }),
    );
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}/v1/chat"), hits)
}

fn chat(endpoint: String, attempts: u32, limits: Limits) -> ChatBackend {
    let settings = HttpSettings {
        endpoint,
        model: "test-model".into(),
        api_key: Some("k".into()),
        auth_header: "Authorization".into(),
        attempts,
        backoff_base: Duration::from_millis(1),
        timeout: Duration::from_secs(5),
    };
    ChatBackend::new("remote", settings, limits).unwrap()
}

fn request(tag: &str, text: &str) -> ModelRequest {
    ModelRequest {
        backend_name: "remote".into(),
        system_prompt: "sys".into(),
        user_parts: vec![UserPart::text(text)],
        temperature: 0.7,
        max_output: 64,
        request_tag: tag.into(),
    }
}

#[tokio::test]
async fn server_errors_are_retried_then_reported() {
    let (url, hits) = serve(StatusCode::INTERNAL_SERVER_ERROR, json!({"error": "boom"})).await;
    let backend = chat(url, 3, Limits::default());
    let err = backend.complete(&request("grade", "x"), 0).await.unwrap_err();
    assert!(matches!(err, BackendError::Transport(_)), "{err}");
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn rate_limit_is_retryable() {
    let (url, hits) = serve(StatusCode::TOO_MANY_REQUESTS, json!({})).await;
    let backend = chat(url, 2, Limits::default());
    assert!(backend.complete(&request("grade", "x"), 0).await.is_err());
    assert_eq!(hits.load(Ordering::SeqCst), 2);
}

#[tokio::test]
async fn client_errors_are_not_retried() {
    let (url, hits) = serve(StatusCode::BAD_REQUEST, json!({"error": "bad"})).await;
    let backend = chat(url, 3, Limits::default());
    let err = backend.complete(&request("grade", "x"), 0).await.unwrap_err();
    assert!(matches!(err, BackendError::Refusal { status: 400, .. }), "{err}");
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn success_returns_first_choice() {
    let body = json!({"choices": [{"message": {"content": "Judgement: Yes\nExplanation: ok"}}]});
    let (url, hits) = serve(StatusCode::OK, body).await;
    let backend = chat(url, 3, Limits::default());
    let resp = backend.complete(&request("grade", "x"), 0).await.unwrap();
    assert_eq!(resp.text, "Judgement: Yes\nExplanation: ok");
    assert!(!resp.cached);
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn request_budget_is_enforced() {
    let body = json!({"choices": [{"message": {"content": "ok"}}]});
    let (url, hits) = serve(StatusCode::OK, body).await;
    let limits = Limits {
        max_requests: Some(2),
        ..Limits::default()
    };
    let backend = chat(url, 1, limits);
    backend.complete(&request("grade", "a"), 0).await.unwrap();
    backend.complete(&request("grade", "b"), 0).await.unwrap();
    let err = backend.complete(&request("grade", "c"), 0).await.unwrap_err();
    assert!(matches!(err, BackendError::Budget(_)), "{err}");
    assert_eq!(hits.load(Ordering::SeqCst), 2);
}

#[tokio::test]
async fn cache_answers_repeated_samples_without_network() {
    let body = json!({"choices": [{"message": {"content": "cached reply"}}]});
    let (url, hits) = serve(StatusCode::OK, body).await;
    let dir = tempfile::tempdir().unwrap();
    let backend = CachedBackend::new(Arc::new(chat(url, 1, Limits::default())), dir.path()).unwrap();
    let req = request("grade", "x");
    let first = backend.complete(&req, 7).await.unwrap();
    let second = backend.complete(&req, 7).await.unwrap();
    assert!(!first.cached);
    assert!(second.cached);
    assert_eq!(second.text, "cached reply");
    backend.complete(&req, 8).await.unwrap();
    assert_eq!(hits.load(Ordering::SeqCst), 2);
}

#[tokio::test]
async fn scripted_backend_cycles_responses() {
    let fixture = FixtureFile {
        entries: Vec::new(),
        matchers: vec![FixtureMatcher {
            tag: Some("grade".into()),
            contains: vec!["needle".into()],
            image_sha256: None,
            responses: vec!["a".into(), "b".into(), "c".into()],
        }],
    };
    let backend = ScriptedBackend::new("mock", fixture).unwrap();
    let req = request("grade", "hay needle hay");
    let mut got = Vec::new();
    for i in 0..5 {
        got.push(backend.complete(&req, i).await.unwrap().text);
    }
    assert_eq!(got, ["a", "b", "c", "a", "b"]);
    let miss = backend.complete(&request("grade", "nothing"), 0).await.unwrap_err();
    assert!(matches!(miss, BackendError::FixtureMiss { .. }));
    let wrong_tag = backend.complete(&request("ocr", "needle"), 0).await.unwrap_err();
    assert!(matches!(wrong_tag, BackendError::FixtureMiss { .. }));
}
