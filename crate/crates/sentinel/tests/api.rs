//! HTTP API behaviour, driven in-process through the router.

mod support;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use sentinel::api::{router, AppState};
use sentinel::store::{Store, StoreConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

struct Fixture {
    _dir: tempfile::TempDir,
    app: Router,
}

fn app_with(token: Option<&str>, ui_dir: Option<std::path::PathBuf>) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let config = StoreConfig { default_seeds: support::catalog_seeds(), ..StoreConfig::default() };
    let store = Arc::new(Store::open(dir.path().join("data"), config).unwrap());
    let app = router(AppState { store, token: token.map(String::from) }, ui_dir);
    Fixture { _dir: dir, app }
}

async fn call(app: &Router, method: Method, uri: &str, body: &str, token: Option<&str>) -> (StatusCode, String) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
    }
    let resp = app.clone().oneshot(req.body(Body::from(body.to_string())).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, b) = call(app, Method::GET, uri, "", None).await;
    (s, serde_json::from_str(&b).unwrap_or(Value::String(b)))
}

async fn post(app: &Router, uri: &str, body: &str) -> (StatusCode, Value) {
    let (s, b) = call(app, Method::POST, uri, body, None).await;
    (s, serde_json::from_str(&b).unwrap())
}

async fn seeded() -> Fixture {
    let f = app_with(None, None);
    let (s, _) = post(&f.app, "/v1/sessions/catalog-cache/events", &support::catalog_trace()).await;
    assert_eq!(s, StatusCode::CREATED);
    f
}

#[tokio::test]
async fn ingest_then_read_every_artifact() {
    let f = app_with(None, None);
    let (s, ack) = post(&f.app, "/v1/sessions/catalog-cache/events", &support::catalog_trace()).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(ack, json!({"session": "catalog-cache", "accepted": 10, "created": true, "last_seq": 10}));

    let (s, list) = get(&f.app, "/v1/sessions").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(list["sessions"][0]["session"], "catalog-cache");
    assert_eq!(list["sessions"][0]["events"], 10);

    let (s, g) = get(&f.app, "/v1/sessions/catalog-cache/graph").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(g["schema"], "g1");
    assert_eq!(g["nodes"].as_array().unwrap().len(), 7);
    let flagged: Vec<&Value> =
        g["nodes"].as_array().unwrap().iter().filter(|n| !n["deviation_ids"].as_array().unwrap().is_empty()).collect();
    assert_eq!(flagged.len(), 1);
    assert_eq!(flagged[0]["id"], 6);

    let (_, d) = get(&f.app, "/v1/sessions/catalog-cache/deviations").await;
    assert_eq!(d["conformance"], "block");
    assert_eq!(d["deviations"][0]["category"], "architectural_drift");

    let (_, v) = get(&f.app, "/v1/sessions/catalog-cache/verdict").await;
    assert_eq!(v["conformance"], "block");
    assert_eq!(v["summary"]["deviations"], 1);

    let (_, c) = get(&f.app, "/v1/sessions/catalog-cache/cdi").await;
    assert_eq!(c["cdi"], 1.0);
    assert_eq!(c["verdict"], "alert");

    let (_, q) = get(&f.app, "/v1/sessions/catalog-cache/quiz?seed=7").await;
    assert_eq!(q["session"], "catalog-cache");
    assert_eq!(q["principal_chain"], json!([1, 5, 6, 10]));
    assert_eq!(q["questions"].as_array().unwrap().len(), 3);
}

#[tokio::test]
async fn follow_up_batches_answer_200() {
    let f = app_with(None, None);
    let text = support::catalog_trace();
    let lines: Vec<&str> = text.lines().collect();
    let (s, _) = post(&f.app, "/v1/sessions/catalog-cache/events", &lines[..3].join("\n")).await;
    assert_eq!(s, StatusCode::CREATED);
    let (s, ack) = post(&f.app, "/v1/sessions/catalog-cache/events", &lines[3..].join("\n")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ack["created"], false);
    assert_eq!(ack["last_seq"], 10);
}

#[tokio::test]
async fn error_codes() {
    let f = seeded().await;
    let dup = support::catalog_trace().lines().nth(3).unwrap().to_string();
    let cases: Vec<(Method, &str, String, StatusCode, &str)> = vec![
        (Method::GET, "/v1/sessions/nope/graph", String::new(), StatusCode::NOT_FOUND, "unknown_session"),
        (Method::GET, "/v1/sessions/catalog-cache/verdict?seeds=nope", String::new(), StatusCode::NOT_FOUND, "unknown_seeds"),
        (Method::POST, "/v1/sessions/catalog-cache/events", dup, StatusCode::CONFLICT, "seq_regression"),
        (Method::POST, "/v1/sessions/catalog-cache/events", "{not json".into(), StatusCode::UNPROCESSABLE_ENTITY, "validation_error"),
        (Method::POST, "/v1/sessions/bad%20id/events", support::catalog_trace(), StatusCode::BAD_REQUEST, "bad_session_id"),
        (Method::POST, "/v1/sessions/catalog-cache/reviews", "{".into(), StatusCode::BAD_REQUEST, "bad_json"),
        (
            Method::POST,
            "/v1/sessions/catalog-cache/reviews",
            json!({"reviewer": "r", "node_ref": 999, "action": "viewed"}).to_string(),
            StatusCode::UNPROCESSABLE_ENTITY,
            "unknown_node_ref",
        ),
        (
            Method::POST,
            "/v1/sessions/catalog-cache/reviews",
            json!({"reviewer": "r", "node_ref": 6, "action": "liked"}).to_string(),
            StatusCode::UNPROCESSABLE_ENTITY,
            "bad_review",
        ),
        (Method::GET, "/v1/nothing-here", String::new(), StatusCode::NOT_FOUND, "not_found"),
    ];
    for (method, uri, body, status, code) in cases {
        let (s, b) = call(&f.app, method.clone(), uri, &body, None).await;
        assert_eq!(s, status, "{method} {uri}: {b}");
        let v: Value = serde_json::from_str(&b).unwrap();
        assert_eq!(v["error"]["code"], code, "{method} {uri}");
        assert!(v["error"]["message"].as_str().is_some_and(|m| !m.is_empty()));
    }
}

#[tokio::test]
async fn short_chain_quiz_is_a_conflict() {
    let f = app_with(None, None);
    let two: String = support::catalog_trace().lines().take(2).collect::<Vec<_>>().join("\n");
    post(&f.app, "/v1/sessions/catalog-cache/events", &two).await;
    let (s, v) = get(&f.app, "/v1/sessions/catalog-cache/quiz").await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["error"]["code"], "chain_too_short");
}

#[tokio::test]
async fn reviews_are_created_once_per_nonce_and_move_the_cdi() {
    let f = seeded().await;
    let body = json!({"reviewer": "r1", "node_ref": 6, "action": "acknowledged", "dwell_ms": 45000, "nonce": "abc"});
    let (s, a) = post(&f.app, "/v1/sessions/catalog-cache/reviews", &body.to_string()).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(a, json!({"session": "catalog-cache", "seq": 11, "duplicate": false}));
    let (s, b) = post(&f.app, "/v1/sessions/catalog-cache/reviews", &body.to_string()).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(b["duplicate"], true);
    assert_eq!(b["seq"], 11);

    let (_, c) = get(&f.app, "/v1/sessions/catalog-cache/cdi").await;
    assert!(c["coverage"].as_f64().unwrap() > 0.0);
    assert!(c["cdi"].as_f64().unwrap() < 1.0);
    let (_, v) = get(&f.app, "/v1/sessions/catalog-cache/verdict").await;
    assert_eq!(v["summary"]["reviews"], 1);
}

#[tokio::test]
async fn bearer_token_guards_the_api() {
    let f = app_with(Some("s3cret"), None);
    let (s, b) = call(&f.app, Method::GET, "/v1/sessions", "", None).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED, "{b}");
    let (s, _) = call(&f.app, Method::GET, "/v1/sessions", "", Some("wrong")).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, _) = call(&f.app, Method::POST, "/v1/sessions/x/events", "", None).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, _) = call(&f.app, Method::GET, "/v1/sessions", "", Some("s3cret")).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn ui_dir_is_served_at_the_root() {
    let ui = tempfile::tempdir().unwrap();
    std::fs::write(ui.path().join("index.html"), "<!doctype html><title>ui</title>").unwrap();
    std::fs::create_dir(ui.path().join("assets")).unwrap();
    std::fs::write(ui.path().join("assets/app.js"), "console.log(1)").unwrap();
    let f = app_with(None, Some(ui.path().to_path_buf()));
    let (s, b) = call(&f.app, Method::GET, "/", "", None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(b.contains("<title>ui</title>"));
    let (s, b) = call(&f.app, Method::GET, "/assets/app.js", "", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(b, "console.log(1)");
    // Client-side routes fall back to the index page.
    let (s, b) = call(&f.app, Method::GET, "/sessions/catalog-cache", "", None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(b.contains("<title>ui</title>"));
    // The API keeps precedence.
    let (s, _) = call(&f.app, Method::GET, "/v1/sessions", "", None).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn without_ui_dir_the_root_is_404() {
    let f = app_with(None, None);
    let (s, _) = call(&f.app, Method::GET, "/", "", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}
