mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use modq_service::http::router;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Api {
    app: Router,
    _dir: tempfile::TempDir,
}

impl Api {
    fn new(threshold: f64) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let svc = common::open(&dir.path().join("events.jsonl"), threshold);
        Self {
            app: router(Arc::new(svc), None),
            _dir: dir,
        }
    }

    async fn call(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
        let mut req = Request::builder().method(method).uri(uri);
        let body = match body {
            Some(v) => {
                req = req.header("content-type", "application/json");
                Body::from(v.to_string())
            }
            None => Body::empty(),
        };
        let resp = self.app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        (status, bytes)
    }

    async fn json(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let (status, bytes) = self.call(method, uri, body).await;
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }
}

#[tokio::test]
async fn classify_routes_by_threshold() {
    let api = Api::new(0.3);
    let (s, at) = api.json(Method::POST, "/api/classify", Some(json!({"text": "0.3 boundary"}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(at["status"], "auto");
    assert_eq!(at["final_label"], at["predicted_label"]);
    assert!(at.get("moderator_id").is_none());
    let (_, above) = api.json(Method::POST, "/api/classify", Some(json!({"text": "0.31"}))).await;
    assert_eq!(above["status"], "pending");
    assert!(above.get("final_label").is_none());
    assert_eq!(above["uncertainty"]["function"], "lc");
}

#[tokio::test]
async fn classify_rejects_bad_bodies() {
    let api = Api::new(0.3);
    for body in [json!({"text": ""}), json!({"txt": "x"}), json!(42)] {
        let (s, v) = api.json(Method::POST, "/api/classify", Some(body)).await;
        assert_eq!(s, StatusCode::BAD_REQUEST);
        assert!(v["error"].is_string());
    }
}

#[tokio::test]
async fn queue_and_decisions() {
    let api = Api::new(0.3);
    let (_, empty) = api.json(Method::GET, "/api/queue", None).await;
    assert_eq!(empty, json!([]));
    for text in ["0.4", "0.9", "0.1"] {
        api.call(Method::POST, "/api/classify", Some(json!({"text": text}))).await;
    }
    let (_, q) = api.json(Method::GET, "/api/queue", None).await;
    let us: Vec<f64> = q.as_array().unwrap().iter().map(|i| i["uncertainty"]["value"].as_f64().unwrap()).collect();
    assert_eq!(us, vec![0.9, 0.4]);
    let (_, page) = api.json(Method::GET, "/api/queue?limit=1&offset=1", None).await;
    assert_eq!(page[0]["uncertainty"]["value"], 0.4);
    let (_, all) = api.json(Method::GET, "/api/queue?status=all", None).await;
    assert_eq!(all.as_array().unwrap().len(), 3);
    let (s, _) = api.json(Method::GET, "/api/queue?status=bogus", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let id = q[0]["item_id"].as_u64().unwrap();
    let uri = format!("/api/queue/{id}/decision");
    let (s, item) = api.json(Method::POST, &uri, Some(json!({"label": 2, "moderator_id": "ana"}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(item["status"], "resolved");
    assert_eq!(item["final_label"], 2);
    assert_eq!(item["moderator_id"], "ana");

    let (s, _) = api.json(Method::POST, &uri, Some(json!({"label": 0, "moderator_id": "bo"}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = api
        .json(Method::POST, "/api/queue/999/decision", Some(json!({"label": 0, "moderator_id": "bo"})))
        .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let other = q[1]["item_id"].as_u64().unwrap();
    let (s, _) = api
        .json(Method::POST, &format!("/api/queue/{other}/decision"), Some(json!({"label": 7, "moderator_id": "bo"})))
        .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = api
        .json(Method::POST, &format!("/api/queue/{other}/decision"), Some(json!({"label": 0})))
        .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (_, stats) = api.json(Method::GET, "/api/stats", None).await;
    assert_eq!(stats["total"], 3);
    assert_eq!(stats["auto_count"], 1);
    assert_eq!(stats["pending_count"], 1);
    assert_eq!(stats["resolved_count"], 1);
    assert!((stats["moderation_load"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(stats["threshold"], 0.3);
}

#[tokio::test]
async fn config_and_threshold_updates() {
    let api = Api::new(0.3);
    let (s, cfg) = api.json(Method::GET, "/api/config", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(cfg["threshold"], 0.3);
    assert_eq!(cfg["mode"], "mcd");
    assert_eq!(cfg["class_names"], json!(["a", "b", "c"]));

    let (s, cfg) = api.json(Method::PUT, "/api/config/threshold", Some(json!({"threshold": "-inf"}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(cfg["threshold"], "-inf");
    let (_, item) = api.json(Method::POST, "/api/classify", Some(json!({"text": "0.0"}))).await;
    assert_eq!(item["status"], "pending");

    let (s, _) = api.json(Method::PUT, "/api/config/threshold", Some(json!({"threshold": "high"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, cfg) = api.json(Method::PUT, "/api/config/threshold", Some(json!({"threshold": 0.5}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(cfg["threshold"], 0.5);
}

#[tokio::test]
async fn export_streams_decided_items() {
    let api = Api::new(0.3);
    let (s, body) = api.call(Method::GET, "/api/export", None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(body.is_empty());
    for text in ["0.1", "0.2", "0.9", "0.8"] {
        api.call(Method::POST, "/api/classify", Some(json!({"text": text}))).await;
    }
    api.call(Method::POST, "/api/queue/3/decision", Some(json!({"label": 0, "moderator_id": "m"})))
        .await;
    let (_, body) = api.call(Method::GET, "/api/export", None).await;
    let rows: Vec<Value> = String::from_utf8(body)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.iter().map(|r| r["item_id"].as_u64().unwrap()).collect::<Vec<_>>(), vec![1, 2, 3]);
}

#[tokio::test]
async fn serves_static_ui_when_configured() {
    let dir = tempfile::tempdir().unwrap();
    let ui = dir.path().join("ui");
    std::fs::create_dir(&ui).unwrap();
    std::fs::write(ui.join("index.html"), "<h1>queue</h1>").unwrap();
    let svc = common::open(&dir.path().join("events.jsonl"), 0.3);
    let app = router(Arc::new(svc), Some(ui));
    for uri in ["/", "/index.html", "/some/client/route"] {
        let resp = app.clone().oneshot(Request::get(uri).body(Body::empty()).unwrap()).await.unwrap();
        assert_eq!(resp.status(), StatusCode::OK, "{uri}");
        let body = resp.into_body().collect().await.unwrap().to_bytes();
        assert_eq!(&body[..], b"<h1>queue</h1>");
    }
    let resp = app.oneshot(Request::get("/api/stats").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
}

#[tokio::test]
async fn unknown_api_path_is_not_found_without_ui() {
    let api = Api::new(0.3);
    let (s, _) = api.call(Method::GET, "/api/nothing", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}
