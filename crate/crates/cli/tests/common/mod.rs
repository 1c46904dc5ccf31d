#![allow(dead_code)]

use std::path::Path;

use axum::body::Body;
use axum::http::{HeaderMap, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use sift_cli::Api;
use sift_core::oversight::PendingGate;
use sift_core::scenario::{self, Scenario};
use sift_core::FlowConfig;
use tower::ServiceExt;

pub struct Resp {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: Value,
    pub text: String,
}

pub fn app(db: &Path) -> Router {
    sift_cli::http::router(Api::open(db, FlowConfig::default()).unwrap())
}

pub async fn send(app: &Router, method: Method, uri: &str, body: Option<Value>) -> Resp {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let text = String::from_utf8(bytes.to_vec()).unwrap();
    let body = serde_json::from_str(&text).unwrap_or(Value::Null);
    Resp { status, headers, body, text }
}

pub async fn get(app: &Router, uri: &str) -> Resp {
    send(app, Method::GET, uri, None).await
}

pub async fn post(app: &Router, uri: &str, body: Value) -> Resp {
    send(app, Method::POST, uri, Some(body)).await
}

/// Drives a project through the HTTP API with the scripted team decisions,
/// linking the earlier service as an older version once hits are verified.
pub async fn drive_over_http(app: &Router, scenario: Scenario, id: &str) -> Value {
    for _ in 0..100 {
        let g = get(app, &format!("/projects/{id}/gate")).await;
        let outcome = if g.status == StatusCode::OK {
            let gate: PendingGate = serde_json::from_value(g.body).unwrap();
            let d = scenario::scripted_decision(scenario, &gate).unwrap();
            let r = post(
                app,
                &format!("/projects/{id}/gate/decision"),
                json!({
                    "gate_id": d.gate_id, "decision": d.decision, "rationale": d.rationale,
                    "decider": d.decider, "selection": d.selection,
                }),
            )
            .await;
            assert_eq!(r.status, StatusCode::OK, "{}", r.text);
            if gate.stage == sift_core::pipeline::stages::VERIFY {
                let p = get(app, &format!("/projects/{id}")).await.body;
                for hit in p["similar_projects"].as_array().unwrap() {
                    let other = get(app, &format!("/projects/{}", hit.as_str().unwrap())).await.body;
                    if other["name"] == scenario::SVC_NAME {
                        let l = post(app, &format!("/projects/{id}/older-versions"), json!({"old_id": hit})).await;
                        assert_eq!(l.status, StatusCode::OK, "{}", l.text);
                    }
                }
            }
            r.body
        } else {
            assert_eq!(g.status, StatusCode::NOT_FOUND);
            let r = post(app, &format!("/projects/{id}/advance"), json!(null)).await;
            assert_eq!(r.status, StatusCode::OK, "{}", r.text);
            r.body
        };
        if outcome["outcome"]["outcome"] == "exited" {
            return get(app, &format!("/projects/{id}")).await.body;
        }
    }
    panic!("scenario did not finish");
}

pub fn write_csv(path: &Path, n: usize) {
    let mut s = String::from("sex,a,y\n");
    for i in 0..n {
        let sex = if i % 2 == 0 { "male" } else { "female" };
        s.push_str(&format!("{sex},{},{}\n", i % 7, (i / 2) % 2));
    }
    std::fs::write(path, s).unwrap();
}
