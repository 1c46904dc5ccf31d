mod common;

use std::collections::BTreeSet;

use axum::http::StatusCode;
use common::*;
use serde_json::{json, Value};
use sift_core::pipeline::stages;
use sift_core::project::parse_bias_history;
use sift_core::scenario::{self, Scenario, ScenarioOptions};
use sift_core::{Engine, FlowConfig, ProjectDatabase};

#[tokio::test]
async fn create_then_get_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    write_csv(&data, 40);
    let app = app(&dir.path().join("db"));
    let body = json!({"name": "Churn", "description": "churn model", "data_location": data.display().to_string(), "X": ["a"]});
    let created = post(&app, "/projects", body).await;
    assert_eq!(created.status, StatusCode::CREATED, "{}", created.text);
    let id = created.body["project_id"].as_str().unwrap().to_string();
    let fetched = get(&app, &format!("/projects/{id}")).await;
    assert_eq!(fetched.status, StatusCode::OK);
    assert_eq!(fetched.body, created.body);
    assert_eq!(fetched.headers["x-revision"], "1");
    let list = get(&app, "/projects").await;
    assert_eq!(list.body[0]["project_id"], id.as_str());
    let hist = get(&app, &format!("/projects/{id}/bias-history")).await;
    assert_eq!(hist.body, json!({"bias_history": []}));
}

#[tokio::test]
async fn errors_carry_codes_and_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let r = get(&app, "/projects/nope").await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    assert_eq!(r.body["code"], "NotFound");
    assert_eq!(r.body["http_status"], 404);
    let r = post(&app, "/projects", json!({"name": "", "data_location": "/x.csv"})).await;
    assert_eq!((r.status, r.body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("InvalidName")));
    let r = post(&app, "/projects", json!({"name": 3})).await;
    assert_eq!((r.status, r.body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("BadRequest")));
    let r = get(&app, "/hog?pipeline=Pre-model&stage=Nowhere").await;
    assert_eq!((r.status, r.body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("UnknownStage")));
    let r = post(&app, "/simulate/marketing", json!({"scenario": "project9"})).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn risk_gate_lists_guide_questions() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let r = get(&app, "/hog?pipeline=Information%20gathering&stage=Risk%20assessment").await;
    assert_eq!(r.status, StatusCode::OK);
    let tags: BTreeSet<String> = r.body
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|e| e["entry"]["tags"].as_array().unwrap().iter().map(|t| t.as_str().unwrap().to_string()))
        .filter(|t| t.starts_with('q'))
        .collect();
    assert_eq!(tags, ["q2", "q3", "q4", "q5", "q7"].map(String::from).into());
    let st = get(&app, "/stages").await;
    assert!(st.body.as_array().unwrap().len() > 20);
}

#[tokio::test]
async fn gates_block_mutation_and_reject_bad_decisions() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let sim = post(&app, "/simulate/marketing", json!({"seed": 7, "scenario": "project1"})).await;
    assert_eq!(sim.status, StatusCode::CREATED, "{}", sim.text);
    let id = sim.body["project_id"].as_str().unwrap().to_string();
    assert_eq!(get(&app, &format!("/projects/{id}/gate")).await.status, StatusCode::NOT_FOUND);

    let mut gate = Value::Null;
    for _ in 0..10 {
        post(&app, &format!("/projects/{id}/advance"), json!(null)).await;
        let g = get(&app, &format!("/projects/{id}/gate")).await;
        if g.status == StatusCode::OK {
            gate = g.body;
            break;
        }
    }
    assert_eq!(gate["stage"], stages::IDENTIFY_SENSITIVE);
    let rev = get(&app, &format!("/projects/{id}")).await.headers["x-revision"].to_str().unwrap().to_string();

    let r = post(&app, &format!("/projects/{id}/advance"), json!(null)).await;
    assert_eq!((r.status, r.body["code"].as_str()), (StatusCode::CONFLICT, Some("Gated")));
    let r = post(&app, &format!("/projects/{id}/older-versions"), json!({"old_id": id})).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    let decision = format!("/projects/{id}/gate/decision");
    let r = post(&app, &decision, json!({"decision": "perhaps"})).await;
    assert_eq!((r.status, r.body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("InvalidOption")));
    let r = post(&app, &decision, json!({"decision": "confirm", "expected_revision": 0})).await;
    assert_eq!((r.status, r.body["code"].as_str()), (StatusCode::CONFLICT, Some("RevisionConflict")));
    let after = get(&app, &format!("/projects/{id}")).await;
    assert_eq!(after.headers["x-revision"].to_str().unwrap(), rev, "rejected decisions change nothing");

    let ok = json!({"gate_id": gate["gate_id"], "decision": "confirm", "selection": ["race", "sex"], "decider": "t"});
    assert_eq!(post(&app, &decision, ok.clone()).await.status, StatusCode::OK);
    // replaying a resolved decision is a conflict, not a second application
    let r = post(&app, &decision, ok.clone()).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    post(&app, &format!("/projects/{id}/advance"), json!(null)).await;
    let risk = get(&app, &format!("/projects/{id}/gate")).await.body;
    assert_eq!(risk["stage"], stages::RISK);
    let r = post(&app, &decision, ok).await;
    assert_eq!((r.status, r.body["code"].as_str()), (StatusCode::CONFLICT, Some("StaleGate")));
    let r = post(&app, &decision, json!({"decision": "proceed", "rationale": "  "})).await;
    assert_eq!((r.status, r.body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("MissingRationale")));
}

#[tokio::test]
async fn handler_failures_are_unprocessable() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir.path().join("db"));
    let data = dir.path().join("d.csv");
    write_csv(&data, 40);
    let created = post(&app, "/projects", json!({"name": "Gone", "data_location": data.display().to_string()})).await;
    let id = created.body["project_id"].as_str().unwrap().to_string();
    for _ in 0..20 {
        let g = get(&app, &format!("/projects/{id}/gate")).await;
        if g.status == StatusCode::OK {
            if g.body["stage"] == stages::PREPARE {
                break;
            }
            let choice = if g.body["stage"] == stages::RISK { "proceed" } else { g.body["options"][0].as_str().unwrap() };
            let body = json!({"decision": choice, "rationale": "ok", "selection": ["sex"]});
            post(&app, &format!("/projects/{id}/gate/decision"), body).await;
        } else {
            post(&app, &format!("/projects/{id}/advance"), json!(null)).await;
        }
    }
    post(&app, &format!("/projects/{id}/gate/decision"), json!({"decision": "accept"})).await;
    std::fs::remove_file(&data).unwrap();
    let r = post(&app, &format!("/projects/{id}/advance"), json!(null)).await;
    assert_eq!((r.status, r.body["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("HandlerFailure")));
}

#[tokio::test]
async fn purge_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let sim = post(&app, "/simulate/marketing", json!({"seed": 7, "scenario": "project1", "replay": true})).await;
    assert_eq!(sim.body["status"], "Terminated");
    let r = post(&app, "/admin/purge", json!({"now": chrono::Utc::now().to_rfc3339()})).await;
    assert_eq!(r.body, json!([]));
    let later = chrono::Utc::now() + chrono::Duration::days(400);
    let r = post(&app, "/admin/purge", json!({"now": later.to_rfc3339()})).await;
    assert_eq!(r.body, json!([sim.body["project_id"]]));
    let r = post(&app, "/admin/purge", json!({"now": later.to_rfc3339()})).await;
    assert_eq!(r.body, json!([]));
}

/// The second marketing project, driven one request at a time.
#[tokio::test(flavor = "multi_thread")]
async fn project2_over_http_matches_the_deployment_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let sim = post(&app, "/simulate/marketing", json!({"scenario": "project2"})).await;
    assert_eq!(sim.status, StatusCode::CREATED, "{}", sim.text);
    let id = sim.body["project_id"].as_str().unwrap().to_string();

    let sim_hits = get(&app, &format!("/projects/{id}/similar?k=5&min_score=0.3")).await;
    assert_eq!(sim_hits.body.as_array().unwrap().len(), 1);

    let project = drive_over_http(&app, Scenario::Project2, &id).await;
    assert_eq!(project["status"], "ScheduledForDeployment");
    let text = get(&app, &format!("/projects/{id}/bias-history")).await.text;
    let h = parse_bias_history(&text).unwrap();
    let pipelines: Vec<_> = h.iter().map(|r| r.sift_pipeline.map(|p| p.as_str()).unwrap_or("")).collect();
    assert_eq!(pipelines, ["Information gathering", "Pre-model", "Pre-model", "Pre-model", "Model-involved", "Exit SIFT"]);
    let detect: Vec<_> = h.iter().map(|r| r.bias_detection_function.as_str()).collect();
    assert_eq!(detect, ["", "computeSampProportion", "computeChiSqTest", "computeDispImpact", "computeDispImpact", ""]);
    assert_eq!(h.iter().map(|r| r.step).collect::<Vec<_>>(), [0, 1, 2, 3, 4, 5]);
    let mitigated: Vec<_> = h.iter().filter(|r| !r.bias_mitigation_function.is_empty()).collect();
    assert_eq!(mitigated.len(), 1);
    assert_eq!(serde_json::to_value(mitigated[0].mitigation_success_status).unwrap(), "TRUE");
    assert_eq!(project["older_versions"].as_array().unwrap().len(), 1);

    // the in-process scripted replay produces the same bytes
    let other = tempfile::tempdir().unwrap();
    let mut db = ProjectDatabase::open(other.path()).unwrap();
    let engine = Engine::new(FlowConfig::default()).unwrap();
    let p = scenario::run(&engine, &mut db, Scenario::Project2, &ScenarioOptions::new(scenario::PROJECT2_SEED)).unwrap();
    assert_eq!(p.export_bias_history(), text);
}
