mod common;

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::json;
use sift_core::scenario::Scenario;

fn sift(db: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sift")).arg("--db").arg(db).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn project1_export_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let id = stdout(&sift(dir.path(), &["simulate", "marketing", "--seed", "7", "--scenario", "project1"]));
    let out = dir.path().join("h.json");
    stdout(&sift(dir.path(), &["history", "export", id.trim(), "--out", out.to_str().unwrap()]));
    let golden = include_str!("golden/project1_seed7.json");
    assert_eq!(std::fs::read_to_string(&out).unwrap(), golden);
    let shown: serde_json::Value = serde_json::from_str(&stdout(&sift(dir.path(), &["show", id.trim()]))).unwrap();
    assert_eq!(shown["timeout"], 365);
}

#[test]
fn bad_gate_option_exits_nonzero_with_code() {
    let dir = tempfile::tempdir().unwrap();
    let id = stdout(&sift(dir.path(), &["simulate", "marketing", "--scenario", "project1", "--no-replay"]));
    let id = id.trim();
    for _ in 0..5 {
        stdout(&sift(dir.path(), &["advance", id]));
        if sift(dir.path(), &["gate", "show", id]).status.success() {
            break;
        }
    }
    let o = sift(dir.path(), &["gate", "decide", id, "--decision", "sure"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("[InvalidOption]"));
    let o = sift(dir.path(), &["advance", id]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("[Gated]"));
    let o = sift(dir.path(), &["gate", "decide", id, "--decision", "confirm", "--select", "race,sex"]);
    let outcome: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(outcome["outcome"], "advanced");
}

#[test]
fn usage_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!sift(dir.path(), &["simulate", "marketing", "--scenario", "project3"]).status.success());
    assert!(!sift(dir.path(), &["show", "missing"]).status.success());
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "proxy_alpha = 2.0\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_sift"))
        .args(["--db", dir.path().to_str().unwrap(), "--config", bad.to_str().unwrap(), "list"])
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&o.stderr).contains("[InvalidConfig]"), "{o:?}");
}

/// Same seed and decisions through the HTTP router and through the CLI.
#[tokio::test]
async fn cli_and_http_ledgers_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cli_db = dir.path().join("cli");
    let id = stdout(&sift(&cli_db, &["simulate", "marketing", "--seed", "7", "--scenario", "project1"]));
    let cli_text = stdout(&sift(&cli_db, &["history", "export", id.trim()]));

    let app = common::app(&dir.path().join("http"));
    let sim = common::post(&app, "/simulate/marketing", json!({"seed": 7, "scenario": "project1"})).await;
    let id = sim.body["project_id"].as_str().unwrap();
    common::drive_over_http(&app, Scenario::Project1, id).await;
    let http_text = common::get(&app, &format!("/projects/{id}/bias-history")).await.text;
    assert_eq!(cli_text, http_text + "\n");
}

fn http(port: u16, method: &str, path: &str, body: &str) -> std::io::Result<String> {
    let mut s = TcpStream::connect(("127.0.0.1", port))?;
    write!(
        s,
        "{method} {path} HTTP/1.1\r\nHost: localhost\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )?;
    let mut out = String::new();
    s.read_to_string(&mut out)?;
    Ok(out)
}

#[test]
fn served_projects_are_visible_to_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    common::write_csv(&data, 20);
    let db = dir.path().join("db");
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_sift"))
        .args(["--db", db.to_str().unwrap(), "serve", "--port", &port.to_string()])
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let body = json!({"name": "Served", "description": "via http", "data_location": data.display().to_string()});
    let start = Instant::now();
    let reply = loop {
        match http(port, "POST", "/projects", &body.to_string()) {
            Ok(r) => break r,
            Err(_) if start.elapsed() < Duration::from_secs(20) => std::thread::sleep(Duration::from_millis(50)),
            Err(e) => panic!("server did not start: {e}"),
        }
    };
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(reply.starts_with("HTTP/1.1 201"), "{reply}");
    let listed = stdout(&sift(&db, &["list"]));
    assert!(listed.contains("\tServed\t"), "{listed}");
}

#[test]
fn documented_config_is_the_default() {
    let doc = include_str!("../../../docs/configuration.md");
    let block = doc.split("```toml\n").nth(1).unwrap().split("```").next().unwrap();
    assert_eq!(sift_core::FlowConfig::from_toml(block).unwrap(), sift_core::FlowConfig::default());
}
