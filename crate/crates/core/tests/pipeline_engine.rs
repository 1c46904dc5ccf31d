use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sift_core::pipeline::stages;
use sift_core::project::{MitigationStatus, ModelHistoryRecord};
use sift_core::scenario::{self, Scenario, ScenarioOptions};
use sift_core::{
    AdvanceOutcome, Categorical, Column, Engine, Error, FlowConfig, HumanDecision, ProjectDatabase, ProjectStatus,
    SiftPipeline, SiftProject, Table,
};

fn engine() -> Engine {
    Engine::new(FlowConfig::default()).unwrap()
}

/// Every non-exit record must come from a stage that writes the ledger.
fn assert_b_markers(p: &SiftProject) {
    let origins = &p.pipeline.as_ref().unwrap().origins;
    assert_eq!(origins.len(), p.bias_history.len());
    for (rec, origin) in p.bias_history.iter().zip(origins) {
        if rec.sift_pipeline == Some(SiftPipeline::ExitSift) {
            assert!(origin.starts_with("Exit SIFT/"), "{origin}");
            continue;
        }
        let (pipeline, stage) = origin.split_once('/').unwrap();
        let d = stages::find(pipeline, stage).unwrap_or_else(|| panic!("unknown origin {origin}"));
        assert!(d.writes_bias_history, "{origin} wrote a record without a B marker");
        assert_eq!(rec.sift_pipeline.map(|p| p.as_str()), Some(pipeline));
    }
}

struct Synth {
    proxy: bool,
    shift: f64,
    tilt: f64,
}

fn write_synth(path: &Path, n: usize, seed: u64, s: &Synth) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sex: Vec<&str> = (0..n).map(|i| if i % 2 == 0 { "male" } else { "female" }).collect();
    let race: Vec<&str> = (0..n).map(|i| if i % 3 == 0 { "non-white" } else { "white" }).collect();
    let a: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + s.shift).collect();
    let b: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let p = 0.3 + 0.3 * a[i].min(1.0) + if sex[i] == "male" { s.tilt } else { 0.0 };
            f64::from(u8::from(rng.random_bool(p.clamp(0.0, 1.0))))
        })
        .collect();
    let pred: Vec<f64> = (0..n).map(|i| if sex[i] == "male" { y[i] } else { 0.0 }).collect();
    let mut t = Table::new()
        .with_column("sex", Column::Categorical(Categorical::from_labels(&sex)))
        .unwrap()
        .with_column("race", Column::Categorical(Categorical::from_labels(&race)))
        .unwrap()
        .with_column("a", Column::Numeric(a))
        .unwrap()
        .with_column("b", Column::Numeric(b))
        .unwrap();
    if s.proxy {
        let copy: Vec<f64> = sex.iter().map(|v| f64::from(u8::from(*v == "male"))).collect();
        t.push("proxy", Column::Numeric(copy)).unwrap();
    }
    t.push("y", Column::Numeric(y)).unwrap();
    t.push("pred", Column::Numeric(pred)).unwrap();
    t.write_csv(path).unwrap();
}

fn decide(e: &Engine, db: &mut ProjectDatabase, p: &mut SiftProject, choice: &str) -> AdvanceOutcome {
    let gate = p.gate.clone().expect("a gate is open");
    let d = HumanDecision::new(&gate.gate_id, choice, "reviewed", "tester");
    let d = if gate.stage == stages::IDENTIFY_SENSITIVE {
        d.with_selection(vec!["sex".into(), "race".into()])
    } else {
        d
    };
    e.resolve(p, db, &d).unwrap()
}

/// Advances until a gate at `stage` is open, answering earlier gates with
/// the first listed option except risk gates, which proceed.
fn run_to(e: &Engine, db: &mut ProjectDatabase, p: &mut SiftProject, stage: &str) {
    for _ in 0..50 {
        if let Some(g) = p.gate.clone() {
            if g.stage == stage {
                return;
            }
            let choice = if g.stage == stages::RISK { stages::PROCEED.to_string() } else { g.options[0].clone() };
            decide(e, db, p, &choice);
        } else {
            e.advance(p, db).unwrap();
        }
        assert_eq!(p.status, ProjectStatus::Active, "exited before reaching {stage}");
    }
    panic!("never reached {stage}");
}

fn new_project(db: &mut ProjectDatabase, dir: &Path, synth: &Synth) -> SiftProject {
    let path = dir.join("data.csv");
    write_synth(&path, 600, 1, synth);
    let mut p = SiftProject::init("Synthetic", "synthetic pipeline test", &path.display().to_string()).unwrap();
    p.data.x = vec!["a".into(), "b".into()];
    if synth.proxy {
        p.data.x.push("proxy".into());
    }
    db.add_project(&p).unwrap();
    p
}

#[test]
fn project1_replay_matches_the_sparse_data_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let mut db = ProjectDatabase::open(dir.path()).unwrap();
    let p = scenario::run(&engine(), &mut db, Scenario::Project1, &ScenarioOptions::new(scenario::PROJECT1_SEED)).unwrap();
    assert_eq!(p.status, ProjectStatus::Terminated);
    assert_eq!(p.timeout, Some(365));
    let h = &p.bias_history;
    assert_eq!(h.len(), 3);
    assert_eq!(h[1].bias_detection_function, "computeSampProportion");
    assert_eq!(h[1].details, "Get additional data.");
    assert_eq!(h[2].details, "Team will collect additional data.  Project terminated and added to project database.");
    assert_b_markers(&p);
    assert_eq!(p.data.sens_features_summary["sparse_groups"]["race"], vec!["non-white".to_string()]);
}

#[test]
fn replays_are_deterministic() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let mut db = ProjectDatabase::open(dir.path()).unwrap();
        let p = scenario::run(&engine(), &mut db, Scenario::Project1, &ScenarioOptions::new(11)).unwrap();
        (p.export_bias_history(), p.decisions.iter().map(|d| (d.stage.clone(), d.decision.clone())).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}

#[test]
fn gates_block_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    let mut db = ProjectDatabase::open(dir.path()).unwrap();
    let e = engine();
    let mut p = new_project(&mut db, dir.path(), &Synth { proxy: false, shift: 0.0, tilt: 0.0 });
    run_to(&e, &mut db, &mut p, stages::RISK);
    assert!(matches!(e.advance(&mut p, &mut db), Err(Error::Gated(_))));
    let gate = p.gate.clone().unwrap();
    assert!(!gate.hog_refs.is_empty(), "risk gates cite guidance");
    let before = p.clone();
    let bad = HumanDecision::new(&gate.gate_id, "maybe", "why", "t");
    assert!(matches!(e.resolve(&mut p, &mut db, &bad), Err(Error::InvalidOption { .. })));
    let silent = HumanDecision::new(&gate.gate_id, stages::PROCEED, "", "t");
    assert!(matches!(e.resolve(&mut p, &mut db, &silent), Err(Error::MissingRationale)));
    let wrong = HumanDecision::new("other-g1", stages::PROCEED, "why", "t");
    assert!(e.resolve(&mut p, &mut db, &wrong).is_err());
    assert_eq!(p, before);
}

#[test]
fn handler_failure_rolls_back() {
    let dir = tempfile::tempdir().unwrap();
    let mut db = ProjectDatabase::open(dir.path()).unwrap();
    let e = engine();
    let mut p = new_project(&mut db, dir.path(), &Synth { proxy: false, shift: 0.0, tilt: 0.0 });
    run_to(&e, &mut db, &mut p, stages::PREPARE);
    decide(&e, &mut db, &mut p, stages::ACCEPT);
    std::fs::remove_file(dir.path().join("data.csv")).unwrap();
    let before = p.clone();
    match e.advance(&mut p, &mut db) {
        Err(Error::HandlerFailure { stage, .. }) => assert_eq!(stage, "Pre-model/Detect sparse group"),
        other => panic!("{other:?}"),
    }
    assert_eq!(p, before);
}

#[test]
fn proxy_features_can_be_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let mut db = ProjectDatabase::open(dir.path()).unwrap();
    let e = engine();
    let mut p = new_project(&mut db, dir.path(), &Synth { proxy: true, shift: 0.0, tilt: 0.0 });
    run_to(&e, &mut db, &mut p, stages::DROP_PROXY);
    decide(&e, &mut db, &mut p, stages::DROP);
    assert!(!p.data.x.contains(&"proxy".to_string()));
    let last = p.bias_history.last().unwrap();
    assert_eq!(last.details, "Proxy features dropped: proxy.");
    let proxy_record = &p.bias_history[p.bias_history.len() - 2];
    assert_eq!(proxy_record.bias_detection_function, "computeChiSqTest");
    assert_eq!(proxy_record.details, "Proxy features detected: proxy (sex).");
    assert_b_markers(&p);
}

#[test]
fn terminate_sets_retention() {
    let dir = tempfile::tempdir().unwrap();
    let mut db = ProjectDatabase::open(dir.path()).unwrap();
    let e = engine();
    let mut p = new_project(&mut db, dir.path(), &Synth { proxy: false, shift: 0.0, tilt: 0.0 });
    run_to(&e, &mut db, &mut p, stages::RISK);
    let gate = p.gate.clone().unwrap();
    let out = e.resolve(&mut p, &mut db, &HumanDecision::new(&gate.gate_id, stages::TERMINATE, "too risky", "t")).unwrap();
    assert_eq!(out, AdvanceOutcome::Exited { status: ProjectStatus::Terminated });
    assert_eq!(p.timeout, Some(365));
    assert!(p.terminated_at.is_some());
    assert!(matches!(e.advance(&mut p, &mut db), Err(Error::NotActive(_))));
    assert_b_markers(&p);
}

#[test]
fn next_pipeline_requires_proceed() {
    let p = SiftProject::init("x", "y", "/tmp/z.csv").unwrap();
    assert!(matches!(sift_core::pipeline::identify_next_pipeline(&p), Err(Error::NotProceeding(_))));
}

fn deployed_project(db: &mut ProjectDatabase, dir: &Path, shift: f64) -> SiftProject {
    let prior = dir.join("prior.csv");
    write_synth(&prior, 600, 2, &Synth { proxy: false, shift: 0.0, tilt: 0.0 });
    let mut p = new_project(db, dir, &Synth { proxy: false, shift, tilt: 0.0 });
    p.data.outcome = Some("pred".into());
    p.data.sens_features = vec!["sex".into(), "race".into()];
    p.push_model_record(ModelHistoryRecord { is_deployed: true, ..ModelHistoryRecord::default() });
    p.metadata.insert("prior_data".into(), prior.display().to_string());
    db.update_project(&p).unwrap();
    p
}

#[test]
fn deployed_model_is_monitored_and_mitigated() {
    let dir = tempfile::tempdir().unwrap();
    let mut db = ProjectDatabase::open(dir.path()).unwrap();
    let e = engine();
    let mut p = deployed_project(&mut db, dir.path(), 0.0);
    run_to(&e, &mut db, &mut p, stages::RISK);
    // IG risk proceeds into Outcome-involved
    decide(&e, &mut db, &mut p, stages::PROCEED);
    assert_eq!(p.pipeline.as_ref().unwrap().pipeline, SiftPipeline::InformationGathering);
    e.advance(&mut p, &mut db).unwrap();
    assert_eq!(p.pipeline.as_ref().unwrap().pipeline, SiftPipeline::OutcomeInvolved);
    run_to(&e, &mut db, &mut p, stages::RISK);
    let oi: Vec<_> = p.bias_history.iter().filter(|r| r.sift_pipeline == Some(SiftPipeline::OutcomeInvolved)).collect();
    assert_eq!(oi[0].details, "No covariate shift detected.");
    assert!(oi[1].details.starts_with("Bias detected in model outcome"), "{}", oi[1].details);
    assert_eq!(oi[2].bias_mitigation_function, "groupThresholds");
    assert_eq!(oi[2].mitigation_success_status, MitigationStatus::True);
    assert!(Path::new(&p.metadata["mitigated_outcomes"]).exists());
    let out = decide(&e, &mut db, &mut p, stages::PROCEED);
    assert_eq!(out, AdvanceOutcome::Exited { status: ProjectStatus::Deployed });
    assert_b_markers(&p);
}

#[test]
fn covariate_shift_can_trigger_retraining() {
    let dir = tempfile::tempdir().unwrap();
    let mut db = ProjectDatabase::open(dir.path()).unwrap();
    let e = engine();
    let mut p = deployed_project(&mut db, dir.path(), 1.0);
    run_to(&e, &mut db, &mut p, stages::RETRAIN);
    let shift = p.bias_history.last().unwrap();
    assert_eq!(shift.details, "Covariate shift detected in: a.");
    decide(&e, &mut db, &mut p, stages::EXIT_AND_RETRAIN);
    assert_eq!(p.bias_history.last().unwrap().details, "Exit SIFT and retrain the model.");
    let snap_id = format!("{}-r1", p.project_id);
    assert_eq!(p.older_versions, vec![snap_id.clone()]);
    assert_eq!(db.get_project(&snap_id).unwrap().status, ProjectStatus::Deployed);
    let st = p.pipeline.as_ref().unwrap();
    assert_eq!((st.pipeline, st.stage_index), (SiftPipeline::PreModel, 0));
    assert_b_markers(&p);
}
