//! Stage handlers, gate resolution and ledger writes.

use std::path::Path;

use chrono::Utc;
use serde_json::json;

use crate::config::{FlowConfig, StageKey};
use crate::db::ProjectDatabase;
use crate::error::{Error, Result};
use crate::lab::{self, DesignMatrix};
use crate::metrics::{self, DataSummary, DetectionReport, Prior, COVARIATE_SHIFT, DISP_IMPACT};
use crate::mitigation::{self, Artifact, Fold, MitigationInput};
use crate::oversight::{self, GateSpec, HogDocument, HogRef, HumanDecision, PendingGate};
use crate::project::{
    BiasHistoryRecord, MitigationStatus, ModelFlow, ProjectStatus, SiftPipeline, SiftProject, MARGINALIZED_GROUPS,
    PROXY_FEATURES, SPARSE_GROUPS,
};
use crate::table::{Categorical, Column, Table};

use super::stages::{self, StageDescriptor};
use super::{flow, AdvanceOutcome, PipelineState};

use SiftPipeline::{InformationGathering as IG, ModelInvolved as MI, OutcomeInvolved as OI, PreModel as PM};

pub const PROCEED_DETAILS: &str = "Risk assessment indicates project should proceed through SIFT.";
pub const TERMINATE_DETAILS: &str =
    "Risk assessment indicates project should be terminated. Project terminated and added to project database.";
pub const REVISE_DETAILS: &str =
    "Risk assessment indicates project should exit SIFT for revision. Project terminated and added to project database.";
pub const DEPLOY_DETAILS: &str = "Project scheduled for deployment and added to project database.";
pub const REMAIN_DEPLOYED_DETAILS: &str =
    "Risk assessment indicates deployed model should remain in deployment. Project returned to project database.";
pub const GET_MORE_DATA: &str = "Get additional data.";
pub const COLLECT_EXIT_DETAILS: &str = "Team will collect additional data.  Project terminated and added to project database.";
pub const PROCEED_WITH_DATA: &str = "Proceed with current data.";
pub const TERMINATE_PROJECT: &str = "Terminate project.";
pub const TERMINATED_EXIT_DETAILS: &str = "Project terminated and added to project database.";
pub const RETRAIN_DETAILS: &str = "Exit SIFT and retrain the model.";
pub const CONTINUE_DETAILS: &str = "Continue with the deployed model.";

/// Metadata keys the engine reads or writes.
pub const META_SEED: &str = "seed";
pub const META_PRIOR_DATA: &str = "prior_data";
pub const META_PRIOR_SUMMARY: &str = "prior_summary";
pub const META_MODEL_OUTCOMES: &str = "model_outcomes";
pub const META_MITIGATED_OUTCOMES: &str = "mitigated_outcomes";
pub const META_FINAL_DI: &str = "final_di";
pub const META_INITIAL_DI: &str = "initial_di";

const DEFAULT_RESPONSE: &str = "y";

/// Drives projects through the stage table under one company configuration.
#[derive(Debug, Clone)]
pub struct Engine {
    pub config: FlowConfig,
    pub hogs: Vec<HogDocument>,
}

fn state(p: &mut SiftProject) -> &mut PipelineState {
    p.pipeline.get_or_insert_with(PipelineState::start)
}

fn advanced(d: &StageDescriptor) -> AdvanceOutcome {
    AdvanceOutcome::Advanced { pipeline: d.pipeline.as_str().into(), stage: d.stage.into() }
}

fn next_stage_outcome(p: &SiftProject) -> AdvanceOutcome {
    match p.pipeline.as_ref().and_then(PipelineState::current) {
        Some(d) => advanced(d),
        None => AdvanceOutcome::Exited { status: p.status },
    }
}

fn jump(p: &mut SiftProject, pipeline: SiftPipeline, stage: &str) {
    let index = stages::index_of(pipeline, stage).expect("stage names come from the table");
    let st = state(p);
    st.pipeline = pipeline;
    st.stage_index = index;
}

fn enter(p: &mut SiftProject, pipeline: SiftPipeline) {
    let st = state(p);
    st.pipeline = pipeline;
    st.stage_index = 0;
}

fn write_record(p: &mut SiftProject, pipeline: SiftPipeline, stage: &str, record: BiasHistoryRecord) -> usize {
    debug_assert!(stages::find(pipeline.as_str(), stage).is_some_and(|d| d.writes_bias_history));
    let step = p.push_bias_record(record);
    state(p).origins.push(format!("{}/{}", pipeline.as_str(), stage));
    step
}

fn detection_record(pipeline: SiftPipeline, features: &[String], function: &str, details: String) -> BiasHistoryRecord {
    BiasHistoryRecord {
        step: 0,
        sift_pipeline: Some(pipeline),
        bias_features: features.to_vec(),
        bias_detection_function: function.into(),
        bias_mitigation_function: String::new(),
        mitigation_success_status: MitigationStatus::Unset,
        details,
    }
}

fn set_latest_details(p: &mut SiftProject, details: &str) {
    if let Some(r) = p.bias_history.last_mut() {
        r.details = details.to_string();
    }
}

pub fn load_table(locator: &str) -> Result<Table> {
    let path = SiftProject::resolve_locator(locator)?;
    if !path.exists() {
        return Err(Error::FileNotFound(path));
    }
    Table::read_csv(&path)
}

fn response(p: &SiftProject) -> String {
    if p.data.y.is_empty() {
        DEFAULT_RESPONSE.into()
    } else {
        p.data.y.clone()
    }
}

fn project_seed(p: &SiftProject) -> u64 {
    p.metadata.get(META_SEED).and_then(|s| s.parse().ok()).unwrap_or(0)
}

/// "race (non-white); sex (Female)" style listing of flagged groups.
fn describe_groups(report: &DetectionReport) -> String {
    report
        .per_feature
        .iter()
        .filter(|(_, r)| r.flagged)
        .map(|(f, r)| if r.groups.is_empty() { f.clone() } else { format!("{f} ({})", r.groups.join(", ")) })
        .collect::<Vec<_>>()
        .join("; ")
}

fn write_outcomes(path: &Path, rows: &[usize], outcomes: &[bool]) -> Result<()> {
    let table = Table::new()
        .with_column("row", Column::Numeric(rows.iter().map(|&r| r as f64).collect()))?
        .with_column("outcome", Column::Numeric(outcomes.iter().map(|&o| f64::from(u8::from(o))).collect()))?;
    table.write_csv(path)
}

/// Pre-model after a fresh start, Outcome-involved for a deployed model.
pub fn identify_next_pipeline(project: &SiftProject) -> Result<SiftPipeline> {
    let proceeding = project.status == ProjectStatus::Active
        && project
            .decisions
            .iter()
            .rev()
            .find(|d| d.pipeline == IG.as_str() && d.stage == stages::RISK)
            .is_some_and(|d| d.decision == stages::PROCEED);
    if !proceeding {
        return Err(Error::NotProceeding(project.project_id.clone()));
    }
    Ok(if project.is_deployed_at_start() { OI } else { PM })
}

impl Engine {
    pub fn new(config: FlowConfig) -> Result<Engine> {
        config.validate()?;
        Ok(Engine { config, hogs: oversight::load_hog_seed()? })
    }

    pub fn with_hogs(config: FlowConfig, hogs: Vec<HogDocument>) -> Engine {
        Engine { config, hogs }
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn hogs(&self) -> &[HogDocument] {
        &self.hogs
    }

    /// Runs the next stage. Stage failures leave the project untouched.
    pub fn advance(&self, project: &mut SiftProject, db: &mut ProjectDatabase) -> Result<AdvanceOutcome> {
        if project.gate.is_some() {
            return Err(Error::Gated(project.project_id.clone()));
        }
        if project.status != ProjectStatus::Active {
            return Err(Error::NotActive(project.project_id.clone()));
        }
        let d = state(project).current().ok_or_else(|| Error::NotActive(project.project_id.clone()))?;
        let snapshot = project.clone();
        match self.run_stage(project, db, d) {
            Ok(o) => Ok(o),
            Err(e) => {
                *project = snapshot;
                Err(e.in_stage(&format!("{}/{}", d.pipeline.as_str(), d.stage)))
            }
        }
    }

    /// Applies a human decision to the open gate. Invalid decisions leave the
    /// project untouched.
    pub fn resolve(
        &self,
        project: &mut SiftProject,
        db: &mut ProjectDatabase,
        decision: &HumanDecision,
    ) -> Result<AdvanceOutcome> {
        oversight::validate_decision(project, decision)?;
        let snapshot = project.clone();
        let gate = oversight::close_gate(project, decision)?;
        match self.apply_decision(project, db, &gate, decision) {
            Ok(o) => Ok(o),
            Err(e) => {
                *project = snapshot;
                Err(e)
            }
        }
    }

    fn hog_refs(&self, d: &StageDescriptor) -> Vec<HogRef> {
        oversight::relevant_hog_entries(&self.hogs, d.pipeline.as_str(), d.stage)
            .map(|v| v.into_iter().map(|e| HogRef { sme_field: e.sme_field, entry: e.index }).collect())
            .unwrap_or_default()
    }

    fn open(&self, p: &mut SiftProject, d: &StageDescriptor, prompt: &str, context: serde_json::Value) -> Result<AdvanceOutcome> {
        let gate = oversight::open_gate(
            p,
            GateSpec {
                pipeline: d.pipeline.as_str(),
                stage: d.stage,
                prompt: prompt.into(),
                options: d.gate_options.iter().map(|s| s.to_string()).collect(),
                hog_refs: self.hog_refs(d),
                requires_rationale: d.stage == stages::RISK,
                context,
            },
        )?;
        Ok(AdvanceOutcome::Blocked { gate })
    }

    fn exit(&self, p: &mut SiftProject, status: ProjectStatus, details: &str, from: &PendingGate) -> AdvanceOutcome {
        p.push_bias_record(BiasHistoryRecord {
            sift_pipeline: Some(SiftPipeline::ExitSift),
            details: details.into(),
            ..BiasHistoryRecord::default()
        });
        state(p).origins.push(format!("{}/{}/{}", SiftPipeline::ExitSift.as_str(), from.pipeline, from.stage));
        p.status = status;
        if status == ProjectStatus::Terminated {
            p.timeout = self.config.terminated_timeout_days;
            p.terminated_at = Some(Utc::now());
        }
        AdvanceOutcome::Exited { status }
    }

    fn run_stage(&self, p: &mut SiftProject, db: &mut ProjectDatabase, d: &'static StageDescriptor) -> Result<AdvanceOutcome> {
        let cfg = &self.config;
        match (d.pipeline, d.stage) {
            (IG, stages::SEARCH) => {
                let id = p.project_id.clone();
                let hits: Vec<_> = db
                    .search_similar(&p.description, cfg.search_k + 1, cfg.search_min_score)
                    .into_iter()
                    .filter(|h| h.project_id != id)
                    .take(cfg.search_k)
                    .collect();
                let st = state(p);
                st.hits = hits;
                st.stage_index += 1;
                Ok(advanced(d))
            }
            (IG, stages::VERIFY) => {
                let hits = state(p).hits.clone();
                if hits.is_empty() {
                    state(p).stage_index += 1;
                    return Ok(advanced(d));
                }
                let summaries: Vec<_> = hits
                    .iter()
                    .map(|h| {
                        let other = db.get_project(&h.project_id).ok();
                        json!({
                            "project_id": h.project_id,
                            "score": h.score,
                            "name": other.as_ref().map(|o| o.name.clone()),
                            "description": other.as_ref().map(|o| o.description.clone()),
                            "bias_history": other.as_ref().map(|o| o.bias_history.clone()),
                        })
                    })
                    .collect();
                self.open(p, d, "Confirm which search hits are similar projects.", json!({ "hits": summaries }))
            }
            (IG, stages::IDENTIFY_SENSITIVE) => {
                let suggested = self.suggested_features(p, db);
                self.open(p, d, "Confirm the sensitive features for this project.", json!({ "suggested": suggested }))
            }
            (IG, stages::IDENTIFY_NEXT) => {
                let next = identify_next_pipeline(p)?;
                enter(p, next);
                Ok(advanced(d))
            }
            (_, stages::RISK) => self.open(p, d, "Assess the bias risk of continuing this project.", json!({})),
            (PM, stages::PREPARE) => self.open(
                p,
                d,
                "Prepare the dataset and confirm its location.",
                json!({ "data_location": p.data.raw_data }),
            ),
            (PM, stages::SPARSE) => {
                let table = load_table(&p.data.raw_data)?;
                let report = metrics::compute_samp_proportion(&table, &p.data.sens_features, cfg.sparse_min_prop)?;
                for (f, r) in &report.per_feature {
                    if r.flagged {
                        p.data.set_sens_features_summary(SPARSE_GROUPS, f, r.groups.clone())?;
                    }
                }
                let details = if report.any_flagged() {
                    format!("Sparse groups detected: {}.", describe_groups(&report))
                } else {
                    "No sparse groups detected.".into()
                };
                let features = p.data.sens_features.clone();
                write_record(p, PM, d.stage, detection_record(PM, &features, &report.metric_name, details));
                let next = if report.any_flagged() { stages::MORE_DATA } else { stages::PROXY };
                jump(p, PM, next);
                Ok(advanced(d))
            }
            (PM, stages::MORE_DATA) => {
                self.open(p, d, "Sparse groups were found. Decide whether more data is needed.", json!({}))
            }
            (PM, stages::PROXY) => {
                let table = load_table(&p.data.raw_data)?;
                let scan = metrics::compute_chi_sq_test(
                    &table,
                    &p.data.sens_features,
                    &p.data.x,
                    cfg.proxy_alpha,
                    cfg.proxy_v_min,
                )?;
                let proxies = scan.proxies();
                for (f, cands) in &proxies {
                    p.data.set_sens_features_summary(PROXY_FEATURES, f, cands.clone())?;
                }
                let details = if proxies.is_empty() {
                    "No proxy features detected.".to_string()
                } else {
                    let list: Vec<String> = proxies.iter().map(|(s, c)| format!("{} ({s})", c.join(", "))).collect();
                    format!("Proxy features detected: {}.", list.join("; "))
                };
                let features = p.data.sens_features.clone();
                write_record(p, PM, d.stage, detection_record(PM, &features, &scan.report.metric_name, details));
                let next = if proxies.is_empty() { stages::MARGINALIZED } else { stages::DROP_PROXY };
                jump(p, PM, next);
                Ok(advanced(d))
            }
            (PM, stages::DROP_PROXY) => {
                let proxies: Vec<String> = proxy_candidates(p);
                self.open(p, d, "Decide whether to drop the detected proxy features.", json!({ "proxies": proxies }))
            }
            (PM, stages::MARGINALIZED) => {
                let table = load_table(&p.data.raw_data)?;
                let report = metrics::detect_marginalized_groups(
                    &table,
                    &response(p),
                    &cfg.positive_label,
                    &p.data.sens_features,
                    cfg.fairness_range,
                    &cfg.privileged,
                )?;
                for (f, r) in &report.per_feature {
                    if r.flagged {
                        p.data.set_sens_features_summary(MARGINALIZED_GROUPS, f, r.groups.clone())?;
                    }
                }
                let details = if report.any_flagged() {
                    format!("Marginalized groups detected: {}.", describe_groups(&report))
                } else {
                    "No marginalized groups detected.".into()
                };
                let features = p.data.sens_features.clone();
                write_record(p, PM, d.stage, detection_record(PM, &features, DISP_IMPACT, details));
                jump(p, PM, stages::RISK);
                Ok(advanced(d))
            }
            (MI, _) => self.run_model_involved(p, db),
            (OI, stages::SHIFT) => self.run_shift(p, db, d),
            (OI, stages::RETRAIN) => {
                self.open(p, d, "Covariate shift was found. Decide whether to retrain the model.", json!({}))
            }
            (OI, stages::POST_DETECTION) => {
                let table = load_table(&p.data.raw_data)?;
                let (outcome, _) = deployed_outcomes(p, &table, cfg)?;
                let report = metrics::disp_impact_report(
                    &outcome,
                    &table,
                    &p.data.sens_features,
                    cfg.fairness_range,
                    &cfg.privileged,
                )?;
                let details = if report.any_flagged() {
                    format!("Bias detected in model outcome: {}.", describe_groups(&report))
                } else {
                    "No bias detected in model outcome.".into()
                };
                let features = p.data.sens_features.clone();
                write_record(p, OI, d.stage, detection_record(OI, &features, DISP_IMPACT, details));
                let next = if report.any_flagged() { stages::POST_MITIGATION } else { stages::RISK };
                jump(p, OI, next);
                Ok(advanced(d))
            }
            (OI, stages::POST_MITIGATION) => self.run_outcome_mitigation(p, db, d),
            _ => unreachable!("stage table and handlers are in sync"),
        }
    }

    fn suggested_features(&self, p: &SiftProject, db: &ProjectDatabase) -> Vec<String> {
        let mut out: Vec<String> = p.data.sens_features.clone();
        for id in &p.similar_projects {
            if let Ok(other) = db.get_project(id) {
                for f in other.data.sens_features {
                    if !out.contains(&f) {
                        out.push(f);
                    }
                }
            }
        }
        out
    }

    fn run_model_involved(&self, p: &mut SiftProject, db: &mut ProjectDatabase) -> Result<AdvanceOutcome> {
        let table = load_table(&p.data.raw_data)?;
        let y = response(p);
        let input = flow::FlowInput {
            table: &table,
            x: &p.data.x,
            y: &y,
            sens: &p.data.sens_features,
            seed: project_seed(p),
            config: &self.config,
        };
        let out = match p.model_flow {
            ModelFlow::Standard => flow::run_standard_flow(input)?,
            ModelFlow::Custom => {
                let plan = p.custom_plan.as_deref().ok_or_else(|| Error::InvalidConfig("custom flow without a plan".into()))?;
                flow::run_custom_flow(input, plan)?
            }
        };
        for m in &out.models {
            p.push_model_record(m.clone());
        }
        for r in &out.records {
            write_record(p, MI, &r.stage, r.record.clone());
        }
        let path = db.artifact_dir(&p.project_id)?.join(format!("model_outcomes_{}.csv", p.model_history.len()));
        write_outcomes(&path, &out.test_index, &out.final_outcomes)?;
        p.metadata.insert(META_MODEL_OUTCOMES.into(), path.display().to_string());
        p.metadata.insert(META_INITIAL_DI.into(), serde_json::to_string(&out.initial_di)?);
        p.metadata.insert(META_FINAL_DI.into(), serde_json::to_string(&out.final_di)?);
        jump(p, MI, stages::RISK);
        let d = stages::find(MI.as_str(), stages::RISK).expect("risk stage");
        let context = json!({
            "initial_di": out.initial_di,
            "initial_accuracy": out.initial_accuracy,
            "final_di": out.final_di,
            "final_accuracy": out.final_accuracy,
        });
        self.open(p, d, "Assess the bias risk of deploying this model.", context)
    }

    fn prior_for_shift(&self, p: &SiftProject, db: &ProjectDatabase) -> Result<Option<PriorData>> {
        if let Some(old) = p.older_versions.iter().rev().find_map(|id| db.get_project(id).ok()) {
            if let Ok(t) = load_table(&old.data.raw_data) {
                return Ok(Some(PriorData::Table(t)));
            }
        }
        if let Some(loc) = p.metadata.get(META_PRIOR_DATA) {
            return Ok(Some(PriorData::Table(load_table(loc)?)));
        }
        if let Some(s) = p.metadata.get(META_PRIOR_SUMMARY) {
            return Ok(Some(PriorData::Summary(serde_json::from_str(s)?)));
        }
        Ok(None)
    }

    fn run_shift(&self, p: &mut SiftProject, db: &ProjectDatabase, d: &StageDescriptor) -> Result<AdvanceOutcome> {
        let table = load_table(&p.data.raw_data)?;
        let cols = monitored_columns(p, &table);
        let current = table.select_columns(&cols)?;
        let features = p.data.sens_features.clone();
        let report = match self.prior_for_shift(p, db)? {
            None => {
                let details = "No prior data available; covariate shift check skipped.".to_string();
                write_record(p, OI, d.stage, detection_record(OI, &features, COVARIATE_SHIFT, details));
                jump(p, OI, stages::POST_DETECTION);
                return Ok(advanced(d));
            }
            Some(PriorData::Table(prior)) => {
                let keep: Vec<&String> = cols.iter().filter(|c| prior.has(c)).collect();
                let prior = prior.select_columns(&keep)?;
                metrics::detect_covariate_shift(&current, Prior::Table(&prior), self.config.shift_alpha)?
            }
            Some(PriorData::Summary(mut s)) => {
                s.columns.retain(|k, _| cols.contains(k));
                metrics::detect_covariate_shift(&current, Prior::Summary(&s), self.config.shift_alpha)?
            }
        };
        let shifted = report.flagged_features();
        let details = if shifted.is_empty() {
            "No covariate shift detected.".to_string()
        } else {
            format!("Covariate shift detected in: {}.", shifted.join(", "))
        };
        write_record(p, OI, d.stage, detection_record(OI, &features, COVARIATE_SHIFT, details));
        let next = if shifted.is_empty() { stages::POST_DETECTION } else { stages::RETRAIN };
        jump(p, OI, next);
        Ok(advanced(d))
    }

    fn run_outcome_mitigation(&self, p: &mut SiftProject, db: &ProjectDatabase, d: &StageDescriptor) -> Result<AdvanceOutcome> {
        let cfg = &self.config;
        let table = load_table(&p.data.raw_data)?;
        let (outcome, scores) = deployed_outcomes(p, &table, cfg)?;
        let scores = scores.unwrap_or_else(|| outcome.iter().map(|&o| f64::from(u8::from(o))).collect());
        let groups: Vec<(String, Categorical)> =
            p.data.sens_features.iter().map(|f| Ok((f.clone(), table.categorical(f)?))).collect::<Result<_>>()?;
        let features = p.data.sens_features.clone();
        let Some(name) = cfg.standard_plan()?.get(&StageKey::Post).cloned() else {
            let details = "Bias detected in model outcome. No post-processing strategy configured.".to_string();
            write_record(p, OI, d.stage, detection_record(OI, &features, DISP_IMPACT, details));
            jump(p, OI, stages::RISK);
            return Ok(advanced(d));
        };
        let y = response(p);
        let (outcomes, success) = if table.has(&y) && !p.data.x.is_empty() {
            let x = DesignMatrix::from_table(&table, &p.data.x)?;
            let yv = table.column(&y)?.binary(&y, &cfg.positive_label)?;
            let fold = Fold { x: &x, y: &yv, groups: &groups };
            let input = MitigationInput {
                train: fold,
                train_weights: None,
                test: fold,
                test_scores: Some(&scores),
                range: cfg.fairness_range,
                train_config: &cfg.train,
                schedule: &cfg.lambda_schedule,
            };
            let result = mitigation::registry().lookup(&name)?.apply(&input)?;
            let Artifact::Outcomes(o) = result.artifact else {
                return Err(Error::InvalidConfig(format!("{name} did not produce outcomes")));
            };
            (o, result.success)
        } else {
            let parts: Vec<&Categorical> = groups.iter().map(|(_, g)| g).collect();
            let joint = Categorical::joint(&parts)?;
            let out = mitigation::group_thresholds(&scores, &joint, None, cfg.fairness_range)?;
            let per = mitigation::outcome_di(&out.outcomes, &groups)?;
            let ok = per.values().all(|v| cfg.fairness_range.contains(*v));
            (out.outcomes, ok)
        };
        let rows: Vec<usize> = (0..outcomes.len()).collect();
        let path = db.artifact_dir(&p.project_id)?.join(format!("mitigated_outcomes_{}.csv", p.bias_history.len()));
        write_outcomes(&path, &rows, &outcomes)?;
        p.metadata.insert(META_MITIGATED_OUTCOMES.into(), path.display().to_string());
        let record = BiasHistoryRecord {
            step: 0,
            sift_pipeline: Some(OI),
            bias_features: features,
            bias_detection_function: DISP_IMPACT.into(),
            bias_mitigation_function: name,
            mitigation_success_status: MitigationStatus::from_success(success),
            details: "Bias detected in model outcome. Post-processing strategy implemented.".into(),
        };
        write_record(p, OI, d.stage, record);
        jump(p, OI, stages::RISK);
        Ok(advanced(d))
    }

    fn apply_decision(
        &self,
        p: &mut SiftProject,
        db: &mut ProjectDatabase,
        gate: &PendingGate,
        decision: &HumanDecision,
    ) -> Result<AdvanceOutcome> {
        let pipeline = SiftPipeline::parse(&gate.pipeline).expect("gates are opened on canonical stages");
        let choice = decision.decision.as_str();
        match (pipeline, gate.stage.as_str()) {
            (IG, stages::VERIFY) => {
                let hits = state(p).hits.clone();
                let selected: Vec<String> = if choice == stages::CONFIRM {
                    if decision.selection.is_empty() {
                        hits.iter().map(|h| h.project_id.clone()).collect()
                    } else {
                        decision.selection.clone()
                    }
                } else {
                    // rejecting a subset confirms the rest
                    hits.iter()
                        .map(|h| h.project_id.clone())
                        .filter(|id| !decision.selection.is_empty() && !decision.selection.contains(id))
                        .collect()
                };
                for id in &selected {
                    if !hits.iter().any(|h| &h.project_id == id) {
                        return Err(Error::InvalidDecision(format!("{id} is not a search hit")));
                    }
                }
                for h in &mut state(p).hits {
                    h.verified = selected.contains(&h.project_id);
                }
                for id in selected {
                    if !p.similar_projects.contains(&id) {
                        p.similar_projects.push(id);
                    }
                }
                state(p).stage_index += 1;
            }
            (IG, stages::IDENTIFY_SENSITIVE) => {
                let features: Vec<String> = if decision.selection.is_empty() {
                    serde_json::from_value(gate.context["suggested"].clone()).unwrap_or_default()
                } else {
                    decision.selection.clone()
                };
                if features.is_empty() {
                    return Err(Error::InvalidDecision("no sensitive features selected".into()));
                }
                if let Ok(table) = load_table(&p.data.raw_data) {
                    for f in &features {
                        if !table.has(f) {
                            return Err(Error::UnknownColumn(f.clone()));
                        }
                    }
                }
                p.data.sens_features = features;
                p.data.x.retain(|c| !p.data.sens_features.contains(c));
                if let Some(other) = p.similar_projects.first().and_then(|id| db.get_project(id).ok()) {
                    if p.model_flow == ModelFlow::Standard && p.custom_plan.is_none() {
                        p.model_flow = other.model_flow;
                        p.custom_plan = other.custom_plan.clone();
                    }
                }
                state(p).stage_index += 1;
            }
            (_, stages::RISK) => return self.apply_risk(p, pipeline, gate, choice),
            (PM, stages::PREPARE) => {
                if let Some(loc) = &decision.data_location {
                    crate::project::validate_locator(loc)?;
                    p.data.raw_data = loc.clone();
                    p.data_location = loc.clone();
                }
                let table = load_table(&p.data.raw_data)?;
                if p.data.y.is_empty() {
                    p.data.y = DEFAULT_RESPONSE.into();
                }
                if p.data.x.is_empty() {
                    p.data.x = table
                        .names()
                        .iter()
                        .filter(|c| **c != p.data.y && !p.data.sens_features.contains(c) && Some(*c) != p.data.outcome.as_ref())
                        .cloned()
                        .collect();
                }
                p.data.validate(&table)?;
                state(p).stage_index += 1;
            }
            (PM, stages::MORE_DATA) => match choice {
                stages::COLLECT_MORE_DATA => {
                    set_latest_details(p, GET_MORE_DATA);
                    return Ok(self.exit(p, ProjectStatus::Terminated, COLLECT_EXIT_DETAILS, gate));
                }
                stages::TERMINATE => {
                    set_latest_details(p, TERMINATE_PROJECT);
                    return Ok(self.exit(p, ProjectStatus::Terminated, TERMINATED_EXIT_DETAILS, gate));
                }
                _ => {
                    set_latest_details(p, PROCEED_WITH_DATA);
                    jump(p, PM, stages::PROXY);
                }
            },
            (PM, stages::DROP_PROXY) => {
                let proxies = proxy_candidates(p);
                let details = if choice == stages::DROP {
                    p.data.x.retain(|c| !proxies.contains(c));
                    format!("Proxy features dropped: {}.", proxies.join(", "))
                } else {
                    format!("Proxy features kept: {}.", proxies.join(", "))
                };
                let features = p.data.sens_features.clone();
                write_record(p, PM, stages::DROP_PROXY, detection_record(PM, &features, "", details));
                jump(p, PM, stages::MARGINALIZED);
            }
            (OI, stages::RETRAIN) => {
                if choice == stages::EXIT_AND_RETRAIN {
                    set_latest_details(p, RETRAIN_DETAILS);
                    let n = state(p).retrain_count + 1;
                    let mut snap = p.clone();
                    snap.project_id = format!("{}-r{n}", p.project_id);
                    snap.status = ProjectStatus::Deployed;
                    db.add_project(&snap)?;
                    p.older_versions.push(snap.project_id);
                    state(p).retrain_count = n;
                    enter(p, PM);
                } else {
                    set_latest_details(p, CONTINUE_DETAILS);
                    jump(p, OI, stages::POST_DETECTION);
                }
            }
            _ => unreachable!("only gate stages open gates"),
        }
        Ok(next_stage_outcome(p))
    }

    fn apply_risk(&self, p: &mut SiftProject, pipeline: SiftPipeline, gate: &PendingGate, choice: &str) -> Result<AdvanceOutcome> {
        match choice {
            stages::TERMINATE => return Ok(self.exit(p, ProjectStatus::Terminated, TERMINATE_DETAILS, gate)),
            stages::EXIT_AND_REVISE => return Ok(self.exit(p, ProjectStatus::Terminated, REVISE_DETAILS, gate)),
            _ => {}
        }
        match pipeline {
            IG => {
                let record = BiasHistoryRecord {
                    sift_pipeline: Some(IG),
                    details: PROCEED_DETAILS.into(),
                    ..BiasHistoryRecord::default()
                };
                write_record(p, IG, stages::RISK, record);
                state(p).stage_index += 1;
                Ok(next_stage_outcome(p))
            }
            PM => {
                // the decision log carries this one; the ledger keeps the detection results
                enter(p, MI);
                Ok(next_stage_outcome(p))
            }
            MI => Ok(self.exit(p, ProjectStatus::ScheduledForDeployment, DEPLOY_DETAILS, gate)),
            OI => Ok(self.exit(p, ProjectStatus::Deployed, REMAIN_DEPLOYED_DETAILS, gate)),
            SiftPipeline::ExitSift => unreachable!("no gates after exit"),
        }
    }
}

enum PriorData {
    Table(Table),
    Summary(DataSummary),
}

fn proxy_candidates(p: &SiftProject) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    if let Some(m) = p.data.sens_features_summary.get(PROXY_FEATURES) {
        for c in m.values().flatten() {
            if !out.contains(c) {
                out.push(c.clone());
            }
        }
    }
    out
}

/// Columns compared for covariate shift: the predictors, or every column but
/// the response, outcome and sensitive features.
fn monitored_columns(p: &SiftProject, table: &Table) -> Vec<String> {
    if !p.data.x.is_empty() {
        return p.data.x.clone();
    }
    let y = response(p);
    table
        .names()
        .iter()
        .filter(|c| **c != y && !p.data.sens_features.contains(c) && Some(*c) != p.data.outcome.as_ref())
        .cloned()
        .collect()
}

/// Deployed-model outcomes: the recorded outcome column when present,
/// otherwise predictions of the deployed linear model. Scores accompany
/// model predictions.
fn deployed_outcomes(p: &SiftProject, table: &Table, cfg: &FlowConfig) -> Result<(Vec<bool>, Option<Vec<f64>>)> {
    let model = p.model_history.iter().rev().find(|m| m.is_deployed).and_then(|m| m.fitted_model.as_ref());
    let scores = match model {
        Some(m) if !p.data.x.is_empty() => {
            let x = DesignMatrix::from_table(table, &p.data.x)?;
            lab::predict(m, &x).ok()
        }
        _ => None,
    };
    if let Some(col) = p.data.outcome.as_ref().filter(|c| table.has(c)) {
        return Ok((table.column(col)?.binary(col, &cfg.positive_label)?, scores));
    }
    match scores {
        Some(s) => Ok((lab::classify(&s, 0.5), Some(s))),
        None => Err(Error::SchemaError("no deployed outcomes: set data.outcome or record a deployed model".into())),
    }
}
