//! Operations shared by the HTTP service and the command line.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sift_core::db::{DEFAULT_K, DEFAULT_MIN_SCORE};
use sift_core::oversight::{self, RelevantEntry};
use sift_core::pipeline::stages;
use sift_core::project::export_bias_history;
use sift_core::scenario::{self, AdultSource, Scenario, ScenarioOptions};
use sift_core::{
    AdvanceOutcome, Engine, Error, FlowConfig, HumanDecision, PendingGate, ProjectDatabase, ProjectStatus,
    SimilarityHit, SiftProject,
};

/// Error as seen by clients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    pub http_status: u16,
}

impl ApiError {
    pub fn new(code: &str, message: impl Into<String>) -> ApiError {
        ApiError { code: code.into(), message: message.into(), http_status: status_for(code) }
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}] {}", self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

impl From<Error> for ApiError {
    fn from(e: Error) -> ApiError {
        ApiError::new(e.code(), e.to_string())
    }
}

/// HTTP status for an error code. Codes raised only by this layer are
/// `BadRequest`, `StaleGate` and `RevisionConflict`.
pub fn status_for(code: &str) -> u16 {
    match code {
        "NotFound" => 404,
        "AlreadyGated" | "Gated" | "NoOpenGate" | "NotActive" | "NotProceeding" | "DuplicateId" | "StaleGate"
        | "RevisionConflict" => 409,
        "InvalidName" | "InvalidLocator" | "OutOfRange" | "NegativeIndex" | "UnknownStage" | "InvalidOption"
        | "MissingRationale" | "InvalidDecision" | "InvalidConfig" | "BadFraction" | "UnknownStrategy"
        | "MalformedHog" | "BadRequest" | "UnknownSensitiveFeature" => 400,
        "Io" | "Json" => 500,
        // stage computations and data problems
        _ => 422,
    }
}

pub type ApiResult<T> = std::result::Result<T, ApiError>;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateProject {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub data_location: String,
    /// Response column; defaults to `y`.
    #[serde(default)]
    pub y: Option<String>,
    /// Feature columns.
    #[serde(default, rename = "X")]
    pub x: Vec<String>,
    /// Column holding outcomes of an already deployed model.
    #[serde(default)]
    pub outcome: Option<String>,
    #[serde(default)]
    pub metadata: std::collections::BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionRequest {
    /// Defaults to the open gate.
    #[serde(default)]
    pub gate_id: Option<String>,
    pub decision: String,
    #[serde(default)]
    pub rationale: String,
    #[serde(default)]
    pub decider: String,
    #[serde(default)]
    pub selection: Vec<String>,
    #[serde(default)]
    pub data_location: Option<String>,
    /// Rejects the decision if the project changed since this revision.
    #[serde(default)]
    pub expected_revision: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateRequest {
    #[serde(default)]
    pub seed: Option<u64>,
    pub scenario: Scenario,
    /// Drive the scripted team decisions to the end instead of leaving the
    /// project at its first stage.
    #[serde(default)]
    pub replay: bool,
    #[serde(default)]
    pub n_sub: Option<usize>,
    #[serde(default)]
    pub nonwhite_frac: Option<f64>,
    /// Adult data files readable by the service; the bundled stand-in if empty.
    #[serde(default)]
    pub adult: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulated {
    pub project_id: String,
    pub status: ProjectStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectSummary {
    pub project_id: String,
    pub name: String,
    pub status: ProjectStatus,
    pub revision: u64,
    pub pipeline: Option<String>,
    pub next_stage: Option<String>,
    pub open_gate: Option<String>,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionOutcome {
    pub outcome: AdvanceOutcome,
    pub revision: u64,
}

pub struct Api {
    db: ProjectDatabase,
    engine: Engine,
}

impl Api {
    pub fn open(db_dir: &Path, config: FlowConfig) -> ApiResult<Api> {
        Ok(Api { db: ProjectDatabase::open(db_dir)?, engine: Engine::new(config)? })
    }

    pub fn with_parts(db: ProjectDatabase, engine: Engine) -> Api {
        Api { db, engine }
    }

    pub fn db(&self) -> &ProjectDatabase {
        &self.db
    }

    // other processes may have written since the last call
    fn sync(&mut self) -> ApiResult<()> {
        Ok(self.db.refresh()?)
    }

    pub fn create_project(&mut self, req: CreateProject) -> ApiResult<SiftProject> {
        self.sync()?;
        let mut p = SiftProject::init(&req.name, &req.description, &req.data_location)?;
        p.data.y = req.y.unwrap_or_else(|| "y".into());
        p.data.x = req.x;
        p.data.outcome = req.outcome;
        p.metadata = req.metadata;
        self.db.add_project(&p)?;
        Ok(p)
    }

    pub fn list_projects(&mut self) -> ApiResult<Vec<ProjectSummary>> {
        self.sync()?;
        let mut out = Vec::new();
        for p in self.db.projects() {
            let current = p.pipeline.as_ref().filter(|_| p.status == ProjectStatus::Active).and_then(|s| s.current());
            out.push(ProjectSummary {
                project_id: p.project_id.clone(),
                name: p.name.clone(),
                status: p.status,
                revision: self.db.revision(&p.project_id)?,
                pipeline: p.pipeline.as_ref().map(|s| s.pipeline.as_str().to_string()),
                next_stage: current.map(|d| d.stage.to_string()),
                open_gate: p.gate.as_ref().map(|g| format!("{}/{}", g.pipeline, g.stage)),
                records: p.bias_history.len(),
            });
        }
        Ok(out)
    }

    pub fn get_project(&mut self, id: &str) -> ApiResult<(SiftProject, u64)> {
        self.sync()?;
        Ok((self.db.get_project(id)?, self.db.revision(id)?))
    }

    pub fn bias_history(&mut self, id: &str) -> ApiResult<String> {
        let (p, _) = self.get_project(id)?;
        Ok(export_bias_history(&p.bias_history))
    }

    pub fn similar(&mut self, id: &str, k: Option<usize>, min_score: Option<f64>) -> ApiResult<Vec<SimilarityHit>> {
        self.sync()?;
        let min_score = min_score.unwrap_or(DEFAULT_MIN_SCORE);
        if !(0.0..=1.0).contains(&min_score) {
            return Err(ApiError::new("BadRequest", format!("min_score {min_score} is outside [0, 1]")));
        }
        Ok(self.db.search_similar_to(id, k.unwrap_or(DEFAULT_K), min_score)?)
    }

    pub fn advance(&mut self, id: &str) -> ApiResult<DecisionOutcome> {
        self.sync()?;
        let mut p = self.db.get_project(id)?;
        let outcome = self.engine.advance(&mut p, &mut self.db)?;
        let revision = self.db.update_project(&p)?;
        Ok(DecisionOutcome { outcome, revision })
    }

    pub fn gate(&mut self, id: &str) -> ApiResult<PendingGate> {
        let (p, _) = self.get_project(id)?;
        p.gate.ok_or_else(|| ApiError { http_status: 404, ..Error::NoOpenGate(id.to_string()).into() })
    }

    pub fn decide(&mut self, id: &str, req: DecisionRequest) -> ApiResult<DecisionOutcome> {
        self.sync()?;
        let mut p = self.db.get_project(id)?;
        if let Some(expected) = req.expected_revision {
            let current = self.db.revision(id)?;
            if current != expected {
                return Err(ApiError::new(
                    "RevisionConflict",
                    format!("project {id} is at revision {current}, decision was made against {expected}"),
                ));
            }
        }
        let gate = p.gate.clone().ok_or_else(|| Error::NoOpenGate(id.to_string()))?;
        let gate_id = req.gate_id.unwrap_or_else(|| gate.gate_id.clone());
        if gate_id != gate.gate_id {
            return Err(ApiError::new("StaleGate", format!("gate {gate_id} is closed; open gate is {}", gate.gate_id)));
        }
        let mut d = HumanDecision::new(&gate_id, &req.decision, &req.rationale, &req.decider).with_selection(req.selection);
        d.data_location = req.data_location;
        let outcome = self.engine.resolve(&mut p, &mut self.db, &d)?;
        let revision = self.db.update_project(&p)?;
        Ok(DecisionOutcome { outcome, revision })
    }

    pub fn link_older_version(&mut self, id: &str, old_id: &str) -> ApiResult<SiftProject> {
        self.sync()?;
        let p = self.db.get_project(id)?;
        if p.gate.is_some() {
            return Err(Error::Gated(id.to_string()).into());
        }
        self.db.link_older_version(id, old_id)?;
        Ok(self.db.get_project(id)?)
    }

    pub fn hog(&self, pipeline: &str, stage: &str) -> ApiResult<Vec<RelevantEntry>> {
        Ok(oversight::relevant_hog_entries(self.engine.hogs(), pipeline, stage)?)
    }

    pub fn stage_table(&self) -> serde_json::Value {
        serde_json::from_str(&stages::export_json()).expect("stage table is valid JSON")
    }

    pub fn simulate(&mut self, req: SimulateRequest) -> ApiResult<Simulated> {
        self.sync()?;
        let mut opts = ScenarioOptions::new(req.seed.unwrap_or(req.scenario.default_seed()));
        if let Some(n) = req.n_sub {
            opts.n_sub = n;
        }
        if let Some(f) = req.nonwhite_frac {
            opts.nonwhite_frac = f;
        }
        if !req.adult.is_empty() {
            opts.adult = AdultSource::Files(req.adult);
        }
        let p = if req.replay {
            scenario::run(&self.engine, &mut self.db, req.scenario, &opts)?
        } else {
            if req.scenario == Scenario::Project2 && !self.db.projects().any(|p| p.name == scenario::SVC_NAME) {
                let first = ScenarioOptions { seed: scenario::PROJECT1_SEED, ..opts.clone() };
                scenario::run(&self.engine, &mut self.db, Scenario::Project1, &first)?;
            }
            scenario::create_project(&mut self.db, req.scenario, &opts)?
        };
        Ok(Simulated { project_id: p.project_id, status: p.status })
    }

    pub fn purge(&mut self, now: Option<DateTime<Utc>>) -> ApiResult<Vec<String>> {
        self.sync()?;
        Ok(self.db.purge_expired(now.unwrap_or_else(Utc::now))?)
    }
}
