//! Scripted replays of the two marketing projects: an early-adopter model
//! stopped for sparse data, then its successor that reaches deployment.

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::db::ProjectDatabase;
use crate::error::{Error, Result};
use crate::oversight::{HumanDecision, PendingGate};
use crate::pipeline::{stages, AdvanceOutcome, Engine};
use crate::project::{SiftPipeline, SiftProject};
use crate::sim::{self, GeneratedDataset, SimulationConfig};

pub const SVC_NAME: &str = "Svc2020";
pub const NEW_SVC_NAME: &str = "NewSvc2020";
pub const SVC_DESCRIPTION: &str = "Early adopter model for the new service. Scores existing customers \
     for exclusive promotional discounts using survey labels, customer demographics and purchased \
     consumer segment data.";
pub const NEW_SVC_DESCRIPTION: &str = "Early adopter model for the new service built on a new customer \
     survey. Scores existing customers for promotional discounts from demographics and purchased \
     consumer segment data.";

pub const PROJECT1_SEED: u64 = 7;
/// Seed whose generated data shows no bias in the labels but a biased
/// unmitigated model, so the replay exercises in-processing.
pub const PROJECT2_SEED: u64 = 5;
pub const DEFAULT_N_SUB: usize = 2000;
pub const DEFAULT_NONWHITE_FRAC: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Project1,
    Project2,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Project1 => "project1",
            Scenario::Project2 => "project2",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Project1 => SVC_NAME,
            Scenario::Project2 => NEW_SVC_NAME,
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Scenario::Project1 => SVC_DESCRIPTION,
            Scenario::Project2 => NEW_SVC_DESCRIPTION,
        }
    }

    pub fn default_seed(self) -> u64 {
        match self {
            Scenario::Project1 => PROJECT1_SEED,
            Scenario::Project2 => PROJECT2_SEED,
        }
    }

    fn decider(self) -> &'static str {
        match self {
            Scenario::Project1 => "team-a",
            Scenario::Project2 => "team-b",
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Scenario> {
        match s {
            "project1" => Ok(Scenario::Project1),
            "project2" => Ok(Scenario::Project2),
            other => Err(Error::InvalidConfig(format!("unknown scenario {other}; expected project1 or project2"))),
        }
    }
}

/// Where demographics come from.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum AdultSource {
    /// The bundled stand-in, bootstrapped to the complete-case Adult size.
    #[default]
    Standin,
    Files(Vec<PathBuf>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOptions {
    pub seed: u64,
    pub n_sub: usize,
    pub nonwhite_frac: f64,
    pub adult: AdultSource,
}

impl ScenarioOptions {
    pub fn new(seed: u64) -> Self {
        ScenarioOptions { seed, n_sub: DEFAULT_N_SUB, nonwhite_frac: DEFAULT_NONWHITE_FRAC, adult: AdultSource::Standin }
    }
}

pub fn build_dataset(scenario: Scenario, opts: &ScenarioOptions) -> Result<GeneratedDataset> {
    let adult = match &opts.adult {
        AdultSource::Standin => sim::standin_adult(sim::ADULT_N, opts.seed)?,
        AdultSource::Files(paths) => sim::load_adult(paths)?,
    };
    let full = sim::generate(&adult, &SimulationConfig::with_seed(opts.seed))?;
    match scenario {
        Scenario::Project1 => sim::make_project1_subsample(&full, opts.seed, opts.nonwhite_frac, opts.n_sub),
        Scenario::Project2 => Ok(full),
    }
}

/// Writes the scenario dataset under the database root and registers a
/// fresh project pointing at it.
pub fn create_project(db: &mut ProjectDatabase, scenario: Scenario, opts: &ScenarioOptions) -> Result<SiftProject> {
    let data = build_dataset(scenario, opts)?;
    let dir = db.root().join("datasets");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join(format!("{}-seed{}.csv", scenario.as_str(), opts.seed));
    data.export(&path)?;
    let path = std::fs::canonicalize(&path)?;
    let mut project = SiftProject::init(scenario.name(), scenario.description(), &path.display().to_string())?;
    project.metadata.insert("seed".into(), opts.seed.to_string());
    project.metadata.insert("scenario".into(), scenario.as_str().into());
    project.data.y = sim::RESPONSE.into();
    project.data.x = data.x_names();
    db.add_project(&project)?;
    Ok(project)
}

/// The decision the scripted team takes at `gate`.
pub fn scripted_decision(scenario: Scenario, gate: &PendingGate) -> Result<HumanDecision> {
    let d = |choice: &str, why: &str| HumanDecision::new(&gate.gate_id, choice, why, scenario.decider());
    let decision = match gate.stage.as_str() {
        stages::VERIFY => d(stages::CONFIRM, "Search hits reviewed against the project goal."),
        stages::IDENTIFY_SENSITIVE => match scenario {
            Scenario::Project1 => d(stages::CONFIRM, "Sensitive features agreed with legal and compliance.")
                .with_selection(sim::SENSITIVE.iter().map(|s| s.to_string()).collect()),
            Scenario::Project2 => d(stages::CONFIRM, "Sensitive features carried over from the earlier project."),
        },
        stages::RISK => d(stages::PROCEED, "Discount eligibility could differ across demographic groups."),
        stages::PREPARE => d(stages::ACCEPT, "Survey labels joined to marketing data."),
        stages::MORE_DATA => d(stages::COLLECT_MORE_DATA, "Run a larger survey before modelling."),
        stages::DROP_PROXY => d(stages::DROP, "Remove features that stand in for sensitive ones."),
        stages::RETRAIN => d(stages::CONTINUE, "Shift judged immaterial."),
        other => return Err(Error::InvalidDecision(format!("no scripted decision for {}/{other}", gate.pipeline))),
    };
    Ok(decision)
}

/// Links verified hits that are earlier builds of the same service as older
/// versions.
pub fn link_predecessors(db: &ProjectDatabase, project: &mut SiftProject) {
    for id in &project.similar_projects {
        if db.get_project(id).is_ok_and(|p| p.name == SVC_NAME) && !project.older_versions.contains(id) {
            project.older_versions.push(id.clone());
        }
    }
}

pub fn drive(engine: &Engine, db: &mut ProjectDatabase, scenario: Scenario, project: &mut SiftProject) -> Result<Vec<AdvanceOutcome>> {
    let mut log = Vec::new();
    loop {
        let outcome = match project.gate.clone() {
            Some(gate) => {
                let decision = scripted_decision(scenario, &gate)?;
                let out = engine.resolve(project, db, &decision)?;
                if gate.pipeline == SiftPipeline::InformationGathering.as_str() && gate.stage == stages::VERIFY {
                    link_predecessors(db, project);
                }
                out
            }
            None => engine.advance(project, db)?,
        };
        db.update_project(project)?;
        let done = matches!(outcome, AdvanceOutcome::Exited { .. });
        log.push(outcome);
        if done {
            return Ok(log);
        }
    }
}

/// Full replay. The second project needs its predecessor in the database,
/// so that one is replayed first when missing.
pub fn run(engine: &Engine, db: &mut ProjectDatabase, scenario: Scenario, opts: &ScenarioOptions) -> Result<SiftProject> {
    if scenario == Scenario::Project2 && !db.projects().any(|p| p.name == SVC_NAME) {
        let first = ScenarioOptions { seed: PROJECT1_SEED, ..opts.clone() };
        run(engine, db, Scenario::Project1, &first)?;
    }
    let mut project = create_project(db, scenario, opts)?;
    drive(engine, db, scenario, &mut project)?;
    Ok(project)
}
