//! The SIFT pipelines as a resumable state machine.

pub mod engine;
pub mod flow;
pub mod stages;

use serde::{Deserialize, Serialize};

use crate::db::SimilarityHit;
use crate::mitigation::MitigationStage;
use crate::oversight::PendingGate;
use crate::project::{ProjectStatus, SiftPipeline};

pub use engine::{identify_next_pipeline, Engine};
pub use flow::{plan_from_history, run_custom_flow, run_standard_flow, validate_plan, FlowInput, FlowOutput};
pub use stages::{StageDescriptor, STAGES};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub stage: MitigationStage,
    pub strategy: String,
}

/// Where a project is in its pipelines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineState {
    pub pipeline: SiftPipeline,
    /// Index of the next stage to run within `pipeline`.
    pub stage_index: usize,
    #[serde(default)]
    pub hits: Vec<SimilarityHit>,
    /// `"<pipeline>/<stage>"` that produced each bias-history record, in
    /// step order.
    #[serde(default)]
    pub origins: Vec<String>,
    #[serde(default)]
    pub retrain_count: u32,
}

impl PipelineState {
    pub fn start() -> PipelineState {
        PipelineState {
            pipeline: SiftPipeline::InformationGathering,
            stage_index: 0,
            hits: Vec::new(),
            origins: Vec::new(),
            retrain_count: 0,
        }
    }

    pub fn current(&self) -> Option<&'static StageDescriptor> {
        stages::descriptor(self.pipeline, self.stage_index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum AdvanceOutcome {
    Advanced { pipeline: String, stage: String },
    Blocked { gate: PendingGate },
    Exited { status: ProjectStatus },
}
