//! The fixed stage table of the four pipelines.

use serde::Serialize;

use crate::project::SiftPipeline;

pub const CONFIRM: &str = "confirm";
pub const REJECT: &str = "reject";
pub const ACCEPT: &str = "accept";
pub const PROCEED: &str = "proceed";
pub const TERMINATE: &str = "terminate";
pub const EXIT_AND_REVISE: &str = "exit-and-revise";
pub const COLLECT_MORE_DATA: &str = "collect-more-data";
pub const DROP: &str = "drop";
pub const KEEP: &str = "keep";
pub const EXIT_AND_RETRAIN: &str = "exit-and-retrain";
pub const CONTINUE: &str = "continue";

pub const RISK_OPTIONS: &[&str] = &[PROCEED, TERMINATE, EXIT_AND_REVISE];

pub const SEARCH: &str = "Search in Pdb for similar projects";
pub const VERIFY: &str = "Verify similarity";
pub const IDENTIFY_SENSITIVE: &str = "Identify sensitive categories";
pub const RISK: &str = "Risk assessment";
pub const IDENTIFY_NEXT: &str = "Identify next pipeline";
pub const PREPARE: &str = "Prepare data";
pub const SPARSE: &str = "Detect sparse group";
pub const MORE_DATA: &str = "Decide if more data is needed";
pub const PROXY: &str = "Detect proxy features";
pub const DROP_PROXY: &str = "Decide whether to drop proxy features";
pub const MARGINALIZED: &str = "Detect marginalized groups";
pub const PRE_DETECTION: &str = "Pre-processing detection";
pub const PRE_MITIGATION: &str = "Pre-processing mitigation";
pub const TRAIN: &str = "Train model";
pub const POST_DETECTION: &str = "Post-processing detection";
pub const IN_MITIGATION: &str = "In-processing mitigation";
pub const POST_MITIGATION: &str = "Post-processing mitigation";
pub const SHIFT: &str = "Detect covariate shift";
pub const RETRAIN: &str = "Decide if retraining needed";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StageDescriptor {
    pub pipeline: SiftPipeline,
    pub stage: &'static str,
    pub human_gate: bool,
    pub writes_bias_history: bool,
    pub handler: &'static str,
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    pub gate_options: &'static [&'static str],
}

const fn s(
    pipeline: SiftPipeline,
    stage: &'static str,
    human_gate: bool,
    writes_bias_history: bool,
    handler: &'static str,
    gate_options: &'static [&'static str],
) -> StageDescriptor {
    StageDescriptor { pipeline, stage, human_gate, writes_bias_history, handler, gate_options }
}

use SiftPipeline::{InformationGathering as IG, ModelInvolved as MI, OutcomeInvolved as OI, PreModel as PM};

pub static STAGES: &[StageDescriptor] = &[
    s(IG, SEARCH, false, false, "searchSimilar", &[]),
    s(IG, VERIFY, true, false, "verifySimilarity", &[CONFIRM, REJECT]),
    s(IG, IDENTIFY_SENSITIVE, true, true, "identifySensitiveCategories", &[CONFIRM]),
    s(IG, RISK, true, true, "riskAssessment", RISK_OPTIONS),
    s(IG, IDENTIFY_NEXT, false, false, "identifyNextPipeline", &[]),
    s(PM, PREPARE, true, false, "prepareData", &[ACCEPT]),
    s(PM, SPARSE, false, true, "computeSampProportion", &[]),
    s(PM, MORE_DATA, true, false, "decideMoreData", &[COLLECT_MORE_DATA, PROCEED, TERMINATE]),
    s(PM, PROXY, false, true, "computeChiSqTest", &[]),
    s(PM, DROP_PROXY, true, true, "decideDropProxy", &[DROP, KEEP]),
    s(PM, MARGINALIZED, false, true, "computeDispImpact", &[]),
    s(PM, RISK, true, true, "riskAssessment", RISK_OPTIONS),
    s(MI, PRE_DETECTION, false, true, "computeDispImpact", &[]),
    s(MI, PRE_MITIGATION, false, true, "preProcessingMitigation", &[]),
    s(MI, TRAIN, false, false, "trainModel", &[]),
    s(MI, POST_DETECTION, false, true, "computeDispImpact", &[]),
    s(MI, IN_MITIGATION, false, true, "inProcessingMitigation", &[]),
    s(MI, POST_DETECTION, false, true, "computeDispImpact", &[]),
    s(MI, POST_MITIGATION, false, true, "postProcessingMitigation", &[]),
    s(MI, RISK, true, true, "riskAssessment", RISK_OPTIONS),
    s(OI, SHIFT, false, true, "detectCovariateShift", &[]),
    s(OI, RETRAIN, true, false, "decideRetraining", &[EXIT_AND_RETRAIN, CONTINUE]),
    s(OI, POST_DETECTION, false, true, "computeDispImpact", &[]),
    s(OI, POST_MITIGATION, false, true, "postProcessingMitigation", &[]),
    s(OI, RISK, true, true, "riskAssessment", RISK_OPTIONS),
];

/// Stages of one pipeline in execution order.
pub fn stages_of(pipeline: SiftPipeline) -> Vec<&'static StageDescriptor> {
    STAGES.iter().filter(|d| d.pipeline == pipeline).collect()
}

pub fn descriptor(pipeline: SiftPipeline, index: usize) -> Option<&'static StageDescriptor> {
    stages_of(pipeline).get(index).copied()
}

/// Position of the first stage with this name in the pipeline.
pub fn index_of(pipeline: SiftPipeline, stage: &str) -> Option<usize> {
    stages_of(pipeline).iter().position(|d| d.stage == stage)
}

pub fn find(pipeline: &str, stage: &str) -> Option<&'static StageDescriptor> {
    STAGES.iter().find(|d| d.pipeline.as_str() == pipeline && d.stage == stage)
}

pub fn is_canonical(pipeline: &str, stage: &str) -> bool {
    find(pipeline, stage).is_some()
}

/// The stage table as JSON for clients.
pub fn export_json() -> String {
    serde_json::to_string_pretty(STAGES).expect("stage table serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_shape() {
        assert_eq!(stages_of(IG).len(), 5);
        assert_eq!(stages_of(PM).len(), 7);
        assert_eq!(stages_of(MI).len(), 8);
        assert_eq!(stages_of(OI).len(), 5);
        for d in STAGES {
            assert_eq!(d.human_gate, !d.gate_options.is_empty(), "{}", d.stage);
        }
        let flags: Vec<(bool, bool)> = stages_of(PM).iter().map(|d| (d.human_gate, d.writes_bias_history)).collect();
        assert_eq!(
            flags,
            [(true, false), (false, true), (true, false), (false, true), (true, true), (false, true), (true, true)]
        );
    }

    #[test]
    fn export_lists_every_stage() {
        let v: serde_json::Value = serde_json::from_str(&export_json()).unwrap();
        assert_eq!(v.as_array().unwrap().len(), STAGES.len());
        assert_eq!(v[1]["gate_options"], serde_json::json!(["confirm", "reject"]));
    }
}
