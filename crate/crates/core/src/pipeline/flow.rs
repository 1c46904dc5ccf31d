//! Model-involved flows: standard (detection-driven) and custom (plan-driven).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::{FlowConfig, StageKey};
use crate::error::{Error, Result};
use crate::lab::{self, DesignMatrix, SplitSpec};
use crate::metrics::{self, DetectionReport, DISP_IMPACT};
use crate::mitigation::{self, Artifact, Fold, MitigationInput, MitigationResult, MitigationStage};
use crate::project::{
    BiasHistoryRecord, FittedModelInfo, MitigationStatus, ModelHistoryRecord, PerfMetric, SiftPipeline,
};
use crate::table::{Categorical, Table};

use super::stages;
use super::PlanStep;

pub const NO_BIAS: &str = "No bias detected in training data or model outcome.";
pub const PRE_DETAILS: &str = "Bias detected in training data. Pre-processing strategy implemented.";
pub const IN_DETAILS: &str = "Bias detected in model outcome. In-processing strategy implemented.";
pub const POST_AFTER_IN_DETAILS: &str = "Bias remains in model outcome. Post-processing strategy implemented.";
pub const POST_DETAILS: &str = "Bias detected in model outcome. Post-processing strategy implemented.";
pub const UNMITIGATED_DETAILS: &str = "Bias detected in model outcome. No mitigation strategy configured.";

/// What a flow needs from the project.
#[derive(Debug, Clone, Copy)]
pub struct FlowInput<'a> {
    pub table: &'a Table,
    pub x: &'a [String],
    pub y: &'a str,
    pub sens: &'a [String],
    pub seed: u64,
    pub config: &'a FlowConfig,
}

/// A ledger record together with the stage that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagedRecord {
    pub stage: String,
    pub record: BiasHistoryRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowOutput {
    pub records: Vec<StagedRecord>,
    pub models: Vec<ModelHistoryRecord>,
    pub reports: Vec<DetectionReport>,
    pub mitigations: Vec<MitigationResult>,
    /// Test-fold disparate impact of the first trained model.
    pub initial_di: BTreeMap<String, f64>,
    pub initial_accuracy: f64,
    /// Test-fold disparate impact of the outcomes the flow ends with.
    pub final_di: BTreeMap<String, f64>,
    pub final_accuracy: f64,
    pub test_index: Vec<usize>,
    pub final_outcomes: Vec<bool>,
}

struct Prepared<'a> {
    train_idx: Vec<usize>,
    test_idx: Vec<usize>,
    x_train: DesignMatrix,
    x_test: DesignMatrix,
    y_train: Vec<bool>,
    y_test: Vec<bool>,
    train_table: Table,
    test_table: Table,
    input: FlowInput<'a>,
}

impl<'a> Prepared<'a> {
    fn new(input: FlowInput<'a>) -> Result<Self> {
        if input.sens.is_empty() {
            return Err(Error::InvalidConfig("model flow needs at least one sensitive feature".into()));
        }
        let n = input.table.n_rows();
        let (train_idx, test_idx) =
            lab::split_train_test(n, SplitSpec { seed: input.seed, test_fraction: input.config.test_fraction })?;
        let x = DesignMatrix::from_table(input.table, input.x)?;
        let y = input.table.column(input.y)?.binary(input.y, &input.config.positive_label)?;
        let pick = |idx: &[usize]| idx.iter().map(|&i| y[i]).collect::<Vec<bool>>();
        Ok(Prepared {
            x_train: x.select_rows(&train_idx),
            x_test: x.select_rows(&test_idx),
            y_train: pick(&train_idx),
            y_test: pick(&test_idx),
            train_table: input.table.select_rows(&train_idx),
            test_table: input.table.select_rows(&test_idx),
            train_idx,
            test_idx,
            input,
        })
    }

    fn groups(table: &Table, features: &[String]) -> Result<Vec<(String, Categorical)>> {
        features.iter().map(|f| Ok((f.clone(), table.categorical(f)?))).collect()
    }

    fn model_record(&self, model: &FittedModelInfo, accuracy: f64) -> ModelHistoryRecord {
        ModelHistoryRecord {
            step: 0,
            seed: self.input.seed,
            train_index: self.train_idx.clone(),
            test_index: self.test_idx.clone(),
            fitted_model: Some(model.clone()),
            perf_metric: Some(PerfMetric { name: "accuracy".into(), value: accuracy }),
            is_deployed: false,
        }
    }

    fn outcome_report(&self, outcome: &[bool]) -> Result<DetectionReport> {
        let cfg = self.input.config;
        metrics::disp_impact_report(outcome, &self.test_table, self.input.sens, cfg.fairness_range, &cfg.privileged)
    }

    fn mitigation_input<'b>(
        &'b self,
        train_groups: &'b [(String, Categorical)],
        test_groups: &'b [(String, Categorical)],
        weights: Option<&'b [f64]>,
        scores: Option<&'b [f64]>,
    ) -> MitigationInput<'b> {
        let cfg = self.input.config;
        MitigationInput {
            train: Fold { x: &self.x_train, y: &self.y_train, groups: train_groups },
            train_weights: weights,
            test: Fold { x: &self.x_test, y: &self.y_test, groups: test_groups },
            test_scores: scores,
            range: cfg.fairness_range,
            train_config: &cfg.train,
            schedule: &cfg.lambda_schedule,
        }
    }

    fn record(&self, details: &str, mitigation: Option<&MitigationResult>) -> BiasHistoryRecord {
        BiasHistoryRecord {
            step: 0,
            sift_pipeline: Some(SiftPipeline::ModelInvolved),
            bias_features: self.input.sens.to_vec(),
            bias_detection_function: DISP_IMPACT.into(),
            bias_mitigation_function: mitigation.map(|m| m.function_name.clone()).unwrap_or_default(),
            mitigation_success_status: mitigation.map_or(MitigationStatus::Unset, |m| MitigationStatus::from_success(m.success)),
            details: details.into(),
        }
    }
}

fn di_map(report: &DetectionReport) -> BTreeMap<String, f64> {
    report.per_feature.iter().map(|(k, v)| (k.clone(), v.value)).collect()
}

fn in_range(report: &DetectionReport) -> bool {
    !report.any_flagged()
}

struct State {
    weights: Option<Vec<f64>>,
    model: Option<FittedModelInfo>,
    scores: Vec<f64>,
    outcomes: Vec<bool>,
    out: FlowOutput,
}

impl State {
    fn new(test_index: Vec<usize>) -> State {
        State {
            weights: None,
            model: None,
            scores: Vec::new(),
            outcomes: Vec::new(),
            out: FlowOutput {
                records: Vec::new(),
                models: Vec::new(),
                reports: Vec::new(),
                mitigations: Vec::new(),
                initial_di: BTreeMap::new(),
                initial_accuracy: f64::NAN,
                final_di: BTreeMap::new(),
                final_accuracy: f64::NAN,
                test_index,
                final_outcomes: Vec::new(),
            },
        }
    }

    fn push(&mut self, stage: &str, record: BiasHistoryRecord) {
        self.out.records.push(StagedRecord { stage: stage.into(), record });
    }

    /// Installs a model, scores the test fold and re-checks disparate impact.
    fn adopt_model(&mut self, p: &Prepared<'_>, model: FittedModelInfo) -> Result<DetectionReport> {
        let scores = lab::predict(&model, &p.x_test)?;
        let outcomes = lab::classify(&scores, 0.5);
        let acc = lab::accuracy(&outcomes, &p.y_test)?;
        self.out.models.push(p.model_record(&model, acc));
        let report = p.outcome_report(&outcomes)?;
        if self.out.initial_di.is_empty() {
            self.out.initial_di = di_map(&report);
            self.out.initial_accuracy = acc;
        }
        self.out.final_di = di_map(&report);
        self.out.final_accuracy = acc;
        self.model = Some(model);
        self.scores = scores;
        self.outcomes = outcomes;
        self.out.reports.push(report.clone());
        Ok(report)
    }

    fn adopt_outcomes(&mut self, p: &Prepared<'_>, outcomes: Vec<bool>) -> Result<DetectionReport> {
        let report = p.outcome_report(&outcomes)?;
        self.out.final_di = di_map(&report);
        self.out.final_accuracy = lab::accuracy(&outcomes, &p.y_test)?;
        self.outcomes = outcomes;
        self.out.reports.push(report.clone());
        Ok(report)
    }

    fn train(&mut self, p: &Prepared<'_>) -> Result<DetectionReport> {
        let model = lab::train_logreg(&p.x_train, &p.y_train, self.weights.as_deref(), &p.input.config.train)?;
        self.adopt_model(p, model)
    }

    fn finish(mut self) -> FlowOutput {
        self.out.final_outcomes = self.outcomes;
        self.out
    }
}

fn model_of(result: &MitigationResult) -> Result<FittedModelInfo> {
    match &result.artifact {
        Artifact::Model(m) => Ok((**m).clone()),
        _ => Err(Error::InvalidConfig(format!("{} did not produce a model", result.function_name))),
    }
}

/// Detection-driven flow: each mitigation runs only when the preceding check
/// finds bias, and only the episodes that ran are recorded.
pub fn run_standard_flow(input: FlowInput<'_>) -> Result<FlowOutput> {
    let plan = input.config.standard_plan()?;
    let p = Prepared::new(input)?;
    let mut st = State::new(p.test_idx.clone());
    let registry = mitigation::registry();
    let all_train = Prepared::groups(&p.train_table, input.sens)?;
    let all_test = Prepared::groups(&p.test_table, input.sens)?;

    let cfg = input.config;
    let pre_report =
        metrics::disp_impact_report(&p.y_train, &p.train_table, input.sens, cfg.fairness_range, &cfg.privileged)?;
    st.out.reports.push(pre_report.clone());
    let mut pre_record = None;
    if pre_report.any_flagged() {
        if let Some(name) = plan.get(&StageKey::Pre) {
            let flagged = pre_report.flagged_features();
            let train_groups = Prepared::groups(&p.train_table, &flagged)?;
            let test_groups = Prepared::groups(&p.test_table, &flagged)?;
            let result = registry.lookup(name)?.apply(&p.mitigation_input(&train_groups, &test_groups, None, None))?;
            if let Artifact::Weights(w) = &result.artifact {
                st.weights = Some(w.clone());
            }
            pre_record = Some(result);
        }
    }

    let mut report = st.train(&p)?;
    if let Some(mut result) = pre_record {
        // judged by the model trained on the reweighed data
        result.success = in_range(&report);
        result.per_feature = di_map(&report);
        result.post_metric = mitigation::worst_di(&result.per_feature);
        st.push(stages::PRE_MITIGATION, p.record(PRE_DETAILS, Some(&result)));
        st.out.mitigations.push(result);
    }

    let mut in_ran = false;
    if !in_range(&report) {
        if let Some(name) = plan.get(&StageKey::In) {
            let input = p.mitigation_input(&all_train, &all_test, st.weights.as_deref(), None);
            let result = registry.lookup(name)?.apply(&input)?;
            report = st.adopt_model(&p, model_of(&result)?)?;
            let mut result = result;
            result.success = in_range(&report);
            st.push(stages::IN_MITIGATION, p.record(IN_DETAILS, Some(&result)));
            st.out.mitigations.push(result);
            in_ran = true;
        }
    }

    if !in_range(&report) {
        if let Some(name) = plan.get(&StageKey::Post) {
            let scores = st.scores.clone();
            let input = p.mitigation_input(&all_train, &all_test, None, Some(&scores));
            let result = registry.lookup(name)?.apply(&input)?;
            let Artifact::Outcomes(outcomes) = &result.artifact else {
                return Err(Error::InvalidConfig(format!("{name} did not produce outcomes")));
            };
            st.adopt_outcomes(&p, outcomes.clone())?;
            let details = if in_ran { POST_AFTER_IN_DETAILS } else { POST_DETAILS };
            st.push(stages::POST_MITIGATION, p.record(details, Some(&result)));
            st.out.mitigations.push(result);
        } else if !in_ran {
            st.push(stages::POST_DETECTION, p.record(UNMITIGATED_DETAILS, None));
        }
    }

    if st.out.records.is_empty() {
        st.push(stages::POST_DETECTION, p.record(NO_BIAS, None));
    }
    Ok(st.finish())
}

/// Checks every step of a plan before anything runs.
pub fn validate_plan(plan: &[PlanStep]) -> Result<()> {
    if plan.is_empty() {
        return Err(Error::InvalidConfig("custom plan is empty".into()));
    }
    for step in plan {
        let strategy = mitigation::registry().lookup(&step.strategy)?;
        if strategy.stage() != step.stage {
            return Err(Error::InvalidConfig(format!(
                "{} is a {:?}-processing strategy, not {:?}",
                step.strategy,
                strategy.stage(),
                step.stage
            )));
        }
    }
    Ok(())
}

fn custom_details(stage: MitigationStage) -> &'static str {
    match stage {
        MitigationStage::Pre => "Custom flow: pre-processing strategy implemented.",
        MitigationStage::In => "Custom flow: in-processing strategy implemented.",
        MitigationStage::Post => "Custom flow: post-processing strategy implemented.",
    }
}

/// Runs the plan verbatim, one ledger record per step.
pub fn run_custom_flow(input: FlowInput<'_>, plan: &[PlanStep]) -> Result<FlowOutput> {
    validate_plan(plan)?;
    let p = Prepared::new(input)?;
    let mut st = State::new(p.test_idx.clone());
    let registry = mitigation::registry();
    let train_groups = Prepared::groups(&p.train_table, input.sens)?;
    let test_groups = Prepared::groups(&p.test_table, input.sens)?;

    for step in plan {
        let strategy = registry.lookup(&step.strategy)?;
        let (stage_name, result) = match step.stage {
            MitigationStage::Pre => {
                let result = strategy.apply(&p.mitigation_input(&train_groups, &test_groups, None, None))?;
                if let Artifact::Weights(w) = &result.artifact {
                    st.weights = Some(w.clone());
                }
                (stages::PRE_MITIGATION, result)
            }
            MitigationStage::In => {
                let input = p.mitigation_input(&train_groups, &test_groups, st.weights.as_deref(), None);
                let mut result = strategy.apply(&input)?;
                let report = st.adopt_model(&p, model_of(&result)?)?;
                result.success = in_range(&report);
                (stages::IN_MITIGATION, result)
            }
            MitigationStage::Post => {
                if st.model.is_none() {
                    st.train(&p)?;
                }
                let scores = st.scores.clone();
                let result =
                    strategy.apply(&p.mitigation_input(&train_groups, &test_groups, None, Some(&scores)))?;
                if let Artifact::Outcomes(o) = &result.artifact {
                    st.adopt_outcomes(&p, o.clone())?;
                }
                (stages::POST_MITIGATION, result)
            }
        };
        st.push(stage_name, p.record(custom_details(step.stage), Some(&result)));
        st.out.mitigations.push(result);
    }
    if st.model.is_none() {
        st.train(&p)?;
    }
    Ok(st.finish())
}

/// Reconstructs a custom plan from the Model-involved mitigations recorded in
/// another project's ledger.
pub fn plan_from_history(records: &[BiasHistoryRecord]) -> Result<Vec<PlanStep>> {
    records
        .iter()
        .filter(|r| r.sift_pipeline == Some(SiftPipeline::ModelInvolved) && !r.bias_mitigation_function.is_empty())
        .map(|r| {
            let s = mitigation::registry().lookup(&r.bias_mitigation_function)?;
            Ok(PlanStep { stage: s.stage(), strategy: r.bias_mitigation_function.clone() })
        })
        .collect()
}
