//! Project, data, bias-history and model-history records.
//!
//! The bias history is the per-project fairness ledger. Records are appended
//! with [`SiftProject::add_bias_history_step`] and completed in place with
//! [`SiftProject::insert_bias_history_at`]; neither ever renumbers a step.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;

use chrono::{DateTime, Utc};
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::oversight::{HumanDecision, PendingGate};
use crate::pipeline::{PipelineState, PlanStep};

/// Label written into `sift_pipeline`. "Exit SIFT" marks the closing record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SiftPipeline {
    #[serde(rename = "Information gathering")]
    InformationGathering,
    #[serde(rename = "Pre-model")]
    PreModel,
    #[serde(rename = "Model-involved")]
    ModelInvolved,
    #[serde(rename = "Outcome-involved")]
    OutcomeInvolved,
    #[serde(rename = "Exit SIFT")]
    ExitSift,
}

impl SiftPipeline {
    pub const PIPELINES: [SiftPipeline; 4] = [
        SiftPipeline::InformationGathering,
        SiftPipeline::PreModel,
        SiftPipeline::ModelInvolved,
        SiftPipeline::OutcomeInvolved,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SiftPipeline::InformationGathering => "Information gathering",
            SiftPipeline::PreModel => "Pre-model",
            SiftPipeline::ModelInvolved => "Model-involved",
            SiftPipeline::OutcomeInvolved => "Outcome-involved",
            SiftPipeline::ExitSift => "Exit SIFT",
        }
    }

    pub fn parse(s: &str) -> Option<SiftPipeline> {
        [
            SiftPipeline::InformationGathering,
            SiftPipeline::PreModel,
            SiftPipeline::ModelInvolved,
            SiftPipeline::OutcomeInvolved,
            SiftPipeline::ExitSift,
        ]
        .into_iter()
        .find(|p| p.as_str() == s)
    }
}

impl fmt::Display for SiftPipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Tri-state success flag, exported as "TRUE", "FALSE" or "".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MitigationStatus {
    #[default]
    Unset,
    True,
    False,
}

impl MitigationStatus {
    pub fn from_success(success: bool) -> Self {
        if success {
            MitigationStatus::True
        } else {
            MitigationStatus::False
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            MitigationStatus::Unset => "",
            MitigationStatus::True => "TRUE",
            MitigationStatus::False => "FALSE",
        }
    }
}

impl Serialize for MitigationStatus {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for MitigationStatus {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match String::deserialize(d)?.as_str() {
            "" => Ok(MitigationStatus::Unset),
            "TRUE" => Ok(MitigationStatus::True),
            "FALSE" => Ok(MitigationStatus::False),
            other => Err(serde::de::Error::custom(format!("bad mitigation status {other:?}"))),
        }
    }
}

mod optional_pipeline {
    use super::SiftPipeline;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(p: &Option<SiftPipeline>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(p.map_or("", SiftPipeline::as_str))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<SiftPipeline>, D::Error> {
        let s = String::deserialize(d)?;
        if s.is_empty() {
            return Ok(None);
        }
        SiftPipeline::parse(&s)
            .map(Some)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown pipeline {s:?}")))
    }
}

/// One step of the fairness ledger. Field order is the export order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasHistoryRecord {
    pub step: usize,
    #[serde(with = "optional_pipeline")]
    pub sift_pipeline: Option<SiftPipeline>,
    pub bias_features: Vec<String>,
    pub bias_detection_function: String,
    pub bias_mitigation_function: String,
    pub mitigation_success_status: MitigationStatus,
    pub details: String,
}

impl BiasHistoryRecord {
    pub const FIELDS: [&'static str; 7] = [
        "step",
        "sift_pipeline",
        "bias_features",
        "bias_detection_function",
        "bias_mitigation_function",
        "mitigation_success_status",
        "details",
    ];

    fn set(&mut self, key: &str, value: &Value) -> std::result::Result<(), String> {
        fn text(v: &Value) -> std::result::Result<String, String> {
            match v {
                Value::String(s) => Ok(s.clone()),
                Value::Null => Ok(String::new()),
                other => Err(format!("expected text, got {other}")),
            }
        }
        match key {
            "step" => {
                self.step = v_usize(value)?;
            }
            "sift_pipeline" => {
                let s = text(value)?;
                self.sift_pipeline = if s.is_empty() {
                    None
                } else {
                    Some(SiftPipeline::parse(&s).ok_or_else(|| format!("unknown pipeline {s:?}"))?)
                };
            }
            "bias_features" => {
                self.bias_features = match value {
                    Value::Array(items) => items.iter().map(text).collect::<std::result::Result<_, _>>()?,
                    Value::Null => Vec::new(),
                    Value::String(s) if s.is_empty() => Vec::new(),
                    Value::String(s) => vec![s.clone()],
                    other => return Err(format!("expected list of features, got {other}")),
                };
            }
            "bias_detection_function" => self.bias_detection_function = text(value)?,
            "bias_mitigation_function" => self.bias_mitigation_function = text(value)?,
            "mitigation_success_status" => {
                self.mitigation_success_status = match value {
                    Value::Bool(b) => MitigationStatus::from_success(*b),
                    Value::Null => MitigationStatus::Unset,
                    Value::String(s) => match s.as_str() {
                        "" => MitigationStatus::Unset,
                        "TRUE" => MitigationStatus::True,
                        "FALSE" => MitigationStatus::False,
                        _ => return Err(format!("bad status {s:?}")),
                    },
                    other => return Err(format!("bad status {other}")),
                }
            }
            "details" => self.details = text(value)?,
            _ => unreachable!("caller filters unknown keys"),
        }
        Ok(())
    }
}

fn v_usize(v: &Value) -> std::result::Result<usize, String> {
    v.as_u64().map(|x| x as usize).ok_or_else(|| format!("expected non-negative integer, got {v}"))
}

/// Diagnostic produced when a field update names an unknown key or carries a
/// value of the wrong shape. Updates producing a warning leave the field as is.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerWarning {
    pub key: String,
    pub message: String,
}

impl LedgerWarning {
    fn unknown(key: &str, ledger: &str) -> Self {
        LedgerWarning { key: key.to_string(), message: format!("{key} is not an attribute of {ledger}") }
    }
}

/// Field updates keyed by record field name.
pub type Fields = BTreeMap<String, Value>;

/// Convenience constructor for [`Fields`].
pub fn fields<K: Into<String>, I: IntoIterator<Item = (K, Value)>>(items: I) -> Fields {
    items.into_iter().map(|(k, v)| (k.into(), v)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    Linear {
        feature_names: Vec<String>,
        coefficients: Vec<f64>,
        intercept: f64,
        /// Per-feature standardization applied before the linear predictor;
        /// empty means identity.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        scaling: Vec<Scaling>,
    },
    Opaque {
        blob: Value,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModelInfo {
    pub loss_name: String,
    pub loss_value: f64,
    pub tuning_params: BTreeMap<String, f64>,
    pub model_params: ModelParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfMetric {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelHistoryRecord {
    pub step: usize,
    pub seed: u64,
    pub train_index: Vec<usize>,
    pub test_index: Vec<usize>,
    pub fitted_model: Option<FittedModelInfo>,
    pub perf_metric: Option<PerfMetric>,
    pub is_deployed: bool,
}

impl ModelHistoryRecord {
    pub const FIELDS: [&'static str; 7] =
        ["step", "seed", "train_index", "test_index", "fitted_model", "perf_metric", "is_deployed"];

    fn set(&mut self, key: &str, value: &Value) -> std::result::Result<(), String> {
        fn parse<T: serde::de::DeserializeOwned>(v: &Value) -> std::result::Result<T, String> {
            serde_json::from_value(v.clone()).map_err(|e| e.to_string())
        }
        match key {
            "step" => self.step = v_usize(value)?,
            "seed" => self.seed = value.as_u64().ok_or_else(|| format!("bad seed {value}"))?,
            "train_index" => self.train_index = parse(value)?,
            "test_index" => self.test_index = parse(value)?,
            "fitted_model" => {
                let m: Option<FittedModelInfo> = parse(value)?;
                if m.as_ref().is_some_and(|m| !m.loss_value.is_finite()) {
                    return Err("loss_value must be finite".into());
                }
                self.fitted_model = m;
            }
            "perf_metric" => self.perf_metric = parse(value)?,
            "is_deployed" => self.is_deployed = value.as_bool().ok_or_else(|| format!("bad flag {value}"))?,
            _ => unreachable!("caller filters unknown keys"),
        }
        Ok(())
    }

    fn indices_disjoint(&self) -> bool {
        let train: BTreeSet<_> = self.train_index.iter().collect();
        self.test_index.iter().all(|i| !train.contains(i))
    }
}

/// Descriptors of sensitive features by category, e.g.
/// `{"proxy_features": {"income": ["education", "race"]}}`.
pub type SensSummary = BTreeMap<String, BTreeMap<String, Vec<String>>>;

pub const SPARSE_GROUPS: &str = "sparse_groups";
pub const PROXY_FEATURES: &str = "proxy_features";
pub const MARGINALIZED_GROUPS: &str = "marginalized_groups";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SiftData {
    /// Locator of the dataset the pipelines read; never inlined.
    pub raw_data: String,
    pub data_definitions: BTreeMap<String, String>,
    pub y: String,
    #[serde(rename = "X")]
    pub x: Vec<String>,
    pub outcome: Option<String>,
    pub sens_features: Vec<String>,
    pub sens_features_summary: SensSummary,
}

impl SiftData {
    pub fn set_sens_features_summary(&mut self, category: &str, feature: &str, descriptors: Vec<String>) -> Result<()> {
        if !self.sens_features.iter().any(|f| f == feature) {
            return Err(Error::UnknownSensitiveFeature(feature.to_string()));
        }
        self.sens_features_summary
            .entry(category.to_string())
            .or_default()
            .insert(feature.to_string(), descriptors);
        Ok(())
    }

    /// Checks the schema invariants against a loaded table.
    pub fn validate(&self, table: &crate::table::Table) -> Result<()> {
        if self.x.contains(&self.y) {
            return Err(Error::SchemaError(format!("response {} is also a predictor", self.y)));
        }
        for col in std::iter::once(&self.y).chain(&self.x).chain(&self.sens_features).chain(&self.outcome) {
            if !table.has(col) {
                return Err(Error::UnknownColumn(col.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ModelFlow {
    #[default]
    Standard,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ProjectStatus {
    #[default]
    Active,
    Terminated,
    ScheduledForDeployment,
    Deployed,
}

/// Top-level project record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiftProject {
    pub name: String,
    pub description: String,
    pub data_location: String,
    pub project_id: String,
    pub data: SiftData,
    pub bias_history: Vec<BiasHistoryRecord>,
    pub model_history: Vec<ModelHistoryRecord>,
    pub metadata: BTreeMap<String, String>,
    pub model_flow: ModelFlow,
    pub similar_projects: Vec<String>,
    pub older_versions: Vec<String>,
    pub status: ProjectStatus,
    /// Days a terminated project is kept before purging.
    pub timeout: Option<u32>,
    pub terminated_at: Option<DateTime<Utc>>,
    #[serde(default)]
    pub custom_plan: Option<Vec<PlanStep>>,
    #[serde(default)]
    pub pipeline: Option<PipelineState>,
    #[serde(default)]
    pub gate: Option<PendingGate>,
    #[serde(default)]
    pub decisions: Vec<HumanDecision>,
}

impl SiftProject {
    pub fn init(name: &str, description: &str, data_location: &str) -> Result<SiftProject> {
        if name.trim().is_empty() {
            return Err(Error::InvalidName);
        }
        validate_locator(data_location)?;
        let suffix: u32 = rand::rng().random();
        Ok(SiftProject {
            name: name.to_string(),
            description: description.to_string(),
            data_location: data_location.to_string(),
            project_id: format!("{}-{suffix:08x}", slug(name)),
            data: SiftData { raw_data: data_location.to_string(), ..SiftData::default() },
            bias_history: Vec::new(),
            model_history: Vec::new(),
            metadata: BTreeMap::new(),
            model_flow: ModelFlow::Standard,
            similar_projects: Vec::new(),
            older_versions: Vec::new(),
            status: ProjectStatus::Active,
            timeout: None,
            terminated_at: None,
            custom_plan: None,
            pipeline: None,
            gate: None,
            decisions: Vec::new(),
        })
    }

    pub fn latest_step(&self) -> Result<usize> {
        self.bias_history.last().map(|r| r.step).ok_or(Error::EmptyHistory)
    }

    /// Overwrites fields of an existing record. Unknown keys produce a warning
    /// and no change; the record count and numbering never change.
    pub fn insert_bias_history_at(&mut self, insert_at: i64, fields: &Fields) -> Result<Vec<LedgerWarning>> {
        if insert_at < 0 {
            return Err(Error::NegativeIndex(insert_at));
        }
        let latest = self.latest_step()?;
        if insert_at as usize > latest {
            return Err(Error::OutOfRange { insert_at, latest });
        }
        let record = &mut self.bias_history[insert_at as usize];
        let mut warnings = Vec::new();
        for (key, value) in fields {
            if key == "step" {
                // renumbering would break the 0..n sequence
                warnings.push(LedgerWarning { key: key.clone(), message: "step cannot be overwritten".into() });
            } else if BiasHistoryRecord::FIELDS.contains(&key.as_str()) {
                if let Err(message) = record.set(key, value) {
                    warnings.push(LedgerWarning { key: key.clone(), message });
                }
            } else {
                warnings.push(LedgerWarning::unknown(key, "bias history"));
            }
        }
        Ok(warnings)
    }

    /// Appends a blank record numbered after the latest one and fills it from
    /// `fields`. A supplied `step` key is ignored.
    pub fn add_bias_history_step(&mut self, fields: &Fields) -> (usize, Vec<LedgerWarning>) {
        let step = self.bias_history.last().map_or(0, |r| r.step + 1);
        let mut record = BiasHistoryRecord { step, ..BiasHistoryRecord::default() };
        let mut warnings = Vec::new();
        for (key, value) in fields {
            if key == "step" {
                continue;
            }
            if BiasHistoryRecord::FIELDS.contains(&key.as_str()) {
                if let Err(message) = record.set(key, value) {
                    warnings.push(LedgerWarning { key: key.clone(), message });
                }
            } else {
                warnings.push(LedgerWarning::unknown(key, "bias history"));
            }
        }
        self.bias_history.push(record);
        (step, warnings)
    }

    pub fn add_model_history_step(&mut self, fields: &Fields) -> (usize, Vec<LedgerWarning>) {
        let step = self.model_history.last().map_or(0, |r| r.step + 1);
        let mut record = ModelHistoryRecord { step, ..ModelHistoryRecord::default() };
        let mut warnings = Vec::new();
        for (key, value) in fields {
            if key == "step" {
                continue;
            }
            if ModelHistoryRecord::FIELDS.contains(&key.as_str()) {
                if let Err(message) = record.set(key, value) {
                    warnings.push(LedgerWarning { key: key.clone(), message });
                }
            } else {
                warnings.push(LedgerWarning::unknown(key, "model history"));
            }
        }
        if !record.indices_disjoint() {
            warnings.push(LedgerWarning {
                key: "test_index".into(),
                message: "train_index and test_index overlap; both cleared".into(),
            });
            record.train_index.clear();
            record.test_index.clear();
        }
        self.model_history.push(record);
        (step, warnings)
    }

    /// Typed append used by the pipeline engine.
    pub fn push_bias_record(&mut self, mut record: BiasHistoryRecord) -> usize {
        record.step = self.bias_history.last().map_or(0, |r| r.step + 1);
        let step = record.step;
        self.bias_history.push(record);
        step
    }

    pub fn push_model_record(&mut self, mut record: ModelHistoryRecord) -> usize {
        record.step = self.model_history.last().map_or(0, |r| r.step + 1);
        let step = record.step;
        self.model_history.push(record);
        step
    }

    pub fn export_bias_history(&self) -> String {
        export_bias_history(&self.bias_history)
    }

    /// Filesystem path behind `data_location`-style locators.
    pub fn resolve_locator(locator: &str) -> Result<PathBuf> {
        validate_locator(locator)?;
        if let Some(rest) = locator.strip_prefix("file://") {
            return Ok(PathBuf::from(rest));
        }
        if locator.contains("://") {
            return Err(Error::InvalidLocator(format!("{locator} (only file locators can be read)")));
        }
        Ok(PathBuf::from(locator))
    }

    pub fn is_deployed_at_start(&self) -> bool {
        self.model_history.first().is_some_and(|r| r.is_deployed)
    }
}

#[derive(Serialize, Deserialize)]
struct BiasHistoryDocument {
    bias_history: Vec<BiasHistoryRecord>,
}

/// `{"bias_history": [...]}` with all seven fields per record.
pub fn export_bias_history(records: &[BiasHistoryRecord]) -> String {
    let doc = BiasHistoryDocument { bias_history: records.to_vec() };
    serde_json::to_string_pretty(&doc).expect("ledger serialization cannot fail")
}

pub fn parse_bias_history(text: &str) -> Result<Vec<BiasHistoryRecord>> {
    let doc: BiasHistoryDocument = serde_json::from_str(text)?;
    Ok(doc.bias_history)
}

fn slug(name: &str) -> String {
    let s: String = name
        .trim()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '-' })
        .collect();
    s.trim_matches('-').to_string()
}

/// Accepts `scheme://rest` URLs and plain filesystem paths.
pub fn validate_locator(locator: &str) -> Result<()> {
    let bad = || Error::InvalidLocator(locator.to_string());
    if locator.trim().is_empty() || locator.chars().any(char::is_control) {
        return Err(bad());
    }
    if let Some((scheme, rest)) = locator.split_once("://") {
        let scheme_ok = !scheme.is_empty()
            && scheme.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
            && scheme.chars().all(|c| c.is_ascii_alphanumeric() || "+-.".contains(c));
        if !scheme_ok || rest.is_empty() {
            return Err(bad());
        }
    }
    Ok(())
}
