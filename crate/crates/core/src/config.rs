//! Company-level flow configuration, read from TOML.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lab::TrainConfig;
use crate::metrics::{FairnessRange, DISP_IMPACT};
use crate::mitigation::{self, MitigationStage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub fairness_range: FairnessRange,
    pub sparse_min_prop: f64,
    pub proxy_alpha: f64,
    pub proxy_v_min: f64,
    pub detection_metric: String,
    /// Strategy per mitigation stage of the standard flow, in pre/in/post order.
    pub mitigation_sequence: Vec<String>,
    /// Days a terminated project is retained; absent means forever.
    pub terminated_timeout_days: Option<u32>,
    pub shift_alpha: f64,
    pub test_fraction: f64,
    /// Label of the favourable outcome in the response column.
    pub positive_label: String,
    /// Optional privileged group per sensitive feature; switches disparate
    /// impact from min/max to unprivileged/privileged.
    pub privileged: BTreeMap<String, String>,
    pub lambda_schedule: Vec<f64>,
    pub train: TrainConfig,
    pub search_k: usize,
    pub search_min_score: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            fairness_range: FairnessRange::default(),
            sparse_min_prop: 0.10,
            proxy_alpha: 0.01,
            proxy_v_min: 0.5,
            detection_metric: DISP_IMPACT.to_string(),
            mitigation_sequence: vec![
                mitigation::REWEIGHING.into(),
                mitigation::FAIR_PENALTY_LOGREG.into(),
                mitigation::GROUP_THRESHOLDS.into(),
            ],
            terminated_timeout_days: Some(365),
            shift_alpha: 0.05,
            test_fraction: 0.5,
            positive_label: "1".into(),
            privileged: BTreeMap::new(),
            lambda_schedule: mitigation::default_schedule(),
            train: TrainConfig::default(),
            search_k: 10,
            search_min_score: 0.30,
        }
    }
}

impl FlowConfig {
    pub fn from_toml(text: &str) -> Result<FlowConfig> {
        let cfg: FlowConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<FlowConfig> {
        if !path.exists() {
            return Err(Error::FileNotFound(path.to_path_buf()));
        }
        FlowConfig::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        FairnessRange::new(self.fairness_range.lower, self.fairness_range.upper)?;
        if !(0.0..1.0).contains(&self.sparse_min_prop) {
            return bad(format!("sparse_min_prop {}", self.sparse_min_prop));
        }
        if !(self.proxy_alpha > 0.0 && self.proxy_alpha < 1.0) {
            return bad(format!("proxy_alpha {}", self.proxy_alpha));
        }
        if !(0.0..=1.0).contains(&self.proxy_v_min) {
            return bad(format!("proxy_v_min {}", self.proxy_v_min));
        }
        if !(self.shift_alpha > 0.0 && self.shift_alpha < 1.0) {
            return bad(format!("shift_alpha {}", self.shift_alpha));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::BadFraction(self.test_fraction));
        }
        if self.detection_metric != DISP_IMPACT {
            return bad(format!("unsupported detection metric {}", self.detection_metric));
        }
        if self.lambda_schedule.is_empty() || self.lambda_schedule.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return bad("lambda_schedule must be non-empty and non-negative".into());
        }
        self.standard_plan()?;
        Ok(())
    }

    /// Resolves `mitigation_sequence` into one optional strategy per stage.
    pub fn standard_plan(&self) -> Result<BTreeMap<StageKey, String>> {
        let mut plan = BTreeMap::new();
        let mut last = None;
        for name in &self.mitigation_sequence {
            let stage = mitigation::registry().lookup(name)?.stage();
            let key = StageKey::from(stage);
            if last.is_some_and(|l| l >= key) {
                return Err(Error::InvalidConfig(format!(
                    "mitigation_sequence must name at most one strategy per stage in pre/in/post order ({name})"
                )));
            }
            last = Some(key);
            plan.insert(key, name.clone());
        }
        Ok(plan)
    }
}

/// Orderable mirror of [`MitigationStage`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum StageKey {
    Pre,
    In,
    Post,
}

impl From<MitigationStage> for StageKey {
    fn from(s: MitigationStage) -> Self {
        match s {
            MitigationStage::Pre => StageKey::Pre,
            MitigationStage::In => StageKey::In,
            MitigationStage::Post => StageKey::Post,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = FlowConfig::default();
        assert_eq!(FlowConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(FlowConfig::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn partial_file_overrides_some_keys() {
        let cfg = FlowConfig::from_toml("sparse_min_prop = 0.05\n[fairness_range]\nlower = 0.9\nupper = 1.1\n").unwrap();
        assert_eq!(cfg.sparse_min_prop, 0.05);
        assert_eq!(cfg.fairness_range, FairnessRange { lower: 0.9, upper: 1.1 });
        assert_eq!(cfg.proxy_alpha, 0.01);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(FlowConfig::from_toml("bogus = 1").is_err());
        assert!(FlowConfig::from_toml("mitigation_sequence = [\"nope\"]").is_err());
        assert!(FlowConfig::from_toml("mitigation_sequence = [\"groupThresholds\", \"reweighing\"]").is_err());
        assert!(FlowConfig::from_toml("detection_metric = \"equalizedOdds\"").is_err());
        assert!(FlowConfig::from_toml("[fairness_range]\nlower = 1.3\nupper = 1.2").is_err());
    }
}
