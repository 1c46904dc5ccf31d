//! Pre-, in- and post-processing mitigation strategies behind a name-keyed
//! registry. Strategy names are the strings written to the bias history.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lab::{self, CovPenalty, DesignMatrix, TrainConfig};
use crate::metrics::{self, FairnessRange};
use crate::project::FittedModelInfo;
use crate::table::Categorical;

pub const REWEIGHING: &str = "reweighing";
pub const FAIR_PENALTY_LOGREG: &str = "fairPenaltyLogReg";
pub const GROUP_THRESHOLDS: &str = "groupThresholds";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MitigationStage {
    Pre,
    In,
    Post,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Artifact {
    Weights(Vec<f64>),
    Model(Box<FittedModelInfo>),
    Outcomes(Vec<bool>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationResult {
    pub function_name: String,
    pub stage: MitigationStage,
    pub artifact: Artifact,
    /// Smallest disparate impact over the checked features after mitigation.
    pub post_metric: f64,
    pub success: bool,
    pub per_feature: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub info: BTreeMap<String, f64>,
}

/// Row weights `P(s) P(y) / P(s, y)` from empirical frequencies.
pub fn reweigh(s: &Categorical, y: &[bool]) -> Result<Vec<f64>> {
    if s.len() != y.len() {
        return Err(Error::LengthMismatch { left: s.len(), right: y.len() });
    }
    let n = y.len() as f64;
    let k = s.levels().len();
    let mut cell = vec![[0usize; 2]; k];
    for (&g, &yy) in s.codes().iter().zip(y) {
        cell[g as usize][usize::from(yy)] += 1;
    }
    let y_count = [y.iter().filter(|v| !**v).count(), y.iter().filter(|v| **v).count()];
    for (g, counts) in cell.iter().enumerate() {
        let present = counts[0] + counts[1] > 0;
        for outcome in [false, true] {
            if present && counts[usize::from(outcome)] == 0 {
                return Err(Error::EmptyCell { level: s.levels()[g].clone(), outcome });
            }
        }
    }
    Ok(s.codes()
        .iter()
        .zip(y)
        .map(|(&g, &yy)| {
            let c = &cell[g as usize];
            let ps = (c[0] + c[1]) as f64 / n;
            let py = y_count[usize::from(yy)] as f64 / n;
            let psy = c[usize::from(yy)] as f64 / n;
            ps * py / psy
        })
        .collect())
}

/// Per-feature disparate impact of binary outcomes; undefined ratios are +inf.
pub fn outcome_di(outcome: &[bool], groups: &[(String, Categorical)]) -> Result<BTreeMap<String, f64>> {
    groups
        .iter()
        .map(|(name, g)| {
            let di = match metrics::disparate_impact(outcome, g, None) {
                Ok(v) => v,
                Err(Error::DivisionByZero) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            Ok((name.clone(), di))
        })
        .collect()
}

/// The value a set of per-feature disparate impacts is judged by: the one
/// furthest from parity.
pub fn worst_di(per_feature: &BTreeMap<String, f64>) -> f64 {
    per_feature
        .values()
        .copied()
        .max_by(|a, b| distance_from_parity(*a).total_cmp(&distance_from_parity(*b)))
        .unwrap_or(1.0)
}

fn distance_from_parity(di: f64) -> f64 {
    if !di.is_finite() || di <= 0.0 {
        f64::INFINITY
    } else {
        di.ln().abs()
    }
}

fn all_in_range(per_feature: &BTreeMap<String, f64>, range: FairnessRange) -> bool {
    per_feature.values().all(|v| range.contains(*v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySweep {
    pub lambda: f64,
    pub test_di: BTreeMap<String, f64>,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyOutcome {
    pub model: FittedModelInfo,
    pub lambda: f64,
    pub test_di: BTreeMap<String, f64>,
    pub test_accuracy: f64,
    pub success: bool,
    pub sweep: Vec<PenaltySweep>,
}

pub fn default_schedule() -> Vec<f64> {
    std::iter::once(0.0).chain((0..=10).map(|k| f64::from(1u32 << k))).collect()
}

/// Training inputs shared by the model-based strategies.
#[derive(Debug, Clone, Copy)]
pub struct Fold<'a> {
    pub x: &'a DesignMatrix,
    pub y: &'a [bool],
    /// (feature name, grouping) for every feature the result is judged on.
    pub groups: &'a [(String, Categorical)],
}

/// Covariance-penalized logistic regression. Walks the lambda schedule and
/// stops at the first model whose test-fold disparate impact is in range for
/// every feature; otherwise returns the model at the last lambda.
pub fn fair_penalty_logreg(
    train: Fold<'_>,
    weights: Option<&[f64]>,
    test: Fold<'_>,
    range: FairnessRange,
    cfg: &TrainConfig,
    schedule: &[f64],
) -> Result<PenaltyOutcome> {
    let indicators: Vec<Vec<f64>> = train.groups.iter().map(|(_, g)| lowest_rate_indicator(g, train.y)).collect();
    let mut sweep = Vec::new();
    let mut last: Option<PenaltyOutcome> = None;
    let mut warm: Option<FittedModelInfo> = None;
    for &lambda in schedule {
        let penalties: Vec<CovPenalty> =
            indicators.iter().map(|s| CovPenalty { indicator: s.clone(), lambda }).collect();
        let model = match lab::train_logreg_penalized(train.x, train.y, weights, cfg, &penalties, warm.as_ref()) {
            Ok(m) => m,
            Err(Error::Divergence(_)) | Err(Error::NonFinite(_)) => continue,
            Err(e) => return Err(e),
        };
        let pred = lab::classify(&lab::predict(&model, test.x)?, 0.5);
        let test_di = outcome_di(&pred, test.groups)?;
        let test_accuracy = lab::accuracy(&pred, test.y)?;
        let success = all_in_range(&test_di, range);
        sweep.push(PenaltySweep { lambda, test_di: test_di.clone(), test_accuracy });
        warm = Some(model.clone());
        last = Some(PenaltyOutcome { model, lambda, test_di, test_accuracy, success, sweep: Vec::new() });
        if success {
            break;
        }
    }
    let mut out = last.ok_or(Error::NonConvergence)?;
    out.sweep = sweep;
    Ok(out)
}

/// 1 for rows in the group with the lowest positive rate, 0 elsewhere.
fn lowest_rate_indicator(groups: &Categorical, y: &[bool]) -> Vec<f64> {
    let k = groups.levels().len();
    let mut pos = vec![0.0; k];
    let mut tot = vec![0.0; k];
    for (&g, &yy) in groups.codes().iter().zip(y) {
        tot[g as usize] += 1.0;
        pos[g as usize] += f64::from(yy);
    }
    let lowest = (0..k)
        .filter(|&g| tot[g] > 0.0)
        .min_by(|&a, &b| (pos[a] / tot[a]).total_cmp(&(pos[b] / tot[b])))
        .unwrap_or(0);
    groups.codes().iter().map(|&g| f64::from(g as usize == lowest)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdOutcome {
    /// (group label, threshold) in level order.
    pub thresholds: Vec<(String, f64)>,
    pub outcomes: Vec<bool>,
    pub di: f64,
    pub accuracy: Option<f64>,
    pub success: bool,
}

const GRID: usize = 101;

fn grid_value(k: usize) -> f64 {
    k as f64 / 100.0
}

fn deviation(k: usize) -> i64 {
    (k as i64 - 50).abs()
}

struct GroupCurve {
    rate: Vec<f64>,
    correct: Vec<usize>,
}

/// Candidate tuple ordered by (more correct, smaller total deviation from 0.5,
/// lexicographically smaller thresholds).
#[derive(Clone, PartialEq, Eq)]
struct Key {
    correct: usize,
    dev: i64,
    ks: Vec<usize>,
}

impl Key {
    fn better_than(&self, other: &Key) -> bool {
        if self.correct != other.correct {
            return self.correct > other.correct;
        }
        if self.dev != other.dev {
            return self.dev < other.dev;
        }
        self.ks < other.ks
    }
}

/// Per-group thresholds on the grid {0.00, 0.01, ..., 1.00}. Among tuples
/// whose disparate impact is in range, picks the most accurate one (or, with
/// no labels, the one closest to 0.5). A row is positive when its score is at
/// least its group's threshold.
pub fn group_thresholds(
    scores: &[f64],
    groups: &Categorical,
    y_true: Option<&[bool]>,
    range: FairnessRange,
) -> Result<ThresholdOutcome> {
    if scores.len() != groups.len() {
        return Err(Error::LengthMismatch { left: scores.len(), right: groups.len() });
    }
    if let Some(y) = y_true {
        if y.len() != scores.len() {
            return Err(Error::LengthMismatch { left: scores.len(), right: y.len() });
        }
    }
    if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
        return Err(Error::SchemaError("scores must lie in [0, 1]".into()));
    }
    let groups = groups.compact();
    let g_count = groups.levels().len();
    if g_count < 2 {
        return Err(Error::EmptyGroup("fewer than two groups have rows".into()));
    }

    let curves: Vec<GroupCurve> = (0..g_count)
        .map(|g| {
            let rows: Vec<usize> = (0..scores.len()).filter(|&i| groups.codes()[i] as usize == g).collect();
            let n = rows.len() as f64;
            let mut rate = Vec::with_capacity(GRID);
            let mut correct = Vec::with_capacity(GRID);
            for k in 0..GRID {
                let t = grid_value(k);
                let mut pos = 0usize;
                let mut ok = 0usize;
                for &i in &rows {
                    let p = scores[i] >= t;
                    pos += usize::from(p);
                    if let Some(y) = y_true {
                        ok += usize::from(p == y[i]);
                    }
                }
                rate.push(pos as f64 / n);
                correct.push(ok);
            }
            GroupCurve { rate, correct }
        })
        .collect();

    let di_of = |ks: &[usize]| -> f64 {
        let rates: Vec<f64> = ks.iter().enumerate().map(|(g, &k)| curves[g].rate[k]).collect();
        let max = rates.iter().copied().fold(0.0, f64::max);
        let min = rates.iter().copied().fold(f64::INFINITY, f64::min);
        if max == 0.0 {
            f64::INFINITY
        } else {
            min / max
        }
    };

    // Every feasible tuple has a minimum-rate group a at some threshold k_a;
    // the other groups then choose independently inside [r_a, r_a / lower).
    let mut best: Option<Key> = None;
    for a in 0..g_count {
        for ka in 0..GRID {
            let ra = curves[a].rate[ka];
            if ra == 0.0 {
                continue;
            }
            let mut ks = vec![0usize; g_count];
            ks[a] = ka;
            let mut feasible = true;
            for (g, curve) in curves.iter().enumerate() {
                if g == a {
                    continue;
                }
                let mut pick: Option<usize> = None;
                for k in 0..GRID {
                    let r = curve.rate[k];
                    if r < ra || ra / r <= range.lower {
                        continue;
                    }
                    pick = match pick {
                        None => Some(k),
                        Some(p) => {
                            let better = curve.correct[k] > curve.correct[p]
                                || (curve.correct[k] == curve.correct[p] && deviation(k) < deviation(p));
                            Some(if better { k } else { p })
                        }
                    };
                }
                match pick {
                    Some(k) => ks[g] = k,
                    None => {
                        feasible = false;
                        break;
                    }
                }
            }
            if !feasible || !range.contains(di_of(&ks)) {
                continue;
            }
            let key = Key {
                correct: ks.iter().enumerate().map(|(g, &k)| curves[g].correct[k]).sum(),
                dev: ks.iter().map(|&k| deviation(k)).sum(),
                ks,
            };
            if best.as_ref().is_none_or(|b| key.better_than(b)) {
                best = Some(key);
            }
        }
    }

    let (ks, success) = match best {
        Some(key) => (key.ks, true),
        None => (best_di_tuple(&curves, &di_of), false),
    };
    let outcomes: Vec<bool> =
        scores.iter().zip(groups.codes()).map(|(s, &g)| *s >= grid_value(ks[g as usize])).collect();
    let accuracy = y_true.map(|y| lab::accuracy(&outcomes, y)).transpose()?;
    let di = metrics::disparate_impact(&outcomes, &groups, None).unwrap_or(f64::INFINITY);
    Ok(ThresholdOutcome {
        thresholds: groups.levels().iter().cloned().zip(ks.iter().map(|&k| grid_value(k))).collect(),
        outcomes,
        di,
        accuracy,
        success,
    })
}

/// Fallback when nothing is feasible: each anchor's closest rates from above,
/// keeping the tuple with the largest disparate impact.
fn best_di_tuple(curves: &[GroupCurve], di_of: &dyn Fn(&[usize]) -> f64) -> Vec<usize> {
    let g_count = curves.len();
    let mut best: Option<(f64, Key)> = None;
    for a in 0..g_count {
        for ka in 0..GRID {
            let ra = curves[a].rate[ka];
            let mut ks = vec![0usize; g_count];
            ks[a] = ka;
            let mut ok = true;
            for (g, curve) in curves.iter().enumerate() {
                if g == a {
                    continue;
                }
                let pick = (0..GRID)
                    .filter(|&k| curve.rate[k] >= ra)
                    .min_by(|&x, &y| curve.rate[x].total_cmp(&curve.rate[y]).then(deviation(x).cmp(&deviation(y))));
                match pick {
                    Some(k) => ks[g] = k,
                    None => ok = false,
                }
            }
            if !ok {
                continue;
            }
            let di = di_of(&ks);
            let di = if di.is_finite() { di } else { 0.0 };
            let key = Key { correct: 0, dev: ks.iter().map(|&k| deviation(k)).sum(), ks };
            let better = match &best {
                None => true,
                Some((bd, bk)) => di > *bd || (di == *bd && key.better_than(bk)),
            };
            if better {
                best = Some((di, key));
            }
        }
    }
    best.map(|(_, k)| k.ks).unwrap_or_else(|| vec![50; g_count])
}

/// Everything a registered strategy may read.
#[derive(Debug, Clone, Copy)]
pub struct MitigationInput<'a> {
    pub train: Fold<'a>,
    pub train_weights: Option<&'a [f64]>,
    pub test: Fold<'a>,
    /// Scores of the current model on the test fold.
    pub test_scores: Option<&'a [f64]>,
    pub range: FairnessRange,
    pub train_config: &'a TrainConfig,
    pub schedule: &'a [f64],
}

pub trait MitigationStrategy: Send + Sync {
    fn name(&self) -> &'static str;
    fn stage(&self) -> MitigationStage;
    fn apply(&self, input: &MitigationInput<'_>) -> Result<MitigationResult>;
}

fn joint(groups: &[(String, Categorical)]) -> Result<Categorical> {
    let parts: Vec<&Categorical> = groups.iter().map(|(_, g)| g).collect();
    Categorical::joint(&parts)
}

struct Reweighing;

impl MitigationStrategy for Reweighing {
    fn name(&self) -> &'static str {
        REWEIGHING
    }

    fn stage(&self) -> MitigationStage {
        MitigationStage::Pre
    }

    /// Weights come from the joint grouping of all target features; the
    /// reported metric is the weighted disparate impact of y on that grouping.
    fn apply(&self, input: &MitigationInput<'_>) -> Result<MitigationResult> {
        let s = joint(input.train.groups)?;
        let weights = reweigh(&s, input.train.y)?;
        let di = match metrics::weighted_disparate_impact(input.train.y, &s, &weights) {
            Ok(v) => v,
            Err(Error::DivisionByZero) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        let mut per_feature = BTreeMap::new();
        per_feature.insert(s_name(input.train.groups), di);
        Ok(MitigationResult {
            function_name: REWEIGHING.into(),
            stage: MitigationStage::Pre,
            artifact: Artifact::Weights(weights),
            post_metric: di,
            success: input.range.contains(di),
            per_feature,
            info: BTreeMap::new(),
        })
    }
}

fn s_name(groups: &[(String, Categorical)]) -> String {
    groups.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>().join("|")
}

struct FairPenalty;

impl MitigationStrategy for FairPenalty {
    fn name(&self) -> &'static str {
        FAIR_PENALTY_LOGREG
    }

    fn stage(&self) -> MitigationStage {
        MitigationStage::In
    }

    fn apply(&self, input: &MitigationInput<'_>) -> Result<MitigationResult> {
        let out =
            fair_penalty_logreg(input.train, input.train_weights, input.test, input.range, input.train_config, input.schedule)?;
        let mut info = BTreeMap::new();
        info.insert("lambda".into(), out.lambda);
        info.insert("test_accuracy".into(), out.test_accuracy);
        Ok(MitigationResult {
            function_name: FAIR_PENALTY_LOGREG.into(),
            stage: MitigationStage::In,
            post_metric: worst_di(&out.test_di),
            success: out.success,
            per_feature: out.test_di,
            artifact: Artifact::Model(Box::new(out.model)),
            info,
        })
    }
}

struct GroupThresholds;

impl MitigationStrategy for GroupThresholds {
    fn name(&self) -> &'static str {
        GROUP_THRESHOLDS
    }

    fn stage(&self) -> MitigationStage {
        MitigationStage::Post
    }

    /// Thresholds are searched on the joint grouping of the target features,
    /// which keeps each marginal disparate impact in range whenever the joint
    /// one is.
    fn apply(&self, input: &MitigationInput<'_>) -> Result<MitigationResult> {
        let scores = input
            .test_scores
            .ok_or_else(|| Error::InvalidConfig("groupThresholds needs model scores".into()))?;
        let s = joint(input.test.groups)?;
        let out = group_thresholds(scores, &s, Some(input.test.y), input.range)?;
        let per_feature = outcome_di(&out.outcomes, input.test.groups)?;
        let mut info: BTreeMap<String, f64> =
            out.thresholds.iter().map(|(g, t)| (format!("threshold[{g}]"), *t)).collect();
        if let Some(acc) = out.accuracy {
            info.insert("test_accuracy".into(), acc);
        }
        Ok(MitigationResult {
            function_name: GROUP_THRESHOLDS.into(),
            stage: MitigationStage::Post,
            post_metric: worst_di(&per_feature),
            success: all_in_range(&per_feature, input.range),
            per_feature,
            artifact: Artifact::Outcomes(out.outcomes),
            info,
        })
    }
}

pub struct Registry {
    strategies: Vec<Box<dyn MitigationStrategy>>,
}

impl Registry {
    pub fn standard() -> Registry {
        Registry { strategies: vec![Box::new(Reweighing), Box::new(FairPenalty), Box::new(GroupThresholds)] }
    }

    pub fn lookup(&self, name: &str) -> Result<&dyn MitigationStrategy> {
        self.strategies
            .iter()
            .find(|s| s.name() == name)
            .map(|s| s.as_ref())
            .ok_or_else(|| Error::UnknownStrategy(name.to_string()))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.strategies.iter().map(|s| s.name()).collect()
    }
}

/// Process-wide registry of the built-in strategies.
pub fn registry() -> &'static Registry {
    static REGISTRY: OnceLock<Registry> = OnceLock::new();
    REGISTRY.get_or_init(Registry::standard)
}
