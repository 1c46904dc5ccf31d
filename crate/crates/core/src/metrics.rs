//! Bias detection: sparse groups, proxy features, disparate impact,
//! marginalized groups and covariate shift.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{self, Contingency};
use crate::table::{Categorical, Column, Table};

pub const SAMP_PROPORTION: &str = "computeSampProportion";
pub const CHI_SQ_TEST: &str = "computeChiSqTest";
pub const DISP_IMPACT: &str = "computeDispImpact";
pub const COVARIATE_SHIFT: &str = "detectCovariateShift";

/// Open interval of acceptable disparate impact values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairnessRange {
    pub lower: f64,
    pub upper: f64,
}

impl Default for FairnessRange {
    fn default() -> Self {
        FairnessRange { lower: 0.8, upper: 1.2 }
    }
}

impl FairnessRange {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower > 0.0 && lower < upper && upper.is_finite()) {
            return Err(Error::InvalidConfig(format!("fairness range ({lower}, {upper})")));
        }
        Ok(FairnessRange { lower, upper })
    }

    /// Strict containment: a value equal to either bound is biased.
    pub fn contains(&self, value: f64) -> bool {
        value > self.lower && value < self.upper
    }
}

mod nonfinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureResult {
    /// Metric value; an undefined disparate impact is stored as +inf and
    /// serialized as null.
    #[serde(with = "nonfinite_as_null")]
    pub value: f64,
    pub flagged: bool,
    pub groups: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub detail: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub metric_name: String,
    pub per_feature: BTreeMap<String, FeatureResult>,
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl DetectionReport {
    fn new(metric_name: &str) -> Self {
        DetectionReport {
            metric_name: metric_name.to_string(),
            per_feature: BTreeMap::new(),
            params: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    pub fn any_flagged(&self) -> bool {
        self.per_feature.values().any(|f| f.flagged)
    }

    pub fn flagged_features(&self) -> Vec<String> {
        self.per_feature.iter().filter(|(_, f)| f.flagged).map(|(k, _)| k.clone()).collect()
    }
}

/// Flags every level of each sensitive feature whose share of rows is below
/// `min_prop`.
pub fn compute_samp_proportion(data: &Table, sens_features: &[String], min_prop: f64) -> Result<DetectionReport> {
    let mut report = DetectionReport::new(SAMP_PROPORTION);
    report.params.insert("min_prop".into(), min_prop);
    for feature in sens_features {
        let groups = data.categorical(feature)?.compact();
        if groups.levels().len() < 2 {
            return Err(Error::ConstantColumn(feature.clone()));
        }
        let n = groups.len() as f64;
        let mut detail = BTreeMap::new();
        let mut sparse = Vec::new();
        for (level, count) in groups.levels().iter().zip(groups.counts()) {
            let share = count as f64 / n;
            if share < min_prop {
                sparse.push(level.clone());
            }
            detail.insert(level.clone(), share);
        }
        let value = detail.values().copied().fold(f64::INFINITY, f64::min);
        report
            .per_feature
            .insert(feature.clone(), FeatureResult { value, flagged: !sparse.is_empty(), groups: sparse, detail });
    }
    Ok(report)
}

/// Groups a column for contingency analysis. Numeric columns with more than
/// ten distinct values are cut at their deciles.
pub fn test_grouping(column: &Column) -> Categorical {
    match column {
        Column::Categorical(c) => c.clone(),
        Column::Numeric(v) => {
            let distinct: BTreeSet<u64> = v.iter().map(|x| x.to_bits()).collect();
            if distinct.len() <= 10 {
                return column.to_categorical();
            }
            let mut sorted = v.clone();
            sorted.sort_by(f64::total_cmp);
            let mut cuts: Vec<f64> = (1..10).map(|k| quantile(&sorted, k as f64 / 10.0)).collect();
            cuts.dedup();
            let labels: Vec<String> =
                v.iter().map(|x| format!("d{}", cuts.iter().filter(|c| *x > **c).count())).collect();
            Categorical::from_labels(&labels)
        }
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyPair {
    pub sensitive: String,
    pub candidate: String,
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub cramers_v: f64,
    pub proxy: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyScan {
    pub report: DetectionReport,
    pub pairs: Vec<ProxyPair>,
}

impl ProxyScan {
    /// sensitive feature -> its proxy candidates, only for features with at
    /// least one proxy.
    pub fn proxies(&self) -> BTreeMap<String, Vec<String>> {
        let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for p in self.pairs.iter().filter(|p| p.proxy) {
            out.entry(p.sensitive.clone()).or_default().push(p.candidate.clone());
        }
        out
    }
}

/// Chi-square independence test for every (sensitive, candidate) pair.
/// A candidate is a proxy when `p < alpha / m` and Cramér's V is at least
/// `v_min`, with `m` the number of candidates. Degenerate tables are skipped
/// with a warning.
pub fn compute_chi_sq_test(
    data: &Table,
    sens_features: &[String],
    candidates: &[String],
    alpha: f64,
    v_min: f64,
) -> Result<ProxyScan> {
    if candidates.is_empty() {
        return Err(Error::InvalidConfig("proxy detection needs at least one candidate feature".into()));
    }
    let m = candidates.len() as f64;
    let threshold = alpha / m;
    let mut report = DetectionReport::new(CHI_SQ_TEST);
    report.params.insert("alpha".into(), alpha);
    report.params.insert("m".into(), m);
    report.params.insert("threshold".into(), threshold);
    report.params.insert("v_min".into(), v_min);

    let candidate_groups: Vec<Categorical> =
        candidates.iter().map(|c| data.column(c).map(test_grouping)).collect::<Result<_>>()?;
    let mut pairs = Vec::new();
    for sens in sens_features {
        let s = data.categorical(sens)?;
        let mut result = FeatureResult { value: 0.0, flagged: false, groups: Vec::new(), detail: BTreeMap::new() };
        for (cand, c) in candidates.iter().zip(&candidate_groups) {
            let table = Contingency::from_codes(s.codes(), s.levels().len(), c.codes(), c.levels().len());
            let Some(chi) = table.chi_square() else {
                let err = Error::DegenerateTable { sensitive: sens.clone(), candidate: cand.clone() };
                report.warnings.push(err.to_string());
                continue;
            };
            let proxy = chi.p_value < threshold && chi.cramers_v >= v_min;
            if proxy {
                result.flagged = true;
                result.groups.push(cand.clone());
            }
            result.value = result.value.max(chi.cramers_v);
            result.detail.insert(cand.clone(), chi.cramers_v);
            pairs.push(ProxyPair {
                sensitive: sens.clone(),
                candidate: cand.clone(),
                statistic: chi.statistic,
                dof: chi.dof,
                p_value: chi.p_value,
                cramers_v: chi.cramers_v,
                proxy,
            });
        }
        report.per_feature.insert(sens.clone(), result);
    }
    Ok(ProxyScan { report, pairs })
}

/// Positive rate per observed group, optionally weighted. Levels with no rows
/// are left out.
pub fn group_rates(outcome: &[bool], groups: &Categorical, weights: Option<&[f64]>) -> Result<Vec<(String, f64)>> {
    if outcome.len() != groups.len() {
        return Err(Error::LengthMismatch { left: outcome.len(), right: groups.len() });
    }
    if let Some(w) = weights {
        if w.len() != outcome.len() {
            return Err(Error::LengthMismatch { left: outcome.len(), right: w.len() });
        }
    }
    let k = groups.levels().len();
    let mut pos = vec![0.0; k];
    let mut tot = vec![0.0; k];
    let mut rows = vec![0usize; k];
    for (i, (&o, &g)) in outcome.iter().zip(groups.codes()).enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        tot[g as usize] += w;
        rows[g as usize] += 1;
        if o {
            pos[g as usize] += w;
        }
    }
    let mut rates = Vec::new();
    for g in 0..k {
        if rows[g] == 0 {
            continue;
        }
        if tot[g] <= 0.0 {
            return Err(Error::EmptyGroup(groups.levels()[g].clone()));
        }
        rates.push((groups.levels()[g].clone(), pos[g] / tot[g]));
    }
    if rates.len() < 2 {
        return Err(Error::EmptyGroup("fewer than two groups have rows".into()));
    }
    Ok(rates)
}

/// Ratio of positive rates. Without a privileged label this is
/// min rate / max rate; with one it is (lowest unprivileged rate) /
/// (privileged rate).
pub fn disparate_impact_from_rates(rates: &[(String, f64)], privileged: Option<&str>) -> Result<f64> {
    let (num, den) = match privileged {
        None => {
            let min = rates.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
            let max = rates.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
            (min, max)
        }
        Some(label) => {
            let priv_rate = rates
                .iter()
                .find(|r| r.0 == label)
                .map(|r| r.1)
                .ok_or_else(|| Error::EmptyGroup(label.to_string()))?;
            let unpriv = rates.iter().filter(|r| r.0 != label).map(|r| r.1).fold(f64::INFINITY, f64::min);
            (unpriv, priv_rate)
        }
    };
    if den == 0.0 {
        return Err(Error::DivisionByZero);
    }
    Ok(num / den)
}

/// Disparate impact of `outcome == positive` across `groups`.
pub fn compute_disp_impact<T: PartialEq>(
    outcome: &[T],
    positive: &T,
    groups: &Categorical,
    privileged: Option<&str>,
) -> Result<f64> {
    let hits: Vec<bool> = outcome.iter().map(|o| o == positive).collect();
    disparate_impact(&hits, groups, privileged)
}

pub fn disparate_impact(outcome: &[bool], groups: &Categorical, privileged: Option<&str>) -> Result<f64> {
    disparate_impact_from_rates(&group_rates(outcome, groups, None)?, privileged)
}

pub fn weighted_disparate_impact(outcome: &[bool], groups: &Categorical, weights: &[f64]) -> Result<f64> {
    disparate_impact_from_rates(&group_rates(outcome, groups, Some(weights))?, None)
}

/// Disparate impact of a binary outcome against each sensitive feature. An
/// undefined ratio counts as +inf and is flagged; the lowest-rate group is
/// listed for flagged features.
pub fn disp_impact_report(
    outcome: &[bool],
    data: &Table,
    sens_features: &[String],
    range: FairnessRange,
    privileged: &BTreeMap<String, String>,
) -> Result<DetectionReport> {
    let mut report = DetectionReport::new(DISP_IMPACT);
    report.params.insert("lower".into(), range.lower);
    report.params.insert("upper".into(), range.upper);
    for feature in sens_features {
        let groups = data.categorical(feature)?;
        let rates = group_rates(outcome, &groups, None)?;
        let value = match disparate_impact_from_rates(&rates, privileged.get(feature).map(String::as_str)) {
            Ok(v) => v,
            Err(Error::DivisionByZero) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        let flagged = !range.contains(value);
        let lowest = rates.iter().min_by(|a, b| a.1.total_cmp(&b.1)).map(|r| r.0.clone());
        let groups = if flagged { lowest.into_iter().collect() } else { Vec::new() };
        let detail = rates.into_iter().collect();
        report.per_feature.insert(feature.clone(), FeatureResult { value, flagged, groups, detail });
    }
    Ok(report)
}

/// Disparate impact of the response column against each sensitive feature.
pub fn detect_marginalized_groups(
    data: &Table,
    y: &str,
    positive_label: &str,
    sens_features: &[String],
    range: FairnessRange,
    privileged: &BTreeMap<String, String>,
) -> Result<DetectionReport> {
    let outcome = data.column(y)?.binary(y, positive_label)?;
    disp_impact_report(&outcome, data, sens_features, range, privileged)
}

/// Per-column summary kept when the full prior data cannot be stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnSummary {
    Numeric { mean: f64, sd: f64, n: usize },
    Categorical { proportions: BTreeMap<String, f64>, n: usize },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DataSummary {
    pub columns: BTreeMap<String, ColumnSummary>,
}

impl DataSummary {
    pub fn from_table(table: &Table) -> DataSummary {
        let columns = table
            .columns()
            .map(|(name, col)| {
                let summary = match col {
                    Column::Numeric(v) => {
                        let (mean, sd) = stats::mean_sd(v);
                        ColumnSummary::Numeric { mean, sd, n: v.len() }
                    }
                    Column::Categorical(c) => {
                        let n = c.len();
                        let proportions = c
                            .levels()
                            .iter()
                            .zip(c.counts())
                            .filter(|(_, k)| *k > 0)
                            .map(|(l, k)| (l.clone(), k as f64 / n as f64))
                            .collect();
                        ColumnSummary::Categorical { proportions, n }
                    }
                };
                (name.to_string(), summary)
            })
            .collect();
        DataSummary { columns }
    }
}

/// Reference data for shift detection.
#[derive(Debug, Clone, Copy)]
pub enum Prior<'a> {
    Table(&'a Table),
    Summary(&'a DataSummary),
}

fn schema_flag(reason: String) -> FeatureResult {
    FeatureResult { value: 0.0, flagged: true, groups: vec![reason], detail: BTreeMap::new() }
}

/// Compares current data to prior data column by column. The per-column
/// value is the test p-value; a column shifts when it falls below
/// `alpha / p` with `p` the number of shared columns. Added or removed
/// columns, type changes and new category levels are always flagged.
pub fn detect_covariate_shift(current: &Table, prior: Prior<'_>, alpha: f64) -> Result<DetectionReport> {
    let prior_names: Vec<String> = match prior {
        Prior::Table(t) => t.names().to_vec(),
        Prior::Summary(s) => s.columns.keys().cloned().collect(),
    };
    let shared: Vec<&String> = current.names().iter().filter(|n| prior_names.contains(n)).collect();
    if shared.is_empty() {
        return Err(Error::SchemaMismatch);
    }
    let threshold = alpha / shared.len() as f64;
    let mut report = DetectionReport::new(COVARIATE_SHIFT);
    report.params.insert("alpha".into(), alpha);
    report.params.insert("p".into(), shared.len() as f64);
    report.params.insert("threshold".into(), threshold);

    for name in current.names().iter().filter(|n| !prior_names.contains(n)) {
        report.per_feature.insert(name.clone(), schema_flag("column added".into()));
    }
    for name in prior_names.iter().filter(|n| !current.has(n)) {
        report.per_feature.insert(name.clone(), schema_flag("column removed".into()));
    }

    for name in shared {
        let cur = current.column(name)?;
        let result = match prior {
            Prior::Table(t) => {
                let old = t.column(name)?;
                match (cur, old) {
                    (Column::Numeric(a), Column::Numeric(b)) => {
                        let (d, p) = stats::ks_two_sample(a, b);
                        let mut detail = BTreeMap::new();
                        detail.insert("statistic".into(), d);
                        shift_result(p, threshold, Vec::new(), detail)
                    }
                    (Column::Categorical(a), Column::Categorical(b)) => {
                        let a_counts = level_counts(a);
                        let b_counts = level_counts(b);
                        categorical_shift(&a_counts, &b_counts, threshold)
                    }
                    _ => schema_flag("column type changed".into()),
                }
            }
            Prior::Summary(s) => {
                let old = &s.columns[name.as_str()];
                match (cur, old) {
                    (Column::Numeric(a), ColumnSummary::Numeric { mean, sd, n }) => {
                        let (m, s) = stats::mean_sd(a);
                        let (z, p) = stats::z_test_means(m, s, a.len() as f64, *mean, *sd, *n as f64);
                        let mut detail = BTreeMap::new();
                        detail.insert("statistic".into(), z);
                        shift_result(p, threshold, Vec::new(), detail)
                    }
                    (Column::Categorical(a), ColumnSummary::Categorical { proportions, n }) => {
                        let b_counts: BTreeMap<String, f64> =
                            proportions.iter().map(|(l, p)| (l.clone(), (p * *n as f64).round())).collect();
                        categorical_shift(&level_counts(a), &b_counts, threshold)
                    }
                    _ => schema_flag("column type changed".into()),
                }
            }
        };
        report.per_feature.insert(name.clone(), result);
    }
    Ok(report)
}

fn shift_result(p: f64, threshold: f64, groups: Vec<String>, detail: BTreeMap<String, f64>) -> FeatureResult {
    let flagged = p < threshold || !groups.is_empty();
    FeatureResult { value: p, flagged, groups, detail }
}

fn level_counts(c: &Categorical) -> BTreeMap<String, f64> {
    c.levels()
        .iter()
        .zip(c.counts())
        .filter(|(_, k)| *k > 0)
        .map(|(l, k)| (l.clone(), k as f64))
        .collect()
}

fn categorical_shift(current: &BTreeMap<String, f64>, prior: &BTreeMap<String, f64>, threshold: f64) -> FeatureResult {
    let new_levels: Vec<String> = current
        .keys()
        .filter(|l| prior.get(*l).is_none_or(|c| *c == 0.0))
        .map(|l| format!("new category {l}"))
        .collect();
    let levels: BTreeSet<&String> = current.keys().chain(prior.keys()).collect();
    let rows = vec![
        levels.iter().map(|l| current.get(*l).copied().unwrap_or(0.0)).collect(),
        levels.iter().map(|l| prior.get(*l).copied().unwrap_or(0.0)).collect(),
    ];
    let mut detail = BTreeMap::new();
    let p = match Contingency::new(rows).chi_square() {
        Some(chi) => {
            detail.insert("statistic".into(), chi.statistic);
            chi.p_value
        }
        // a single shared level on both sides cannot shift
        None => 1.0,
    };
    shift_result(p, threshold, new_levels, detail)
}
