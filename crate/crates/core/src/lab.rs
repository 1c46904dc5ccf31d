//! Seeded train/test splitting and a from-scratch logistic regression.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::project::{FittedModelInfo, ModelParams, Scaling};
use crate::table::{Column, Table};

pub const LOSS_NAME: &str = "neg_log_likelihood_l2";
pub const PENALIZED_LOSS_NAME: &str = "neg_log_likelihood_l2_cov_penalty";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub test_fraction: f64,
}

/// Shuffles `0..n_rows` with Fisher-Yates and takes the first
/// `round(n * fraction)` indices as the test set. Both halves come back
/// sorted.
pub fn split_train_test(n_rows: usize, spec: SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(Error::BadFraction(spec.test_fraction));
    }
    if n_rows < 2 {
        return Err(Error::InsufficientRows { group: "all".into(), needed: 2, available: n_rows });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut idx: Vec<usize> = (0..n_rows).collect();
    idx.shuffle(&mut rng);
    let n_test = ((n_rows as f64 * spec.test_fraction).round() as usize).clamp(1, n_rows - 1);
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// Dense row-major design matrix without an intercept column.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    names: Vec<String>,
    n_rows: usize,
    data: Vec<f64>,
}

impl DesignMatrix {
    pub fn new(names: Vec<String>, n_rows: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_rows * names.len() {
            return Err(Error::DimensionMismatch { expected: n_rows * names.len(), got: data.len() });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("design matrix"));
        }
        Ok(DesignMatrix { names, n_rows, data })
    }

    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        DesignMatrix::new(names, rows.len(), data)
    }

    /// Numeric columns are copied as is. Categorical columns expand into one
    /// indicator per level after the first, named `column=level`.
    pub fn from_table(table: &Table, columns: &[String]) -> Result<Self> {
        let n = table.n_rows();
        let mut names = Vec::new();
        let mut cols: Vec<Vec<f64>> = Vec::new();
        for name in columns {
            match table.column(name)? {
                Column::Numeric(v) => {
                    names.push(name.clone());
                    cols.push(v.clone());
                }
                Column::Categorical(c) => {
                    for (code, level) in c.levels().iter().enumerate().skip(1) {
                        names.push(format!("{name}={level}"));
                        cols.push(c.codes().iter().map(|&k| f64::from(k as usize == code)).collect());
                    }
                }
            }
        }
        let p = names.len();
        let mut data = vec![0.0; n * p];
        for (j, col) in cols.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                data[i * p + j] = *v;
            }
        }
        DesignMatrix::new(names, n, data)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_cols();
        &self.data[i * p..(i + 1) * p]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.row(i)[j]).collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> DesignMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.n_cols());
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        DesignMatrix { names: self.names.clone(), n_rows: rows.len(), data }
    }

    fn scaled(&self, scaling: &[Scaling]) -> DesignMatrix {
        if scaling.is_empty() {
            return self.clone();
        }
        let p = self.n_cols();
        let mut data = self.data.clone();
        for (k, x) in data.iter_mut().enumerate() {
            let s = scaling[k % p];
            *x = (*x - s.mean) / s.sd;
        }
        DesignMatrix { names: self.names.clone(), n_rows: self.n_rows, data }
    }
}

/// Mean/sd scaling fitted on training rows. Binary and constant columns keep
/// the identity transform.
pub fn fit_scaling(x: &DesignMatrix) -> Vec<Scaling> {
    (0..x.n_cols())
        .map(|j| {
            let col = x.column(j);
            if col.iter().all(|v| *v == 0.0 || *v == 1.0) {
                return Scaling { mean: 0.0, sd: 1.0 };
            }
            let (mean, sd) = crate::stats::mean_sd(&col);
            if sd > 0.0 {
                Scaling { mean, sd }
            } else {
                Scaling { mean: 0.0, sd: 1.0 }
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub l2: f64,
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { max_iter: 2000, tol: 1e-6, l2: 1e-6, standardize: true }
    }
}

/// Squared-covariance fairness penalty `lambda * cov(s, p)^2` for one
/// sensitive indicator.
#[derive(Debug, Clone, PartialEq)]
pub struct CovPenalty {
    pub indicator: Vec<f64>,
    pub lambda: f64,
}

/// Weighted mean negative log-likelihood plus ridge and covariance penalties.
/// Parameters are `[intercept, beta_1, ..., beta_p]`; the intercept is not
/// penalized.
pub struct LogisticObjective<'a> {
    x: &'a DesignMatrix,
    y: Vec<f64>,
    w: Vec<f64>,
    w_sum: f64,
    l2: f64,
    penalties: Vec<(Vec<f64>, f64)>,
}

impl<'a> LogisticObjective<'a> {
    pub fn new(
        x: &'a DesignMatrix,
        y: &[bool],
        weights: Option<&[f64]>,
        l2: f64,
        penalties: &[CovPenalty],
    ) -> Result<Self> {
        let n = x.n_rows();
        if y.len() != n {
            return Err(Error::LengthMismatch { left: n, right: y.len() });
        }
        let w: Vec<f64> = match weights {
            Some(w) if w.len() != n => return Err(Error::LengthMismatch { left: n, right: w.len() }),
            Some(w) => w.to_vec(),
            None => vec![1.0; n],
        };
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) || !l2.is_finite() {
            return Err(Error::NonFinite("weights"));
        }
        let w_sum: f64 = w.iter().sum();
        if w_sum <= 0.0 {
            return Err(Error::NonFinite("weights"));
        }
        let mut centered = Vec::new();
        for p in penalties {
            if p.indicator.len() != n {
                return Err(Error::LengthMismatch { left: n, right: p.indicator.len() });
            }
            let mean = p.indicator.iter().zip(&w).map(|(s, w)| s * w).sum::<f64>() / w_sum;
            centered.push((p.indicator.iter().map(|s| s - mean).collect(), p.lambda));
        }
        Ok(LogisticObjective {
            x,
            y: y.iter().map(|&b| f64::from(b)).collect(),
            w,
            w_sum,
            l2,
            penalties: centered,
        })
    }

    pub fn dim(&self) -> usize {
        self.x.n_cols() + 1
    }

    /// Loss at `theta`, writing the gradient into `grad`.
    pub fn eval(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let p = self.x.n_cols();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        let mut probs = Vec::with_capacity(if self.penalties.is_empty() { 0 } else { self.x.n_rows() });
        for i in 0..self.x.n_rows() {
            let row = self.x.row(i);
            let eta = theta[0] + row.iter().zip(&theta[1..]).map(|(a, b)| a * b).sum::<f64>();
            let wi = self.w[i] / self.w_sum;
            // log(1 + e^eta) - y*eta, evaluated stably
            let softplus = if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
            loss += wi * (softplus - self.y[i] * eta);
            let mu = sigmoid(eta);
            let r = wi * (mu - self.y[i]);
            grad[0] += r;
            for j in 0..p {
                grad[j + 1] += r * row[j];
            }
            if !self.penalties.is_empty() {
                probs.push(mu);
            }
        }
        for j in 1..=p {
            loss += self.l2 * theta[j] * theta[j];
            grad[j] += 2.0 * self.l2 * theta[j];
        }
        for (s, lambda) in &self.penalties {
            if *lambda == 0.0 {
                continue;
            }
            let mut cov = 0.0;
            let mut dcov = vec![0.0; p + 1];
            for i in 0..self.x.n_rows() {
                let wi = self.w[i] / self.w_sum;
                let mu = probs[i];
                cov += wi * s[i] * mu;
                let d = wi * s[i] * mu * (1.0 - mu);
                dcov[0] += d;
                for (j, xij) in self.x.row(i).iter().enumerate() {
                    dcov[j + 1] += d * xij;
                }
            }
            loss += lambda * cov * cov;
            for (g, d) in grad.iter_mut().zip(&dcov) {
                *g += 2.0 * lambda * cov * d;
            }
        }
        loss
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub theta: Vec<f64>,
    pub loss: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Gradient descent with a Barzilai-Borwein trial step and Armijo
/// backtracking. Accepted steps never increase the loss.
pub fn minimize(obj: &LogisticObjective<'_>, theta0: Vec<f64>, cfg: &TrainConfig) -> Result<Minimum> {
    let d = obj.dim();
    let mut theta = theta0;
    let mut grad = vec![0.0; d];
    let mut loss = obj.eval(&theta, &mut grad);
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    let mut step = 1.0;
    let mut increases = 0;
    let mut trial = vec![0.0; d];
    let mut trial_grad = vec![0.0; d];
    for iter in 0..cfg.max_iter {
        let gnorm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gnorm < cfg.tol {
            return Ok(Minimum { theta, loss, iterations: iter, converged: true });
        }
        let g2: f64 = grad.iter().map(|g| g * g).sum();
        let mut t = step;
        let mut accepted = false;
        for _ in 0..60 {
            for k in 0..d {
                trial[k] = theta[k] - t * grad[k];
            }
            let trial_loss = obj.eval(&trial, &mut trial_grad);
            if trial_loss.is_finite() && trial_loss <= loss - 1e-4 * t * g2 {
                if trial_loss > loss {
                    increases += 1;
                    if increases >= 10 {
                        return Err(Error::Divergence(increases));
                    }
                } else {
                    increases = 0;
                }
                // BB1 step from the accepted move
                let (mut sy, mut ss) = (0.0, 0.0);
                for k in 0..d {
                    let s = trial[k] - theta[k];
                    sy += s * (trial_grad[k] - grad[k]);
                    ss += s * s;
                }
                step = if sy > 0.0 { (ss / sy).clamp(1e-10, 1e10) } else { t * 2.0 };
                std::mem::swap(&mut theta, &mut trial);
                std::mem::swap(&mut grad, &mut trial_grad);
                loss = trial_loss;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // no descent possible at machine precision
            return Ok(Minimum { theta, loss, iterations: iter, converged: false });
        }
    }
    Ok(Minimum { theta, loss, iterations: cfg.max_iter, converged: false })
}

/// Fits a (optionally weighted and fairness-penalized) logistic regression.
pub fn train_logreg_penalized(
    x: &DesignMatrix,
    y: &[bool],
    weights: Option<&[f64]>,
    cfg: &TrainConfig,
    penalties: &[CovPenalty],
    warm_start: Option<&FittedModelInfo>,
) -> Result<FittedModelInfo> {
    let scaling = if cfg.standardize { fit_scaling(x) } else { Vec::new() };
    let xs = x.scaled(&scaling);
    let obj = LogisticObjective::new(&xs, y, weights, cfg.l2, penalties)?;
    let theta0 = match warm_start.map(|m| &m.model_params) {
        Some(ModelParams::Linear { coefficients, intercept, .. }) if coefficients.len() == x.n_cols() => {
            std::iter::once(*intercept).chain(coefficients.iter().copied()).collect()
        }
        _ => vec![0.0; obj.dim()],
    };
    let min = minimize(&obj, theta0, cfg)?;
    let lambda: f64 = penalties.iter().map(|p| p.lambda).fold(0.0, f64::max);
    let mut tuning = BTreeMap::new();
    tuning.insert("l2".into(), cfg.l2);
    tuning.insert("tol".into(), cfg.tol);
    tuning.insert("max_iter".into(), cfg.max_iter as f64);
    tuning.insert("iterations".into(), min.iterations as f64);
    tuning.insert("converged".into(), f64::from(u8::from(min.converged)));
    if !penalties.is_empty() {
        tuning.insert("lambda".into(), lambda);
    }
    Ok(FittedModelInfo {
        loss_name: if penalties.is_empty() { LOSS_NAME } else { PENALIZED_LOSS_NAME }.to_string(),
        loss_value: min.loss,
        tuning_params: tuning,
        model_params: ModelParams::Linear {
            feature_names: x.names().to_vec(),
            coefficients: min.theta[1..].to_vec(),
            intercept: min.theta[0],
            scaling,
        },
    })
}

pub fn train_logreg(x: &DesignMatrix, y: &[bool], weights: Option<&[f64]>, cfg: &TrainConfig) -> Result<FittedModelInfo> {
    train_logreg_penalized(x, y, weights, cfg, &[], None)
}

/// Coefficients and intercept on the original (unscaled) feature scale.
pub fn raw_coefficients(model: &FittedModelInfo) -> Result<(Vec<f64>, f64)> {
    match &model.model_params {
        ModelParams::Linear { coefficients, intercept, scaling, .. } => {
            if scaling.is_empty() {
                return Ok((coefficients.clone(), *intercept));
            }
            let beta: Vec<f64> = coefficients.iter().zip(scaling).map(|(b, s)| b / s.sd).collect();
            let b0 = intercept - coefficients.iter().zip(scaling).map(|(b, s)| b * s.mean / s.sd).sum::<f64>();
            Ok((beta, b0))
        }
        ModelParams::Opaque { .. } => Err(Error::SchemaError("opaque model parameters cannot be evaluated".into())),
    }
}

/// Predicted probabilities `sigmoid(X beta + b)`.
pub fn predict(model: &FittedModelInfo, x: &DesignMatrix) -> Result<Vec<f64>> {
    let ModelParams::Linear { coefficients, intercept, scaling, .. } = &model.model_params else {
        return Err(Error::SchemaError("opaque model parameters cannot be evaluated".into()));
    };
    if coefficients.len() != x.n_cols() {
        return Err(Error::DimensionMismatch { expected: coefficients.len(), got: x.n_cols() });
    }
    Ok((0..x.n_rows())
        .map(|i| {
            let eta: f64 = x
                .row(i)
                .iter()
                .enumerate()
                .map(|(j, v)| {
                    let z = scaling.get(j).map_or(*v, |s| (v - s.mean) / s.sd);
                    z * coefficients[j]
                })
                .sum();
            sigmoid(eta + intercept)
        })
        .collect())
}

pub fn classify(scores: &[f64], threshold: f64) -> Vec<bool> {
    scores.iter().map(|s| *s >= threshold).collect()
}

pub fn accuracy(pred: &[bool], y: &[bool]) -> Result<f64> {
    if pred.len() != y.len() {
        return Err(Error::LengthMismatch { left: pred.len(), right: y.len() });
    }
    if pred.is_empty() {
        return Err(Error::EmptyGroup("no rows to score".into()));
    }
    let agree = pred.iter().zip(y).filter(|(a, b)| a == b).count();
    Ok(agree as f64 / pred.len() as f64)
}
