//! Synthetic marketing data: demographics from the UCI Adult layout plus
//! simulated consumer segments and an early-adopter target.
//!
//! Draw order is fixed per seed. Each step uses its own ChaCha8 stream of the
//! same seed: 0 for segments (p_j, then C^c row-major, then C^u row-major),
//! 1 for the target (beta, then z, then y), 2 for subsampling and 3 for
//! bootstrapping the bundled stand-in.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lab::{sigmoid, DesignMatrix};
use crate::table::{Categorical, Column, Table};

pub const ADULT_N: usize = 45_222;
pub const SENSITIVE: [&str; 3] = ["marital_status", "race", "sex"];
pub const RESPONSE: &str = "y";
pub const INCOME: &str = "income";
pub const AGE_BINS: [(&str, u32, u32); 7] = [
    ("age_17_25", 17, 25),
    ("age_26_35", 26, 35),
    ("age_36_45", 36, 45),
    ("age_46_55", 46, 55),
    ("age_56_65", 56, 65),
    ("age_66_75", 66, 75),
    ("age_75_plus", 76, u32::MAX),
];

const STANDIN: &str = include_str!("../data/adult_standin.data");
const ADULT_FIELDS: usize = 15;

const STREAM_SEGMENTS: u64 = 0;
const STREAM_TARGET: u64 = 1;
const STREAM_SUBSAMPLE: u64 = 2;
const STREAM_BOOTSTRAP: u64 = 3;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub seed: u64,
    pub n_correlated: usize,
    pub n_uncorrelated: usize,
    pub beta_low: f64,
    pub beta_high: f64,
    pub intercept: f64,
    pub segment_intercept: f64,
    pub n_beta_uncorrelated: usize,
    pub noise_sd: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            seed: 0,
            n_correlated: 5,
            n_uncorrelated: 45,
            beta_low: -2.0,
            beta_high: 2.5,
            intercept: -0.5,
            segment_intercept: -1.0,
            n_beta_uncorrelated: 10,
            noise_sd: 1.0,
        }
    }
}

impl SimulationConfig {
    pub fn with_seed(seed: u64) -> Self {
        SimulationConfig { seed, ..Self::default() }
    }

    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.n_correlated == 0 || self.n_uncorrelated == 0 {
            return bad("segment counts must be positive");
        }
        if self.n_beta_uncorrelated > self.n_uncorrelated {
            return bad("n_beta_uncorrelated exceeds n_uncorrelated");
        }
        if !(self.beta_low < self.beta_high) {
            return bad("beta_low must be below beta_high");
        }
        if !(self.noise_sd >= 0.0) || !self.intercept.is_finite() || !self.segment_intercept.is_finite() {
            return bad("noise_sd must be non-negative and intercepts finite");
        }
        Ok(())
    }

    pub fn correlated_names(&self) -> Vec<String> {
        (1..=self.n_correlated).map(|j| format!("cc_{j}")).collect()
    }

    pub fn uncorrelated_names(&self) -> Vec<String> {
        (1..=self.n_uncorrelated).map(|j| format!("cu_{j}")).collect()
    }

    /// Feature order of X: age bins, income, C^c, C^u.
    pub fn x_names(&self) -> Vec<String> {
        let mut names: Vec<String> = AGE_BINS.iter().map(|b| b.0.to_string()).collect();
        names.push(INCOME.into());
        names.extend(self.correlated_names());
        names.extend(self.uncorrelated_names());
        names
    }
}

pub fn age_bin(age: u32) -> Option<&'static str> {
    AGE_BINS.iter().find(|(_, lo, hi)| age >= *lo && age <= *hi).map(|b| b.0)
}

/// Parses rows in the `adult.data` / `adult.test` layout. Rows with a `?`
/// field are dropped, as are blank and comment lines (`adult.test` starts
/// with one).
pub fn parse_adult<R: Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let mut ages: Vec<&'static str> = Vec::new();
    let mut income = Vec::new();
    let (mut marital, mut race, mut sex) = (Vec::new(), Vec::new(), Vec::new());
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() == 1 && (rec[0].is_empty() || rec[0].starts_with('|')) {
            continue;
        }
        if rec.len() != ADULT_FIELDS {
            return Err(Error::SchemaError(format!("record {}: expected {ADULT_FIELDS} fields, got {}", line + 1, rec.len())));
        }
        if rec.iter().any(|f| f == "?") {
            continue;
        }
        let age: u32 = rec[0].parse().map_err(|_| Error::SchemaError(format!("record {}: bad age {}", line + 1, &rec[0])))?;
        ages.push(age_bin(age).ok_or_else(|| Error::SchemaError(format!("record {}: age {age} below 17", line + 1)))?);
        marital.push(if rec[5].starts_with("Married") { "married" } else { "single" });
        race.push(if &rec[8] == "White" { "white" } else { "non-white" });
        sex.push(match &rec[9] {
            "Male" => "male",
            "Female" => "female",
            other => return Err(Error::SchemaError(format!("record {}: bad sex {other}", line + 1))),
        });
        income.push(match rec[14].trim_end_matches('.') {
            ">50K" => 1.0,
            "<=50K" => 0.0,
            other => return Err(Error::SchemaError(format!("record {}: bad income {other}", line + 1))),
        });
    }
    let mut t = Table::new();
    for (name, _, _) in AGE_BINS {
        t.push(name, Column::Numeric(ages.iter().map(|a| f64::from(u8::from(*a == name))).collect()))?;
    }
    t.push(INCOME, Column::Numeric(income))?;
    t.push("marital_status", Column::Categorical(Categorical::from_labels(&marital)))?;
    t.push("race", Column::Categorical(Categorical::from_labels(&race)))?;
    t.push("sex", Column::Categorical(Categorical::from_labels(&sex)))?;
    Ok(t)
}

/// Loads and concatenates Adult files (typically `adult.data` and
/// `adult.test`, which together leave 45,222 complete rows).
pub fn load_adult<P: AsRef<Path>>(paths: &[P]) -> Result<Table> {
    let mut text = String::new();
    for p in paths {
        let p = p.as_ref();
        if !p.exists() {
            return Err(Error::FileNotFound(p.to_path_buf()));
        }
        text.push_str(&std::fs::read_to_string(p)?);
        text.push('\n');
    }
    parse_adult(text.as_bytes())
}

/// The bundled 500-row stand-in, bootstrapped to `n` rows.
pub fn standin_adult(n: usize, seed: u64) -> Result<Table> {
    let base = parse_adult(STANDIN.as_bytes())?;
    let mut r = rng(seed, STREAM_BOOTSTRAP);
    let rows: Vec<usize> = (0..n).map(|_| r.random_range(0..base.n_rows())).collect();
    Ok(base.select_rows(&rows))
}

/// Consumer segments: column-major 0/1 values plus the probabilities used.
#[derive(Debug, Clone, PartialEq)]
pub struct Segments {
    pub correlated: Vec<Vec<f64>>,
    pub uncorrelated: Vec<Vec<f64>>,
    pub p_tilde: Vec<f64>,
    pub p_uncorrelated: Vec<f64>,
}

pub fn simulate_segments(adult: &Table, cfg: &SimulationConfig, seed: u64) -> Result<Segments> {
    let marital = adult.categorical("marital_status")?;
    let sex = adult.categorical("sex")?;
    let n = adult.n_rows();
    let p_tilde: Vec<f64> = (0..n)
        .map(|i| {
            let im = f64::from(u8::from(marital.label(i) == "married"));
            let is = f64::from(u8::from(sex.label(i) == "male"));
            sigmoid(cfg.segment_intercept + im + is)
        })
        .collect();
    let mut r = rng(seed, STREAM_SEGMENTS);
    let p_uncorrelated: Vec<f64> = (0..cfg.n_uncorrelated).map(|_| r.random_range(0.2..0.8)).collect();
    let mut correlated = vec![vec![0.0; n]; cfg.n_correlated];
    for (i, p) in p_tilde.iter().enumerate() {
        for col in correlated.iter_mut() {
            col[i] = f64::from(u8::from(r.random_bool(*p)));
        }
    }
    let mut uncorrelated = vec![vec![0.0; n]; cfg.n_uncorrelated];
    for i in 0..n {
        for (col, p) in uncorrelated.iter_mut().zip(&p_uncorrelated) {
            col[i] = f64::from(u8::from(r.random_bool(*p)));
        }
    }
    Ok(Segments { correlated, uncorrelated, p_tilde, p_uncorrelated })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetDraw {
    pub y: Vec<bool>,
    pub beta: Vec<f64>,
    pub z: Vec<f64>,
    pub p_y: Vec<f64>,
}

/// Indices of X (in [`SimulationConfig::x_names`] order) that get a
/// nonzero coefficient: income, every C^c, the first C^u columns.
pub fn active_coefficients(cfg: &SimulationConfig) -> Vec<usize> {
    let income = AGE_BINS.len();
    let cc = income + 1;
    let cu = cc + cfg.n_correlated;
    std::iter::once(income).chain(cc..cu).chain(cu..cu + cfg.n_beta_uncorrelated).collect()
}

pub fn simulate_target(x: &DesignMatrix, cfg: &SimulationConfig, seed: u64) -> Result<TargetDraw> {
    let expected = AGE_BINS.len() + 1 + cfg.n_correlated + cfg.n_uncorrelated;
    if x.n_cols() != expected {
        return Err(Error::DimensionMismatch { expected, got: x.n_cols() });
    }
    let mut r = rng(seed, STREAM_TARGET);
    let mut beta = vec![0.0; expected];
    for j in active_coefficients(cfg) {
        beta[j] = r.random_range(cfg.beta_low..cfg.beta_high);
    }
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let z: Vec<f64> = (0..x.n_rows()).map(|_| noise.sample(&mut r)).collect();
    let p_y: Vec<f64> = (0..x.n_rows())
        .map(|i| {
            let eta: f64 = x.row(i).iter().zip(&beta).map(|(a, b)| a * b).sum();
            sigmoid(cfg.intercept + eta + z[i])
        })
        .collect();
    let y = p_y.iter().map(|p| r.random_bool(*p)).collect();
    Ok(TargetDraw { y, beta, z, p_y })
}

/// How a dataset was subsampled from its full build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsampleInfo {
    pub seed: u64,
    pub n_sub: usize,
    pub nonwhite_frac: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    /// X columns, then the sensitive features, then `y`.
    pub table: Table,
    pub beta: Vec<f64>,
    pub z: Vec<f64>,
    pub config: SimulationConfig,
    pub subsample: Option<SubsampleInfo>,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    config: &'a SimulationConfig,
    n_rows: usize,
    intercept: f64,
    beta: BTreeMap<&'a str, f64>,
    subsample: &'a Option<SubsampleInfo>,
}

impl GeneratedDataset {
    pub fn x_names(&self) -> Vec<String> {
        self.config.x_names()
    }

    pub fn sensitive(&self) -> Vec<String> {
        SENSITIVE.iter().map(|s| s.to_string()).collect()
    }

    pub fn y(&self) -> Result<Vec<bool>> {
        self.table.column(RESPONSE)?.binary(RESPONSE, "1")
    }

    pub fn x(&self) -> Result<DesignMatrix> {
        DesignMatrix::from_table(&self.table, &self.x_names())
    }

    pub fn n_rows(&self) -> usize {
        self.table.n_rows()
    }

    /// Writes the table as CSV and `<path>.json` with config, seed and the
    /// ground-truth coefficients.
    pub fn export(&self, path: &Path) -> Result<()> {
        self.table.write_csv(path)?;
        let names = self.x_names();
        let sidecar = Sidecar {
            config: &self.config,
            n_rows: self.n_rows(),
            intercept: self.config.intercept,
            beta: names.iter().map(String::as_str).zip(self.beta.iter().copied()).collect(),
            subsample: &self.subsample,
        };
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }
}

pub fn sidecar_path(csv: &Path) -> std::path::PathBuf {
    let mut name = csv.file_name().unwrap_or_default().to_os_string();
    name.push(".json");
    csv.with_file_name(name)
}

/// Builds the full dataset from demographics. Pure in (adult, cfg).
pub fn generate(adult: &Table, cfg: &SimulationConfig) -> Result<GeneratedDataset> {
    cfg.validate()?;
    let segs = simulate_segments(adult, cfg, cfg.seed)?;
    let mut table = Table::new();
    for (name, _, _) in AGE_BINS {
        table.push(name, adult.column(name)?.clone())?;
    }
    table.push(INCOME, adult.column(INCOME)?.clone())?;
    for (name, col) in cfg.correlated_names().iter().zip(segs.correlated) {
        table.push(name, Column::Numeric(col))?;
    }
    for (name, col) in cfg.uncorrelated_names().iter().zip(segs.uncorrelated) {
        table.push(name, Column::Numeric(col))?;
    }
    let x = DesignMatrix::from_table(&table, &cfg.x_names())?;
    let target = simulate_target(&x, cfg, cfg.seed)?;
    for s in SENSITIVE {
        table.push(s, adult.column(s)?.clone())?;
    }
    table.push(RESPONSE, Column::Numeric(target.y.iter().map(|&v| f64::from(u8::from(v))).collect()))?;
    Ok(GeneratedDataset { table, beta: target.beta, z: target.z, config: cfg.clone(), subsample: None })
}

/// Stratified subsample with exactly `round(nonwhite_frac * n_sub)`
/// non-white rows; rows keep their original order.
pub fn make_project1_subsample(
    full: &GeneratedDataset,
    seed: u64,
    nonwhite_frac: f64,
    n_sub: usize,
) -> Result<GeneratedDataset> {
    if !(0.0..=1.0).contains(&nonwhite_frac) {
        return Err(Error::BadFraction(nonwhite_frac));
    }
    let race = full.table.categorical("race")?;
    let (nonwhite, white): (Vec<usize>, Vec<usize>) = (0..race.len()).partition(|&i| race.label(i) == "non-white");
    let n_nw = (nonwhite_frac * n_sub as f64).round() as usize;
    let n_w = n_sub - n_nw;
    for (group, needed, pool) in [("non-white", n_nw, &nonwhite), ("white", n_w, &white)] {
        if pool.len() < needed {
            return Err(Error::InsufficientRows { group: group.into(), needed, available: pool.len() });
        }
    }
    let mut r = rng(seed, STREAM_SUBSAMPLE);
    let mut rows: Vec<usize> = index::sample(&mut r, nonwhite.len(), n_nw).into_iter().map(|k| nonwhite[k]).collect();
    rows.extend(index::sample(&mut r, white.len(), n_w).into_iter().map(|k| white[k]));
    rows.sort_unstable();
    Ok(GeneratedDataset {
        table: full.table.select_rows(&rows),
        beta: full.beta.clone(),
        z: rows.iter().map(|&i| full.z[i]).collect(),
        config: full.config.clone(),
        subsample: Some(SubsampleInfo { seed, n_sub, nonwhite_frac }),
    })
}
