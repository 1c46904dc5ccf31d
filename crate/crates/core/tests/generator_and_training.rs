use proptest::prelude::*;
use sift_core::lab::{self, CovPenalty, DesignMatrix, LogisticObjective, SplitSpec, TrainConfig};
use sift_core::sim::{self, SimulationConfig};

fn matrix(rows: &[Vec<f64>]) -> DesignMatrix {
    let names = (0..rows[0].len()).map(|j| format!("x{j}")).collect();
    DesignMatrix::from_rows(names, rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn gradient_matches_central_differences(
        rows in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 8..30),
        theta in prop::collection::vec(-1.5f64..1.5, 4),
        lambda in 0.0f64..50.0,
        l2 in 0.0f64..0.5,
    ) {
        let n = rows.len();
        let x = matrix(&rows);
        let y: Vec<bool> = (0..n).map(|i| (rows[i][0] + rows[i][1]) > 0.0).collect();
        let w: Vec<f64> = (0..n).map(|i| 0.5 + (i % 3) as f64 * 0.25).collect();
        let s: Vec<f64> = (0..n).map(|i| f64::from(u8::from(i % 2 == 0))).collect();
        let obj = LogisticObjective::new(&x, &y, Some(&w), l2, &[CovPenalty { indicator: s, lambda }]).unwrap();
        let mut grad = vec![0.0; obj.dim()];
        obj.eval(&theta, &mut grad);
        let h = 1e-6;
        let mut scratch = vec![0.0; obj.dim()];
        for k in 0..obj.dim() {
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[k] += h;
            down[k] -= h;
            let fd = (obj.eval(&up, &mut scratch) - obj.eval(&down, &mut scratch)) / (2.0 * h);
            let rel = (fd - grad[k]).abs() / grad[k].abs().max(fd.abs()).max(1e-3);
            prop_assert!(rel < 1e-5, "coordinate {}: analytic {} numeric {}", k, grad[k], fd);
        }
    }
}

#[test]
fn segment_probabilities_follow_the_logistic_formula() {
    let adult = sim::standin_adult(20_000, 3).unwrap();
    let cfg = SimulationConfig::with_seed(3);
    let seg = sim::simulate_segments(&adult, &cfg, 3).unwrap();
    let marital = adult.categorical("marital_status").unwrap();
    let sex = adult.categorical("sex").unwrap();
    for i in 0..adult.n_rows() {
        let expected = match (marital.label(i), sex.label(i)) {
            ("married", "male") => lab::sigmoid(1.0),
            ("single", "female") => lab::sigmoid(-1.0),
            _ => 0.5,
        };
        assert!((seg.p_tilde[i] - expected).abs() < 1e-15);
    }
    assert!((lab::sigmoid(1.0) - 0.7311).abs() < 1e-4);
    assert!(seg.p_uncorrelated.iter().all(|p| (0.2..0.8).contains(p)));
    // married men: empirical mean of each C^c column within 4 binomial sd
    let rows: Vec<usize> = (0..adult.n_rows()).filter(|&i| marital.label(i) == "married" && sex.label(i) == "male").collect();
    let p = lab::sigmoid(1.0);
    let band = 4.0 * (p * (1.0 - p) / rows.len() as f64).sqrt();
    for col in &seg.correlated {
        let mean = rows.iter().map(|&i| col[i]).sum::<f64>() / rows.len() as f64;
        assert!((mean - p).abs() < band, "mean {mean} vs {p} +- {band}");
    }
}

fn invert(mut a: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut inv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        inv.swap(c, p);
        let d = a[c][c];
        for j in 0..n {
            a[c][j] /= d;
            inv[c][j] /= d;
        }
        for r in 0..n {
            if r != c {
                let f = a[r][c];
                for j in 0..n {
                    a[r][j] -= f * a[c][j];
                    inv[r][j] -= f * inv[c][j];
                }
            }
        }
    }
    inv
}

#[test]
fn noise_free_logistic_fit_recovers_coefficients() {
    // The full one-hot age block is collinear with the intercept, so the
    // first bin is left out as the reference level.
    let cfg = SimulationConfig { noise_sd: 0.0, ..SimulationConfig::with_seed(21) };
    let adult = sim::standin_adult(20_000, 21).unwrap();
    let data = sim::generate(&adult, &cfg).unwrap();
    let names: Vec<String> = data.x_names()[1..].to_vec();
    let truth: Vec<f64> = data.beta[1..].to_vec();
    let x = DesignMatrix::from_table(&data.table, &names).unwrap();
    let y = data.y().unwrap();
    let model = lab::train_logreg(&x, &y, None, &TrainConfig { l2: 1e-6, tol: 1e-8, ..TrainConfig::default() }).unwrap();
    assert_eq!(model.tuning_params["converged"], 1.0);
    let (beta, b0) = lab::raw_coefficients(&model).unwrap();

    // Fisher information at the true parameters gives each coordinate's
    // sampling standard error.
    let d = names.len() + 1;
    let mut info = vec![vec![0.0; d]; d];
    for i in 0..x.n_rows() {
        let row: Vec<f64> = std::iter::once(1.0).chain(x.row(i).iter().copied()).collect();
        let eta = cfg.intercept + row[1..].iter().zip(&truth).map(|(a, b)| a * b).sum::<f64>();
        let w = lab::sigmoid(eta) * (1.0 - lab::sigmoid(eta));
        for a in 0..d {
            for b in 0..d {
                info[a][b] += w * row[a] * row[b];
            }
        }
    }
    let cov = invert(info);
    assert!((b0 - cfg.intercept).abs() < 4.0 * cov[0][0].sqrt());
    for j in 0..names.len() {
        let se = cov[j + 1][j + 1].sqrt();
        let err = (beta[j] - truth[j]).abs();
        assert!(err < 4.0 * se, "{}: fitted {} true {} se {se}", names[j], beta[j], truth[j]);
    }
}

#[test]
fn noisy_fit_recovers_signs_on_a_half_split() {
    let adult = sim::standin_adult(sim::ADULT_N, 4).unwrap();
    let data = sim::generate(&adult, &SimulationConfig::with_seed(4)).unwrap();
    let x = data.x().unwrap();
    let y = data.y().unwrap();
    let (train, _) = lab::split_train_test(x.n_rows(), SplitSpec { test_fraction: 0.5, seed: 4 }).unwrap();
    assert_eq!(train.len(), 22_611);
    let yt: Vec<bool> = train.iter().map(|&i| y[i]).collect();
    let model = lab::train_logreg(&x.select_rows(&train), &yt, None, &TrainConfig::default()).unwrap();
    let (beta, _) = lab::raw_coefficients(&model).unwrap();
    let strong: Vec<usize> = (0..beta.len()).filter(|&j| data.beta[j].abs() > 0.5).collect();
    let right = strong.iter().filter(|&&j| beta[j].signum() == data.beta[j].signum()).count();
    assert!(right as f64 >= 0.95 * strong.len() as f64, "{right}/{}", strong.len());
}

#[test]
fn export_writes_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let adult = sim::standin_adult(500, 1).unwrap();
    let data = sim::generate(&adult, &SimulationConfig::with_seed(1)).unwrap();
    let path = dir.path().join("d.csv");
    data.export(&path).unwrap();
    let back = sift_core::Table::read_csv(&path).unwrap();
    assert_eq!(back.n_rows(), 500);
    let side: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(sim::sidecar_path(&path)).unwrap()).unwrap();
    assert_eq!(side["config"]["seed"], 1);
    assert_eq!(side["beta"]["age_17_25"], 0.0);
    assert_eq!(side["beta"]["cu_45"], 0.0);
    let income = side["beta"]["income"].as_f64().unwrap();
    assert!((income - data.beta[sim::AGE_BINS.len()]).abs() < 1e-12);
}
