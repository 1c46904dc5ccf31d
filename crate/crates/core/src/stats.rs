//! Test statistics shared by the detection routines.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Result of a Pearson chi-square test on an r x c table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub cramers_v: f64,
    pub n: f64,
}

/// Observed counts, rows = levels of the first variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Contingency {
    counts: Vec<Vec<f64>>,
}

impl Contingency {
    pub fn new(counts: Vec<Vec<f64>>) -> Self {
        Contingency { counts }
    }

    pub fn from_codes(a: &[u32], a_levels: usize, b: &[u32], b_levels: usize) -> Self {
        let mut counts = vec![vec![0.0; b_levels]; a_levels];
        for (&i, &j) in a.iter().zip(b) {
            counts[i as usize][j as usize] += 1.0;
        }
        Contingency { counts }
    }

    pub fn counts(&self) -> &[Vec<f64>] {
        &self.counts
    }

    fn margins(&self) -> (Vec<f64>, Vec<f64>, f64) {
        let rows: Vec<f64> = self.counts.iter().map(|r| r.iter().sum()).collect();
        let cols: Vec<f64> = (0..self.counts.first().map_or(0, Vec::len))
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect();
        let n = rows.iter().sum();
        (rows, cols, n)
    }

    /// True when some row or column sums to zero.
    pub fn is_degenerate(&self) -> bool {
        let (rows, cols, _) = self.margins();
        rows.len() < 2 || cols.len() < 2 || rows.iter().chain(&cols).any(|m| *m == 0.0)
    }

    /// Pearson statistic without continuity correction. `None` for degenerate
    /// tables.
    pub fn chi_square(&self) -> Option<ChiSquare> {
        if self.is_degenerate() {
            return None;
        }
        let (rows, cols, n) = self.margins();
        let mut statistic = 0.0;
        for (i, row) in self.counts.iter().enumerate() {
            for (j, &observed) in row.iter().enumerate() {
                let expected = rows[i] * cols[j] / n;
                statistic += (observed - expected).powi(2) / expected;
            }
        }
        let dof = (rows.len() - 1) * (cols.len() - 1);
        let k = (rows.len() - 1).min(cols.len() - 1) as f64;
        let cramers_v = (statistic / (n * k)).sqrt().min(1.0);
        Some(ChiSquare { statistic, dof, p_value: chi_square_sf(statistic, dof), cramers_v, n })
    }
}

pub fn chi_square_sf(statistic: f64, dof: usize) -> f64 {
    if statistic <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(dof as f64).map(|d| d.sf(statistic)).unwrap_or(f64::NAN)
}

/// Two-sided p-value of a standard normal statistic.
pub fn normal_two_sided(z: f64) -> f64 {
    let n = Normal::standard();
    (2.0 * n.sf(z.abs())).min(1.0)
}

/// Survival function of the Kolmogorov distribution, P(K > lambda).
///
/// Uses the alternating series for large arguments and the Jacobi theta form
/// for small ones; both are truncated once a term drops below 1e-10.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // P(K <= l) = sqrt(2 pi)/l * sum_{k>=1} exp(-(2k-1)^2 pi^2 / (8 l^2))
        let pi2 = std::f64::consts::PI.powi(2);
        let mut cdf = 0.0;
        for k in 1..200 {
            let odd = (2 * k - 1) as f64;
            let term = (-(odd * odd) * pi2 / (8.0 * lambda * lambda)).exp();
            cdf += term;
            if term < 1e-10 {
                break;
            }
        }
        let cdf = (2.0 * std::f64::consts::PI).sqrt() / lambda * cdf;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let mut sum = 0.0;
        for k in 1..200 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            sum += if k % 2 == 1 { term } else { -term };
            if term < 1e-10 {
                break;
            }
        }
        (2.0 * sum).clamp(0.0, 1.0)
    }
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.
/// Returns `(D, p)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    if a.is_empty() || b.is_empty() {
        return (0.0, 1.0);
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < xs.len() && j < ys.len() {
        let x = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= x {
            i += 1;
        }
        while j < ys.len() && ys[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = (n * m / (n + m)).sqrt();
    (d, kolmogorov_sf(ne * d))
}

/// Two-sample z-test on means from summary statistics.
pub fn z_test_means(mean_a: f64, sd_a: f64, n_a: f64, mean_b: f64, sd_b: f64, n_b: f64) -> (f64, f64) {
    let se = (sd_a * sd_a / n_a + sd_b * sd_b / n_b).sqrt();
    if se == 0.0 {
        return if mean_a == mean_b { (0.0, 1.0) } else { (f64::INFINITY, 0.0) };
    }
    let z = (mean_a - mean_b) / se;
    (z, normal_two_sided(z))
}

pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn independent_table_has_zero_statistic() {
        let t = Contingency::new(vec![vec![25.0, 25.0], vec![25.0, 25.0]]);
        let c = t.chi_square().unwrap();
        assert_eq!(c.statistic, 0.0);
        assert_eq!(c.cramers_v, 0.0);
        assert_eq!(c.p_value, 1.0);
    }

    #[test]
    fn hand_evaluated_two_by_two() {
        // n (ad - bc)^2 / (r1 r2 c1 c2)
        let expected = 100.0 * (10.0f64 * 40.0 - 20.0 * 30.0).powi(2) / (30.0 * 70.0 * 40.0 * 60.0);
        let c = Contingency::new(vec![vec![10.0, 20.0], vec![30.0, 40.0]]).chi_square().unwrap();
        assert_relative_eq!(c.statistic, expected, epsilon = 1e-12);
        assert_relative_eq!(c.statistic, 0.7936507936507936, epsilon = 1e-12);
        assert_eq!(c.dof, 1);
    }

    #[test]
    fn bijective_association_has_unit_v() {
        let c = Contingency::new(vec![vec![500.0, 0.0], vec![0.0, 500.0]]).chi_square().unwrap();
        assert_relative_eq!(c.cramers_v, 1.0, epsilon = 1e-12);
        assert!(c.p_value < 1e-100);
    }

    #[test]
    fn degenerate_tables_are_rejected() {
        assert!(Contingency::new(vec![vec![3.0, 0.0], vec![4.0, 0.0]]).chi_square().is_none());
        assert!(Contingency::new(vec![vec![3.0, 4.0]]).chi_square().is_none());
    }

    #[test]
    fn chi_square_p_value_reference() {
        // scipy.stats.chi2.sf(10.083333333333334, 3)
        assert_relative_eq!(chi_square_sf(10.083333333333334, 3), 0.017_870_892_893_625_56, epsilon = 1e-10);
    }

    #[test]
    fn kolmogorov_sf_reference_values() {
        // scipy.stats.kstwobign.sf
        assert_relative_eq!(kolmogorov_sf(0.5), 0.9639452436648751, epsilon = 1e-9);
        assert_relative_eq!(kolmogorov_sf(1.0), 0.26999967167735456, epsilon = 1e-9);
        assert_relative_eq!(kolmogorov_sf(1.18), 0.1234538094297657, epsilon = 1e-9);
        assert_relative_eq!(kolmogorov_sf(1.5), 0.022217962616525127, epsilon = 1e-9);
        assert_relative_eq!(kolmogorov_sf(2.0), 0.0006709252557796953, epsilon = 1e-12);
    }

    #[test]
    fn ks_statistic_on_small_samples() {
        let (d, _) = ks_two_sample(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]);
        assert_eq!(d, 0.0);
        let (d, _) = ks_two_sample(&[1.0, 2.0], &[3.0, 4.0]);
        assert_eq!(d, 1.0);
        // ties straddling both samples: ECDFs 0.5/1.0 vs 0.0/1.0
        let (d, _) = ks_two_sample(&[0.0, 1.0], &[1.0, 1.0]);
        assert_eq!(d, 0.5);
    }

    #[test]
    fn z_test_basics() {
        let (z, p) = z_test_means(0.0, 1.0, 100.0, 0.0, 1.0, 100.0);
        assert_eq!(z, 0.0);
        assert_relative_eq!(p, 1.0);
        let (_, p) = z_test_means(1.0, 1.0, 1000.0, 0.0, 1.0, 1000.0);
        assert!(p < 1e-50);
    }
}
