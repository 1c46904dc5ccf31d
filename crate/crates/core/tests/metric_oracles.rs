use std::collections::BTreeMap;

use proptest::prelude::*;
use sift_core::metrics::{self, FairnessRange};
use sift_core::mitigation::reweigh;
use sift_core::stats::Contingency;
use sift_core::table::{Categorical, Column, Table};

fn brute_chi_square(counts: &[Vec<f64>]) -> f64 {
    let n: f64 = counts.iter().flatten().sum();
    let mut stat = 0.0;
    for (i, row) in counts.iter().enumerate() {
        for (j, o) in row.iter().enumerate() {
            let ri: f64 = counts[i].iter().sum();
            let cj: f64 = counts.iter().map(|r| r[j]).sum();
            let e = ri * cj / n;
            stat += (o - e) * (o - e) / e;
        }
    }
    stat
}

fn small_table() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..5, 2usize..5).prop_flat_map(|(r, c)| {
        prop::collection::vec(prop::collection::vec(1u32..60, c), r)
            .prop_map(|rows| rows.into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn chi_square_matches_brute_force(counts in small_table()) {
        let chi = Contingency::new(counts.clone()).chi_square().unwrap();
        prop_assert!((chi.statistic - brute_chi_square(&counts)).abs() < 1e-9);
        prop_assert_eq!(chi.dof, (counts.len() - 1) * (counts[0].len() - 1));
        prop_assert!((0.0..=1.0).contains(&chi.p_value));
        prop_assert!((0.0..=1.0).contains(&chi.cramers_v));
    }

    #[test]
    fn reweighing_equalizes_weighted_rates(cells in prop::collection::vec((1usize..40, 1usize..40), 2..5)) {
        // each group gets `pos` positive and `neg` negative rows
        let mut labels = Vec::new();
        let mut y = Vec::new();
        for (g, (pos, neg)) in cells.iter().enumerate() {
            for k in 0..pos + neg {
                labels.push(format!("g{g}"));
                y.push(k < *pos);
            }
        }
        let s = Categorical::from_labels(&labels);
        let w = reweigh(&s, &y).unwrap();
        let di = metrics::weighted_disparate_impact(&y, &s, &w).unwrap();
        prop_assert!((di - 1.0).abs() < 1e-9, "di = {}", di);
    }

    #[test]
    fn disparate_impact_is_a_ratio_in_unit_interval(outcome in prop::collection::vec(any::<bool>(), 4..200), split in 1usize..3) {
        let labels: Vec<String> = (0..outcome.len()).map(|i| format!("{}", i % (split + 1))).collect();
        let groups = Categorical::from_labels(&labels);
        if let Ok(di) = metrics::disparate_impact(&outcome, &groups, None) {
            prop_assert!(di.is_infinite() || (0.0..=1.0).contains(&di));
        }
    }
}

#[test]
fn disparate_impact_on_hand_built_rates() {
    // a: 3/4 positive, b: 1/4 positive
    let groups = Categorical::from_labels(&["a", "a", "a", "a", "b", "b", "b", "b"]);
    let outcome = [true, true, true, false, true, false, false, false];
    assert_eq!(metrics::disparate_impact(&outcome, &groups, None).unwrap(), 1.0 / 3.0);
    assert_eq!(metrics::disparate_impact(&outcome, &groups, Some("a")).unwrap(), 1.0 / 3.0);
    assert_eq!(metrics::disparate_impact(&outcome, &groups, Some("b")).unwrap(), 3.0);
    let rates = vec![("x".to_string(), 0.4), ("y".to_string(), 0.5), ("z".to_string(), 0.8)];
    assert_eq!(metrics::disparate_impact_from_rates(&rates, None).unwrap(), 0.5);
    assert_eq!(metrics::disparate_impact_from_rates(&rates, Some("z")).unwrap(), 0.5);
}

#[test]
fn disparate_impact_report_flags_outside_range() {
    let t = Table::new()
        .with_column("sex", Column::Categorical(Categorical::from_labels(&["f", "f", "f", "f", "m", "m", "m", "m"])))
        .unwrap();
    let outcome = [true, false, false, false, true, true, false, false];
    let r = metrics::disp_impact_report(&outcome, &t, &["sex".to_string()], FairnessRange::default(), &BTreeMap::new())
        .unwrap();
    let f = &r.per_feature["sex"];
    assert_eq!(f.value, 0.5);
    assert!(f.flagged);
    assert_eq!(f.groups, vec!["f".to_string()]);
}

#[test]
fn sparse_groups_flag_the_small_level() {
    let mut race = vec!["white"; 95];
    race.extend(["non-white"; 5]);
    let t = Table::new().with_column("race", Column::Categorical(Categorical::from_labels(&race))).unwrap();
    let r = metrics::compute_samp_proportion(&t, &["race".to_string()], 0.10).unwrap();
    assert!(r.per_feature["race"].flagged);
    assert_eq!(r.per_feature["race"].groups, vec!["non-white".to_string()]);
}

#[test]
fn proxy_needs_both_significance_and_effect_size() {
    let n = 4000;
    let sex: Vec<&str> = (0..n).map(|i| if i % 2 == 0 { "m" } else { "f" }).collect();
    // a copy of sex is a proxy; a weakly tilted feature is significant but small
    let copy: Vec<f64> = (0..n).map(|i| f64::from(u8::from(i % 2 == 0))).collect();
    let weak: Vec<f64> = (0..n).map(|i| f64::from(u8::from((i % 2 == 0 && i % 10 < 6) || (i % 2 == 1 && i % 10 < 4)))).collect();
    let t = Table::new()
        .with_column("sex", Column::Categorical(Categorical::from_labels(&sex)))
        .unwrap()
        .with_column("copy", Column::Numeric(copy))
        .unwrap()
        .with_column("weak", Column::Numeric(weak))
        .unwrap();
    let scan = metrics::compute_chi_sq_test(&t, &["sex".into()], &["copy".into(), "weak".into()], 0.01, 0.5).unwrap();
    let weak_pair = scan.pairs.iter().find(|p| p.candidate == "weak").unwrap();
    assert!(weak_pair.p_value < 0.01 / 2.0);
    assert!(!weak_pair.proxy);
    assert_eq!(scan.proxies()["sex"], vec!["copy".to_string()]);
}
