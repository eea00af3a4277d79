use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seeds_core::combiner::{
    combine, crossfit_prepared, optimal_weights, required_additional_labels, seeds_estimate,
    unlabeled_covariance, InfluenceFolds, RidgePolicy, SeedsOptions,
};
use seeds_core::estimators::{estimate_all, estimate_prepared, Covariance, PreparedPoint};
use seeds_core::imputation::BasisSpec;
use seeds_core::kernels::{BandwidthOverrides, Bandwidths};
use seeds_core::simgen::{generate, SettingId, SettingSpec};
use seeds_core::types::{build_time_grid, CensorCode, Dataset, Label, SubjectRecord};

fn record(id: u64, left: f64, right: f64, x: f64, status: CensorCode, labeled: bool) -> SubjectRecord {
    SubjectRecord {
        id,
        left,
        right,
        label: labeled.then_some(Label { time: x, status }),
        surrogate_times: vec![x],
        surrogate_statuses: vec![status],
        baseline: vec![],
        process_events: vec![],
    }
}

fn spd(entries: &[f64; 9], jitter: f64) -> [[f64; 3]; 3] {
    let mut v = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            v[i][j] = (0..3).map(|k| entries[3 * i + k] * entries[3 * j + k]).sum::<f64>();
        }
        v[i][i] += jitter;
    }
    v
}

fn quad(v: &[[f64; 3]; 3], m: &[f64; 3]) -> f64 {
    (0..3).map(|i| (0..3).map(|j| m[i] * v[i][j] * m[j]).sum::<f64>()).sum()
}

fn with_ridge(v: &[[f64; 3]; 3], delta: f64) -> [[f64; 3]; 3] {
    let mut r = *v;
    for (j, row) in r.iter_mut().enumerate() {
        row[j] += delta;
    }
    r
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn weights_minimise_the_quadratic_form(
        entries in prop::array::uniform9(-2.0f64..2.0),
        jitter in 1e-3f64..1.0,
        delta in 0.0f64..0.5,
        seed in any::<u64>(),
    ) {
        let v = spd(&entries, jitter);
        let w = optimal_weights(&v, delta).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let m = with_ridge(&v, delta);
        let best = quad(&m, &w);
        let tol = 1e-12 * (1.0 + best.abs());
        for j in 0..3 {
            prop_assert!(best <= m[j][j] + tol);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..1000 {
            let a: f64 = rng.random_range(-3.0..3.0);
            let b: f64 = rng.random_range(-3.0..3.0);
            let alt = [a, b, 1.0 - a - b];
            prop_assert!(best <= quad(&m, &alt) + tol);
        }
    }

    #[test]
    fn combination_is_location_equivariant(
        entries in prop::array::uniform9(-2.0f64..2.0),
        est in prop::array::uniform3(0.0f64..1.0),
        shift in -5.0f64..5.0,
    ) {
        let v = spd(&entries, 0.1);
        let cov = Covariance { matrix: v, present: [true; 3] };
        let psi = [1.0, -1.0, 0.5];
        let infl = InfluenceFolds::plug_in([Some(&psi[..]), Some(&psi[..]), Some(&psi[..])]);
        let policy = RidgePolicy::Fixed { value: 0.0 };
        let a = combine(1.0, est.map(Some), &cov, &policy, &infl, false).unwrap();
        let b = combine(1.0, est.map(|e| Some(e + shift)), &cov, &policy, &infl, false).unwrap();
        prop_assert_eq!(a.weights, b.weights);
        prop_assert!((b.value - a.value - shift).abs() < 1e-12);
    }
}

#[test]
fn diagonal_weights_are_inverse_variances() {
    let v = [[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 4.0]];
    let w = optimal_weights(&v, 0.0).unwrap();
    for (got, want) in w.iter().zip([4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0]) {
        assert!((got - want).abs() < 1e-14);
    }
}

#[test]
fn additional_label_examples() {
    assert_eq!(required_additional_labels(1.0, 1.0, 500).unwrap(), 0);
    assert_eq!(required_additional_labels(2.0, 1.0, 1000).unwrap(), 1000);
    assert_eq!(required_additional_labels(4.6e-4, 1e-4, 698).unwrap(), 2513);
    assert_eq!(required_additional_labels(0.5, 1.0, 100).unwrap(), 0);
}

fn bandwidths(h: f64) -> Bandwidths {
    Bandwidths {
        labeled_left: h,
        labeled_right: h,
        unlabeled_left: h,
        unlabeled_right: h,
    }
}

#[test]
fn leave_one_out_matches_hand_computation() {
    let xs = [0.5, 1.5, 1.2, 0.3, 1.8, 0.7, 1.1];
    let labeled: Vec<_> = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| record(i as u64, 0.0, 2.0, x, CensorCode::Exact, true))
        .collect();
    // eight of ten unlabeled records at risk at t = 1
    let unlabeled: Vec<_> = (0..10)
        .map(|i| {
            let left = if i < 8 { 0.0 } else { 1.5 };
            record(100 + i, left, 2.5, 2.0, CensorCode::Exact, false)
        })
        .collect();
    let spec = BasisSpec::intercept_only(1, 0, 0);
    let point = PreparedPoint::new(&labeled, &unlabeled, 1.0, &bandwidths(0.5), &spec).unwrap();
    let folds: Vec<Vec<usize>> = (0..7).map(|i| vec![i]).collect();
    let start = [None, None, None];
    let cv = crossfit_prepared(&point, &folds, [Some(true), None, None], &start);
    assert!(cv.failures.is_empty());

    let y: Vec<f64> = xs.iter().map(|&x| if x >= 1.0 { 1.0 } else { 0.0 }).collect();
    let n = y.len() as f64;
    let total: f64 = y.iter().sum();
    let hand: f64 = y
        .iter()
        .map(|&yi| {
            let psi = (yi - (total - yi) / (n - 1.0)) / 0.8;
            psi * psi
        })
        .sum::<f64>()
        / n
        / n;
    assert!((cv.covariance.matrix[0][0] - hand).abs() < 1e-12 * hand.max(1.0));
}

#[test]
fn fold_independent_residuals_match_plug_in() {
    // outcomes alternate and each fold holds one pair, so every training
    // set is balanced and fits β = 0
    let labeled: Vec<_> = (0..20)
        .map(|i| {
            let x = if i % 2 == 0 { 1.5 } else { 0.5 };
            record(i, 0.0, 2.0, x, CensorCode::Exact, true)
        })
        .collect();
    let unlabeled: Vec<_> = (0..40)
        .map(|i| record(100 + i, 0.0, 2.5, 2.0, CensorCode::Exact, false))
        .collect();
    let spec = BasisSpec::intercept_only(1, 0, 0);
    let point = PreparedPoint::new(&labeled, &unlabeled, 1.0, &bandwidths(0.5), &spec).unwrap();
    let folds: Vec<Vec<usize>> = (0..10).map(|k| vec![2 * k, 2 * k + 1]).collect();
    let cv = crossfit_prepared(&point, &folds, [Some(true), None, None], &[None, None, None]);
    let naive = estimate_all(&labeled, &unlabeled, 1.0, &bandwidths(0.5), &spec)
        .unwrap()
        .semisupervised_covariance();
    let (a, b) = (cv.covariance.matrix[0][0], naive.matrix[0][0]);
    assert!((a / b - 1.0).abs() < 0.1, "{a} vs {b}");
}

fn copy_as_unlabeled(labeled: &[SubjectRecord]) -> Vec<SubjectRecord> {
    labeled
        .iter()
        .map(|r| SubjectRecord {
            id: r.id + 1_000_000,
            label: None,
            ..r.clone()
        })
        .collect()
}

#[test]
fn identical_sets_collapse_to_supervised() {
    let setting = SettingSpec::published(SettingId::S1);
    let data = generate(&setting, 250, 0, 11).unwrap().dataset;
    let unlabeled = copy_as_unlabeled(&data.labeled);
    let dataset = Dataset::new(data.labeled.clone(), unlabeled, data.has_process).unwrap();
    let spec = BasisSpec::intercept_only(dataset.surrogate_dim(), dataset.baseline_dim(), dataset.process_dim());
    let bw = Bandwidths::rule_of_thumb(&dataset, 0.3, &BandwidthOverrides::default()).unwrap();
    let grid = build_time_grid(&dataset, 20, 0.1, 0.9).unwrap();
    for &t in &grid.points {
        let comps = estimate_all(&dataset.labeled, &dataset.unlabeled, t, &bw, &spec).unwrap();
        if let (Some(ss), Some(s)) = (&comps.intrinsic[0], &comps.supervised[0]) {
            assert!((ss.estimate.value - s.estimate.value).abs() < 1e-8);
        }
    }
    let points = seeds_estimate(&dataset, &grid, &bw, &spec, &SeedsOptions::default()).unwrap();
    let mut compared = 0;
    for p in &points {
        if let (Some(s), Some(c)) = (&p.seeds, &p.csl) {
            assert!((s.value - c.value).abs() < 0.01, "t = {}: {} vs {}", p.t, s.value, c.value);
            compared += 1;
        }
    }
    assert!(compared >= 15);
}

#[test]
fn no_unlabeled_data_leaves_only_csl() {
    let setting = SettingSpec::published(SettingId::S1);
    let dataset = generate(&setting, 250, 0, 3).unwrap().dataset;
    let spec = BasisSpec::for_dataset(&dataset);
    let bw = Bandwidths::rule_of_thumb(&dataset, 0.3, &BandwidthOverrides::default()).unwrap();
    let grid = build_time_grid(&dataset, 5, 0.3, 0.7).unwrap();
    let points = seeds_estimate(&dataset, &grid, &bw, &spec, &SeedsOptions::default()).unwrap();
    for p in points {
        assert!(p.seeds.is_none());
        assert!(p.csl.is_some());
    }
}


#[test]
fn unlabeled_term_vanishes_for_constant_imputation_and_widens_otherwise() {
    let labeled: Vec<_> = (0..20)
        .map(|i| record(i, 0.0, 2.0, 0.1 * i as f64, CensorCode::Exact, true))
        .collect();
    // six of eight unlabeled records at risk
    let unlabeled: Vec<_> = (0..8)
        .map(|i| record(100 + i, if i < 6 { 0.0 } else { 1.5 }, 2.5, 2.0, CensorCode::Exact, false))
        .collect();
    let spec = BasisSpec::intercept_only(1, 0, 0);
    let point = PreparedPoint::new(&labeled, &unlabeled, 1.0, &bandwidths(0.5), &spec).unwrap();
    let comps = estimate_prepared(&point);
    let chosen = comps.seeds_components();
    let u = unlabeled_covariance(&chosen);
    assert!(u.present[0]);
    // an intercept-only fit imputes the estimate itself for everyone at risk
    assert!(u.matrix[0][0].abs() < 1e-20);

    let setting = SettingSpec::published(SettingId::S1);
    let data = generate(&setting, 250, 2000, 4).unwrap().dataset;
    let spec = BasisSpec::for_dataset(&data);
    let bw = Bandwidths::rule_of_thumb(&data, 0.3, &BandwidthOverrides::default()).unwrap();
    let grid = build_time_grid(&data, 5, 0.3, 0.7).unwrap();
    let plain = seeds_estimate(&data, &grid, &bw, &spec, &SeedsOptions::default()).unwrap();
    let options = SeedsOptions {
        unlabeled_variance: true,
        ..SeedsOptions::default()
    };
    let wider = seeds_estimate(&data, &grid, &bw, &spec, &options).unwrap();
    for (a, b) in plain.iter().zip(&wider) {
        let (a, b) = (a.seeds.as_ref().unwrap(), b.seeds.as_ref().unwrap());
        assert!((b.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(b.variance > a.variance * 0.99, "{} vs {}", b.variance, a.variance);
        assert!(b.variance < a.variance * 1.5);
    }
}
