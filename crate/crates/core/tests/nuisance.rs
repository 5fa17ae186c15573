mod common;

use netexp::dgp::{
    simulate, treated_eligible_counts, treatment_probability, Setting, SimConfig, DIRECT_EXPOSURE_THRESHOLD,
};
use netexp::exposure::{quantile_partition, researcher_exposure, ExposureKind};
use netexp::gca::{learned_exposure, train, GcaConfig};
use netexp::nuisance::{
    binomial_upper_tail, fit_cell_means, fit_cell_propensity, fit_treatment_propensity, oracle_exposure_propensity,
    own_feature_controls, simulated_cell_propensity, FoldScheme, TestRegressors,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{exposure_frequency, propensity_fixture};

#[test]
fn treatment_propensity_recovers_design_probability() {
    let data = simulate(&SimConfig::new(Setting::S1, 5000, 31)).unwrap();
    let folds = FoldScheme::new(5000, 5, 1).unwrap();
    let p = fit_treatment_propensity(&data.d, &data.x, &folds).unwrap();
    for i in 0..5000 {
        assert!((p[i] - treatment_probability(data.x[i])).abs() < 0.03);
        assert!((0.01..=0.99).contains(&p[i]));
    }
}

#[test]
fn treatment_propensity_is_calibrated_by_decile() {
    let data = simulate(&SimConfig::new(Setting::S1, 5000, 32)).unwrap();
    let folds = FoldScheme::new(5000, 5, 2).unwrap();
    let p = fit_treatment_propensity(&data.d, &data.x, &folds).unwrap();
    let mut order: Vec<usize> = (0..5000).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    for decile in order.chunks(500) {
        let predicted = decile.iter().map(|&i| p[i]).sum::<f64>() / 500.0;
        let observed = decile.iter().map(|&i| f64::from(data.d[i])).sum::<f64>() / 500.0;
        assert!((predicted - observed).abs() < 0.05, "{predicted} vs {observed}");
    }
}

#[test]
fn oracle_propensity_matches_redraw_frequency() {
    let (g, x) = propensity_fixture();
    let oracle = oracle_exposure_propensity(&g, &x, DIRECT_EXPOSURE_THRESHOLD).unwrap();
    let freq = exposure_frequency(&g, &x, DIRECT_EXPOSURE_THRESHOLD, 200_000, 5);
    for (o, f) in oracle.iter().zip(&freq) {
        assert!((o - f).abs() < 0.005, "{o} vs {f}");
    }
}

#[test]
fn binomial_tail_closed_forms() {
    let p = treatment_probability(1);
    assert_eq!(binomial_upper_tail(0, p, 2), 0.0);
    assert!((binomial_upper_tail(3, p, 2) - p.powi(3)).abs() < 1e-14);
    assert!((binomial_upper_tail(4, p, 2) - (4.0 * p.powi(3) * (1.0 - p) + p.powi(4))).abs() < 1e-14);
}

#[test]
fn cell_propensities_add_up_when_cells_are_unrelated_to_the_exposure() {
    let data = simulate(&SimConfig::new(Setting::S1, 1000, 40)).unwrap();
    let researcher = researcher_exposure(ExposureKind::ResearcherShare, &data.graph, &data.d, &data.x).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let learned: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
    let partition = quantile_partition(&learned, 4).unwrap();
    let folds = FoldScheme::new(1000, 5, 3).unwrap();
    let controls = own_feature_controls(&data.d, &data.x);
    let regressors = TestRegressors::with_controls(&researcher.values, controls).unwrap();
    let table = fit_cell_propensity(&regressors, &partition, &folds).unwrap();
    for i in 0..1000 {
        let total: f64 = table.row(i).iter().sum();
        assert!((0.9..=1.1).contains(&total), "row {i}: {total}");
    }
    for l in 0..4 {
        let mean = (0..1000).map(|i| table.get(i, l)).sum::<f64>() / 1000.0;
        assert!((mean - 0.25).abs() < 0.02, "cell {l}: {mean}");
    }
}

#[test]
fn cell_propensities_are_trimmed_on_learned_cells() {
    let data = simulate(&SimConfig::new(Setting::S1, 1000, 40)).unwrap();
    let researcher = researcher_exposure(ExposureKind::ResearcherShare, &data.graph, &data.d, &data.x).unwrap();
    let model = train(&data.graph, &data.d, &data.x, &data.y, &GcaConfig::default()).unwrap();
    let learned = learned_exposure(&model, &data.graph, &data.d, &data.x).unwrap();
    let partition = quantile_partition(&learned.values, 4).unwrap();
    let folds = FoldScheme::new(1000, 5, 3).unwrap();
    let controls = own_feature_controls(&data.d, &data.x);
    let regressors = TestRegressors::with_controls(&researcher.values, controls).unwrap();
    let table = fit_cell_propensity(&regressors, &partition, &folds).unwrap();
    for i in 0..1000 {
        assert!(table.row(i).iter().all(|p| (0.01..=0.99).contains(p)));
    }
}

#[test]
fn cell_means_agree_with_cell_averages() {
    let data = simulate(&SimConfig::new(Setting::S1, 20_000, 41)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let learned: Vec<f64> = data.z_true.iter().map(|z| z + rng.random_range(-0.3..0.3)).collect();
    let partition = quantile_partition(&learned, 4).unwrap();
    let folds = FoldScheme::new(20_000, 5, 4).unwrap();
    let regressors = TestRegressors::exposure_only(&data.z_true);
    let means = fit_cell_means(&data.y, &regressors, &partition, &folds).unwrap();
    for l in 0..4 {
        let members: Vec<usize> = (0..20_000).filter(|&i| partition.labels()[i] == l).collect();
        let m = members.len() as f64;
        let fitted = members.iter().map(|&i| means.inside.get(i, l)).sum::<f64>() / m;
        let observed = members.iter().map(|&i| data.y[i]).sum::<f64>() / m;
        assert!((fitted - observed).abs() < 0.05, "cell {l}: {fitted} vs {observed}");
    }
}

#[test]
fn predictions_never_use_their_own_fold() {
    let data = simulate(&SimConfig::new(Setting::S1, 400, 42)).unwrap();
    let partition = quantile_partition(&data.z_true.iter().map(|z| z * z).collect::<Vec<_>>(), 3).unwrap();
    let folds = FoldScheme::new(400, 4, 5).unwrap();
    let controls = own_feature_controls(&data.d, &data.x);
    let regressors = TestRegressors::with_controls(&data.z_true, controls).unwrap();
    let before = fit_cell_means(&data.y, &regressors, &partition, &folds).unwrap();
    let mut y = data.y.clone();
    for i in folds.test_indices(2) {
        y[i] += 100.0;
    }
    let after = fit_cell_means(&y, &regressors, &partition, &folds).unwrap();
    for i in folds.test_indices(2) {
        assert_eq!(before.inside.row(i), after.inside.row(i));
        assert_eq!(before.outside.row(i), after.outside.row(i));
    }
    let moved = folds.test_indices(0).iter().any(|&i| before.inside.row(i) != after.inside.row(i));
    assert!(moved);
}

#[test]
fn simulated_propensity_recovers_the_threshold_oracle() {
    let (g, x) = propensity_fixture();
    let oracle = oracle_exposure_propensity(&g, &x, DIRECT_EXPOSURE_THRESHOLD).unwrap();
    let partition = quantile_partition(&[0.0, 1.0], 2).unwrap();
    let threshold = |d: &[u8]| {
        Ok(treated_eligible_counts(&g, d, &x)
            .iter()
            .map(|&c| if c > DIRECT_EXPOSURE_THRESHOLD { 1.0 } else { 0.0 })
            .collect())
    };
    let table = simulated_cell_propensity(&x, &partition, treatment_probability, threshold, 20_000, 8).unwrap();
    for (i, o) in oracle.iter().enumerate() {
        assert!((table.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((table.get(i, 1) - o).abs() < 0.015, "node {i}: {} vs {o}", table.get(i, 1));
    }
}
