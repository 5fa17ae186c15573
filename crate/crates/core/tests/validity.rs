mod common;

use netexp::dgp::{simulate, Setting, SimConfig};
use netexp::exposure::{cell_indicator, quantile_partition, researcher_exposure, ExposureKind, ExposureVector};
use netexp::nuisance::{own_feature_controls, FoldScheme};
use netexp::validity_test::{dml_test, dml_test_detailed, orthogonal_score, Aggregation, Alternative, TestOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use common::{SCORE_CASES, SCORE_HAND_VALUES};

#[test]
fn score_matches_hand_evaluation() {
    for ((y, cell, mi, mo, p), want) in SCORE_CASES.iter().zip(SCORE_HAND_VALUES) {
        let got = orthogonal_score(*y, *cell, mi, mo, p, 0.0).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        let shifted = orthogonal_score(*y, *cell, mi, mo, p, 0.25).unwrap();
        assert!((shifted - (want - 0.25)).abs() < 1e-12);
    }
}

#[test]
fn partition_indicators_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let values: Vec<f64> = (0..97).map(|_| rng.random_range(-3.0..3.0)).collect();
    let p = quantile_partition(&values, 4).unwrap();
    let indicators: Vec<Vec<u8>> = (0..p.cells()).map(|l| cell_indicator(&p, l).unwrap()).collect();
    for i in 0..97 {
        assert_eq!(indicators.iter().map(|c| c[i]).sum::<u8>(), 1);
    }
}

fn s1_inputs(n: usize, seed: u64) -> (netexp::dgp::Dataset, ExposureVector) {
    let data = simulate(&SimConfig::new(Setting::S1, n, seed)).unwrap();
    let researcher = researcher_exposure(ExposureKind::ResearcherShare, &data.graph, &data.d, &data.x).unwrap();
    (data, researcher)
}

#[test]
fn estimating_equation_is_solved_at_theta_hat() {
    let (data, researcher) = s1_inputs(600, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let learned = ExposureVector::new(
        (0..600).map(|_| rng.random::<f64>()).collect(),
        ExposureKind::Learned,
    )
    .unwrap();
    let folds = FoldScheme::new(600, 5, 3).unwrap();
    let options = TestOptions::default();
    let run = dml_test_detailed(&data.y, &researcher, &learned, Vec::new(), &folds, &options).unwrap();
    let residual = run.score_parts.iter().map(|s| s - run.result.theta_hat).sum::<f64>() / 600.0;
    assert!(residual.abs() < 1e-10);
    assert_eq!(run.result.reject_at_05, run.result.p_value < 0.05);

    let fold_avg = TestOptions {
        aggregation: Aggregation::FoldAverage,
        ..options
    };
    let run = dml_test_detailed(&data.y, &researcher, &learned, Vec::new(), &folds, &fold_avg).unwrap();
    let mean_of_folds = run.result.fold_score_means.iter().sum::<f64>() / 5.0;
    assert!((mean_of_folds - run.result.theta_hat).abs() < 1e-12);
}

#[test]
fn alternatives_share_the_statistic() {
    let (data, researcher) = s1_inputs(500, 4);
    let learned = ExposureVector::new(data.z_true.iter().map(|z| z * z).collect(), ExposureKind::Learned).unwrap();
    let folds = FoldScheme::new(500, 5, 4).unwrap();
    let controls = own_feature_controls(&data.d, &data.x);
    let one = dml_test_detailed(&data.y, &researcher, &learned, controls.clone(), &folds, &TestOptions::default())
        .unwrap()
        .result;
    let two_opts = TestOptions {
        alternative: Alternative::TwoSided,
        ..TestOptions::default()
    };
    let two = dml_test_detailed(&data.y, &researcher, &learned, controls, &folds, &two_opts)
        .unwrap()
        .result;
    assert_eq!(one.z_stat, two.z_stat);
    let z = one.z_stat;
    let expected_two = if z > 0.0 { 2.0 * one.p_value } else { 2.0 * (1.0 - one.p_value) };
    assert!((two.p_value - expected_two).abs() < 1e-12);
}

#[test]
fn pure_noise_outcome_keeps_size() {
    let reps = 200;
    let n = 500;
    let mut rejections = 0;
    for rep in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + rep);
        let (_, researcher) = s1_inputs(n, 2000 + rep);
        let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let learned = ExposureVector::new((0..n).map(|_| rng.random::<f64>()).collect(), ExposureKind::Learned).unwrap();
        let folds = FoldScheme::new(n, 5, rep).unwrap();
        if dml_test(&y, &researcher, &learned, 4, &folds).unwrap().reject_at_05 {
            rejections += 1;
        }
    }
    let rate = f64::from(rejections) / reps as f64;
    assert!(rate <= 0.07, "rejection rate {rate}");
}

#[test]
fn omitted_second_order_exposure_is_detected() {
    let reps = 20;
    let mut rejections = 0;
    for rep in 0..reps {
        let data = simulate(&SimConfig::new(Setting::S2, 1000, 50 + rep)).unwrap();
        let researcher = researcher_exposure(ExposureKind::ResearcherBinary, &data.graph, &data.d, &data.x).unwrap();
        let learned = ExposureVector::new(data.z_true.clone(), ExposureKind::Learned).unwrap();
        let folds = FoldScheme::new(1000, 5, rep).unwrap();
        let controls = own_feature_controls(&data.d, &data.x);
        let run = dml_test_detailed(&data.y, &researcher, &learned, controls, &folds, &TestOptions::default()).unwrap();
        if run.result.reject_at_05 {
            rejections += 1;
        }
    }
    assert!(rejections >= 16, "{rejections} of {reps}");
}
