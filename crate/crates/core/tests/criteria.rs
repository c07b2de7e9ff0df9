//! Deterministic criteria and small-scale Monte-Carlo properties.

use cusp_core::ensemble::{half_split_z, run_trials, EnsembleConfig, EntryLaw, SampleOptions};
use cusp_core::model::ModelSpec;
use cusp_core::shape::SingularityKind;
use cusp_core::verify::{
    calibrate_shift, cusp_exponent, edge_shape_integrals, free_convolution_checks, gap_closure_law,
    minimum_law_check, pearcey_checks, run_suite, semicircle_oracle, SuiteScale, QUICK,
};

#[test]
fn semicircle_oracle_passes() {
    let o = semicircle_oracle().unwrap();
    assert!(o.passed, "{}", o.line());
}

#[test]
fn edge_shape_integrals_pass() {
    let o = edge_shape_integrals().unwrap();
    assert!(o.passed, "{}", o.line());
}

#[test]
fn tuned_two_block_model_has_cube_root_cusp() {
    let o = cusp_exponent().unwrap();
    assert!(o.passed, "{}", o.line());
}

#[test]
fn gap_closes_with_three_halves_law() {
    let o = gap_closure_law().unwrap();
    assert!(o.passed, "{}", o.line());
}

#[test]
fn minimum_grows_with_square_root_law() {
    let o = minimum_law_check().unwrap();
    assert!(o.passed, "{}", o.line());
}

#[test]
fn free_convolution_is_stable_and_associative() {
    let o = free_convolution_checks().unwrap();
    assert!(o.passed, "{}", o.line());
}

#[test]
fn pearcey_kernel_checks_pass() {
    let o = pearcey_checks().unwrap();
    assert!(o.passed, "{}", o.line());
}

#[test]
fn suite_reports_in_requested_order() {
    let mut seen = Vec::new();
    let out = run_suite(&[3, 1], SuiteScale::reduced(), |o| seen.push(o.id));
    assert_eq!(seen, vec![3, 1]);
    assert!(out.iter().all(|o| o.passed));
    let unknown = run_suite(&[42], SuiteScale::reduced(), |_| {});
    assert!(!unknown[0].passed);
    assert!(QUICK.iter().all(|id| (1..=12).contains(id)));
}

#[test]
fn calibrated_shift_reaches_target_alpha() {
    let n = 300;
    let (shift, report) = calibrate_shift(n, 1.0).unwrap();
    assert!(shift > 1.0);
    assert_eq!(report.kind, SingularityKind::Edge);
    let alpha = cusp_core::verify::pearcey_alpha(&report, n);
    assert!((alpha - 1.0).abs() < 1e-6, "alpha {alpha}");
    let (shift, report) = calibrate_shift(n, -1.0).unwrap();
    assert!(shift < 1.0);
    assert_eq!(report.kind, SingularityKind::Minimum);
}

#[test]
fn ensemble_runs_are_reproducible() {
    let config =
        EnsembleConfig::new(ModelSpec::flat(60).unwrap(), 4, 99, EntryLaw::Gaussian).unwrap();
    let a = run_trials(&config, SampleOptions::default()).unwrap();
    let b = run_trials(&config, SampleOptions::default()).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.eigenvalues, y.eigenvalues);
    }
    let other =
        EnsembleConfig::new(ModelSpec::flat(60).unwrap(), 4, 100, EntryLaw::Gaussian).unwrap();
    let c = run_trials(&other, SampleOptions::default()).unwrap();
    assert_ne!(a[0].eigenvalues, c[0].eigenvalues);
}

#[test]
fn trials_are_statistically_independent() {
    let n = 80;
    let config =
        EnsembleConfig::new(ModelSpec::flat(n).unwrap(), 40, 7, EntryLaw::Gaussian).unwrap();
    let samples = run_trials(&config, SampleOptions::default()).unwrap();
    let middle: Vec<f64> = samples.iter().map(|s| s.eigenvalues[n / 2]).collect();
    assert!(half_split_z(&middle).abs() <= 3.0);
    let distinct = middle.windows(2).all(|w| w[0] != w[1]);
    assert!(distinct);
}
