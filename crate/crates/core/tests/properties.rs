use mmdfit::estimate::{default_kernel, objective_mmd2};
use mmdfit::regression::{objective_hat, objective_hat_with_kx, objective_tilde, BandwidthX, TildeForm};
use mmdfit::{
    fit, fit_regression, mmd2_empirical, KernelFamily, KernelSpec, Method, MmdError, ModelId, ModelSpec, OptimizerConfig,
    RegModelId, RegressionModelSpec, RegressionProblem, Sample,
};
use proptest::prelude::*;

fn family() -> impl Strategy<Value = KernelFamily> {
    prop_oneof![Just(KernelFamily::Gaussian), Just(KernelFamily::Laplace), Just(KernelFamily::Cauchy)]
}

fn points(max_n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0..5.0f64, d), 1..max_n)
}

fn linear_data(n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let x: Vec<Vec<f64>> = (0..n).map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()]).collect();
    let y = x.iter().enumerate().map(|(i, r)| 1.0 + 2.0 * r[0] - r[1] + 0.3 * (i as f64 * 1.7).sin()).collect();
    (y, x)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn squared_mmd_is_non_negative(a in points(30, 2), b in points(30, 2), f in family(), bw in 0.05..5.0f64) {
        let k = KernelSpec::new(f, bw).unwrap();
        let v = mmd2_empirical(&Sample::new(a).unwrap(), &Sample::new(b).unwrap(), &k).unwrap();
        prop_assert!(v >= -1e-12, "{}", v);
    }

    #[test]
    fn squared_mmd_vanishes_on_identical_samples(a in points(30, 3), f in family(), bw in 0.05..5.0f64) {
        let k = KernelSpec::new(f, bw).unwrap();
        let s = Sample::new(a).unwrap();
        prop_assert!(mmd2_empirical(&s, &s, &k).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn squared_mmd_is_symmetric(a in points(20, 1), b in points(20, 1), f in family()) {
        let k = KernelSpec::new(f, 1.0).unwrap();
        let (a, b) = (Sample::new(a).unwrap(), Sample::new(b).unwrap());
        let d = mmd2_empirical(&a, &b, &k).unwrap() - mmd2_empirical(&b, &a, &k).unwrap();
        prop_assert!(d.abs() < 1e-12);
    }

    #[test]
    fn regression_objectives_ignore_row_order(rot in 1usize..20, t0 in -1.0..1.0f64, t1 in -1.0..1.0f64) {
        let (y, x) = linear_data(20);
        let spec = RegressionModelSpec::new(RegModelId::Poisson, None).unwrap();
        let counts: Vec<f64> = y.iter().map(|v| v.abs().round()).collect();
        let mut yr = counts.clone();
        let mut xr = x.clone();
        yr.rotate_left(rot);
        xr.rotate_left(rot);
        let a = RegressionProblem::new(counts, x, spec, None).unwrap()
            .with_kernel_x(KernelFamily::Laplace, BandwidthX::Value(0.5)).unwrap();
        let b = RegressionProblem::new(yr, xr, spec, None).unwrap()
            .with_kernel_x(KernelFamily::Laplace, BandwidthX::Value(0.5)).unwrap();
        let theta = [0.5, t0, t1];
        let (ta, tb) = (objective_tilde(&a, &theta).unwrap().value, objective_tilde(&b, &theta).unwrap().value);
        prop_assert!((ta - tb).abs() <= 1e-12 * ta.abs().max(1.0));
        let (ha, hb) = (objective_hat(&a, &theta).unwrap().squared, objective_hat(&b, &theta).unwrap().squared);
        prop_assert!((ha - hb).abs() <= 1e-12 * ha.abs().max(1.0));
    }

    #[test]
    fn indicator_covariate_kernel_gives_theta_tilde(t0 in -1.0..1.0f64, t1 in -2.0..2.0f64, t2 in -2.0..2.0f64) {
        let (y, x) = linear_data(15);
        let labels: Vec<f64> = y.iter().map(|v| if *v > 1.0 { 1.0 } else { 0.0 }).collect();
        let spec = RegressionModelSpec::new(RegModelId::Logistic, None).unwrap();
        let p = RegressionProblem::new(labels, x, spec, None).unwrap();
        let theta = [t0, t1, t2];
        let hat = objective_hat_with_kx(&p, &theta, |i, j| if i == j { 1.0 } else { 0.0 }).unwrap();
        let tilde = objective_tilde(&p, &theta).unwrap().value;
        // the pairwise sum keeps n of the n^2 terms
        prop_assert!((hat.squared * 15.0 - tilde).abs() <= 1e-12);
    }
}

#[test]
fn explicit_intercept_column_matches_the_added_one() {
    let (y, x) = linear_data(40);
    let with_ones: Vec<Vec<f64>> = x.iter().map(|r| vec![1.0, r[0], r[1]]).collect();
    let spec = RegressionModelSpec::new(RegModelId::LinearGaussian, None).unwrap();
    let added = RegressionProblem::new(y.clone(), x, spec, None).unwrap();
    let given = RegressionProblem::new(y, with_ones, spec, None).unwrap();
    assert!(added.intercept_added());
    assert!(!given.intercept_added());
    let cfg = OptimizerConfig::default();
    let a = fit_regression(&added, &cfg).unwrap();
    let b = fit_regression(&given, &cfg).unwrap();
    for (u, v) in a.coefficients.iter().zip(&b.coefficients) {
        assert!((u - v).abs() < 1e-10, "{:?} vs {:?}", a.coefficients, b.coefficients);
    }
}

#[test]
fn gradient_descent_trace_never_increases() {
    let data = Sample::from_scalars(&[0.1, 1.3, -0.4, 2.2, 0.7, 0.9, 15.0, -0.2, 1.1, 0.5]).unwrap();
    for family in [KernelFamily::Gaussian, KernelFamily::Laplace] {
        let model = ModelSpec::univariate(ModelId::Gaussian, None, None).unwrap();
        let k = default_kernel(family, &data).unwrap();
        let res = fit(&model, &data, &k, &OptimizerConfig::default()).unwrap();
        assert_eq!(res.method, Method::GD);
        for w in res.trace.windows(2) {
            assert!(w[1].objective <= w[0].objective + 1e-15, "{} then {}", w[0].objective, w[1].objective);
        }
        let last = res.trace.last().unwrap().objective;
        let direct = objective_mmd2(&model, &res.theta, &data, &k).unwrap().value;
        assert!((last - direct).abs() < 1e-12);
    }
}

#[test]
fn a_single_outlier_barely_moves_the_estimate() {
    let clean: Vec<f64> = (0..99).map(|i| -2.0 + ((i as f64 + 0.5) / 99.0 * 6.1).sin()).collect();
    let model = ModelSpec::univariate(ModelId::GaussianLoc, None, Some(1.0)).unwrap();
    let fit_loc = |x: &[f64]| {
        let s = Sample::from_scalars(x).unwrap();
        let k = default_kernel(KernelFamily::Gaussian, &s).unwrap();
        fit(&model, &s, &k, &OptimizerConfig::default()).unwrap().estimates[0][0]
    };
    let base = fit_loc(&clean);
    for outlier in [10.0, 1e3, 1e6] {
        let mut x = clean.clone();
        x.push(outlier);
        let moved = (fit_loc(&x) - base).abs();
        let mean_moved = (x.iter().sum::<f64>() / x.len() as f64 - clean.iter().sum::<f64>() / clean.len() as f64).abs();
        assert!(moved < 0.05, "outlier {outlier} moved the estimate by {moved}");
        assert!(moved < mean_moved);
    }
}

#[test]
fn theta_hat_refuses_gradient_descent() {
    let (y, x) = linear_data(20);
    let spec = RegressionModelSpec::new(RegModelId::LinearGaussian, None).unwrap();
    let p = RegressionProblem::new(y, x, spec, None)
        .unwrap()
        .with_kernel_x(KernelFamily::Laplace, BandwidthX::Auto { rescale: None })
        .unwrap();
    for method in [Method::GD, Method::Exact] {
        let err = fit_regression(&p, &OptimizerConfig { method, ..OptimizerConfig::default() }).unwrap_err();
        assert!(matches!(err, MmdError::Dispatch(_)), "{err}");
    }
}

#[test]
fn root_form_changes_the_objective_not_the_truth() {
    let (y, x) = linear_data(60);
    let spec = RegressionModelSpec::new(RegModelId::LinearGaussian, None).unwrap();
    let mut p = RegressionProblem::new(y, x, spec, None).unwrap();
    let squared = fit_regression(&p, &OptimizerConfig::default()).unwrap();
    p.tilde_form = TildeForm::Root;
    let root = fit_regression(&p, &OptimizerConfig { maxit: 20_000, ..OptimizerConfig::default() }).unwrap();
    for (a, b) in squared.coefficients.iter().zip(&root.coefficients) {
        assert!((a - b).abs() < 0.15, "{:?} vs {:?}", squared.coefficients, root.coefficients);
    }
}
