use debias_erm::scenario::{
    closed_form_omega, generate_scenario, monte_carlo_omega, rate_check, run_experiment, BaseDistribution, BaseSampler,
    Learner, ScenarioSpec, TargetKind, Treatment, GROUND_TRUTH_SAMPLES,
};
use debias_erm::{BiasDef, Observation, SolverConfig};

#[test]
fn ball_normalizer_matches_monte_carlo_within_three_sigma() {
    let mut spec = ScenarioSpec::preset("b").unwrap();
    spec.biasing_defs = vec![BiasDef::NormBall { r: 0.8 }, BiasDef::NormShell { r: 1.4 }, BiasDef::ComponentBand { j: 0, c: 0.1 }];
    spec.sample_sizes = vec![1, 1, 1];
    let mc = monte_carlo_omega(&spec, GROUND_TRUTH_SAMPLES, 17).unwrap();
    for (def, est) in spec.biasing_defs.iter().zip(mc) {
        let p = closed_form_omega(def, &TargetKind::Norm).unwrap();
        let sigma = (p * (1.0 - p) / GROUND_TRUTH_SAMPLES as f64).sqrt();
        assert!((est - p).abs() <= 3.0 * sigma, "{def:?}: {est} vs {p}");
    }
}

#[test]
fn drawn_points_satisfy_their_own_region() {
    for name in ["a", "d", "g", "i", "j", "l", "censor"] {
        let spec = ScenarioSpec::preset(name).unwrap();
        let (pooled, test) = generate_scenario(&spec, 2).unwrap();
        for (k, i) in pooled.row_origins().collect::<Vec<_>>() {
            assert!(pooled.omega(pooled.sample_offset(k) + i, k) > 0.0, "{name}");
        }
        assert_eq!(test.len(), spec.test_size);
    }
}

#[test]
fn single_unbiased_stratum_treatments_coincide() {
    let mut spec = ScenarioSpec::preset("c").unwrap();
    spec.biasing_defs = vec![BiasDef::WholeSpace];
    spec.sample_sizes = vec![300];
    spec.n_runs = 5;
    let report = run_experiment(&spec, &SolverConfig::default()).unwrap();
    let s = report.values(Learner::LinearRegression, Treatment::Standard);
    for t in [Treatment::Debiased, Treatment::UnbiasedOnly] {
        for (a, b) in s.iter().zip(report.values(Learner::LinearRegression, t)) {
            assert!((a.unwrap() - b.unwrap()).abs() <= 1e-10);
        }
    }
}

#[test]
fn balanced_norm_strata_give_no_gain() {
    let mut spec = ScenarioSpec::preset("a").unwrap();
    spec.n_runs = 20;
    let report = run_experiment(&spec, &SolverConfig::default()).unwrap();
    assert!(report.cell(Learner::LinearRegression, Treatment::UnbiasedOnly).is_none());
    let s = report.cell(Learner::LinearRegression, Treatment::Standard).unwrap();
    let d = report.cell(Learner::LinearRegression, Treatment::Debiased).unwrap();
    let pooled_std = ((s.std.powi(2) + d.std.powi(2)) / 2.0).sqrt();
    assert!((s.mean - d.mean).abs() <= 2.0 * pooled_std);
    assert_eq!(s.n_ok, 20);
}

#[test]
fn report_is_bit_identical_across_calls() {
    let mut spec = ScenarioSpec::preset("g").unwrap();
    spec.n_runs = 4;
    spec.seed = 99;
    let a = run_experiment(&spec, &SolverConfig::default()).unwrap();
    let b = run_experiment(&spec, &SolverConfig::default()).unwrap();
    assert_eq!(a.summary_csv().unwrap(), b.summary_csv().unwrap());
    assert_eq!(a.runs_csv().unwrap(), b.runs_csv().unwrap());
    for cell in &a.cells {
        assert!(cell.std >= 0.0);
        assert_eq!(cell.n_ok + cell.n_failed, 4);
    }
}

#[test]
fn unbiased_rate_check_is_degenerate() {
    let mut spec = ScenarioSpec::preset("c").unwrap();
    spec.biasing_defs = vec![BiasDef::WholeSpace];
    spec.sample_sizes = vec![100];
    let report = rate_check(&spec, &[100, 200], 5, &SolverConfig::default()).unwrap();
    assert!(report.rows.iter().all(|r| r.mean_omega_error == 0.0));
    assert_eq!(report.omega_slope, None);
    assert!(report.sup_deviation_slope.is_some());
}

#[test]
fn empirical_base_with_supplied_target() {
    let points: Vec<Observation> = (0..200)
        .map(|i| {
            let x = i as f64 / 100.0 - 1.0;
            Observation::with_real(vec![x], 2.0 * x)
        })
        .collect();
    let sampler = BaseSampler::from_points(points, TargetKind::Supplied).unwrap();
    let mut rng = debias_erm::scenario::stream_rng(1, 1);
    let z = sampler.draw(&mut rng);
    assert_eq!(z.real_target().unwrap(), 2.0 * z.features[0]);
    assert!(BaseSampler::new(&BaseDistribution::StandardGaussian3d, &TargetKind::Supplied).is_err());
}
