use mbcri::data::Dataset;
use mbcri::estimator::{run, FitConfig};
use mbcri::frontier::check_concavity;
use mbcri::samplers::RngStream;
use mbcri::sim::*;

#[test]
fn noiseless_first_design_is_the_square_root() {
    let spec = SimulationSpec { rho: 0.0, n: 200, ..SimulationSpec::default() };
    let sim = generate(&spec, &mut RngStream::new(1)).unwrap();
    for (o, u) in sim.data.observations.iter().zip(&sim.inefficiency) {
        let y0 = o.output * u.exp();
        assert!((y0 - o.inputs[0].sqrt()).abs() < 1e-14 * y0, "{y0}");
        assert!(*u >= 0.0);
    }
}

#[test]
fn heteroscedastic_inefficiency_has_the_half_normal_mean() {
    let spec = SimulationSpec { example: 4, rho: 0.0, n: 1_000_000, input_range: (5.0, 5.0 + 1e-9), ..SimulationSpec::default() };
    let sim = generate(&spec, &mut RngStream::new(2)).unwrap();
    let s = HETERO_SCALE * 10.0;
    let n = sim.inefficiency.len() as f64;
    let mean = sim.inefficiency.iter().sum::<f64>() / n;
    let second = sim.inefficiency.iter().map(|u| u * u).sum::<f64>() / n;
    let expected = s * (2.0 / std::f64::consts::PI).sqrt();
    let se = s * (1.0 - 2.0 / std::f64::consts::PI).sqrt() / n.sqrt();
    assert!((mean - expected).abs() < 4.0 * se, "{mean} vs {expected}");
    assert!((second / (s * s) - 1.0).abs() < 0.01, "{second}");
}

#[test]
fn generation_is_deterministic_and_the_truth_is_concave() {
    let spec = SimulationSpec { example: 2, n: 50, ..SimulationSpec::default() };
    let a = generate(&spec, &mut RngStream::new(9)).unwrap();
    let b = generate(&spec, &mut RngStream::new(9)).unwrap();
    assert_eq!(a, b);
    let probes: Vec<Vec<f64>> = a.data.inputs().into_iter().take(30).collect();
    assert!(check_concavity(|x| spec.frontier(x), &probes, 1e-12));
    for i in 0..30 {
        for j in 0..30 {
            let (x, y) = (&probes[i], &probes[j]);
            if x.iter().zip(y).all(|(p, q)| p <= q) {
                assert!(spec.frontier(x) <= spec.frontier(y));
            }
        }
    }
}

#[test]
fn skewness_matches_the_third_standardized_moment() {
    let x = [0.5, 1.0, 1.5, 7.0, 0.2, 3.1];
    assert!((skewness(&x) - 1.242371391647231).abs() < 1e-12);
    assert!(skewness(&[1.0, 2.0, 3.0]).abs() < 1e-15);
}

fn tiny_fit() -> (Dataset, mbcri::estimator::PosteriorSummary) {
    let spec = SimulationSpec { n: 30, ..SimulationSpec::default() };
    let sim = generate(&spec, &mut RngStream::new(3)).unwrap();
    let cfg = FitConfig { burn_in: 10, warm_up: 2, stationarity_window: 5, max_iterations: 30, ..FitConfig::default() };
    let s = run(&sim.data, &cfg, None, None).unwrap();
    (sim.data, s)
}

#[test]
fn metrics_of_known_offsets() {
    let (data, mut s) = tiny_fit();
    let truth_f = s.frontier.clone();
    let truth_u = vec![0.1; data.len()];
    s.mean_inefficiency = 0.12;
    let r = metrics(&s, &data, &truth_f, &truth_u).unwrap();
    assert_eq!(r.mse_f, 0.0);
    assert!((r.mean_ineff_deviation - 0.02).abs() < 1e-15);
    assert!((0.0..=1.0).contains(&r.full_dimensional_share));
    assert!(metrics(&s, &data, &truth_f[1..], &truth_u).is_err());
}

#[test]
fn repeated_seeds_have_no_spread() {
    let spec = SimulationSpec { n: 40, replicates: 1, seed: 5, ..SimulationSpec::default() };
    let cfg = FitConfig { burn_in: 20, warm_up: 5, stationarity_window: 10, max_iterations: 60, ..FitConfig::default() };
    let a = run_replicate(&spec, &cfg, 0).unwrap();
    let b = run_replicate(&spec, &cfg, 0).unwrap();
    let outcomes: Vec<ReplicateOutcome> = [a, b]
        .into_iter()
        .enumerate()
        .map(|(i, r)| ReplicateOutcome { replicate: i, report: Some(r), error: None })
        .collect();
    let agg = aggregate(&spec, &outcomes);
    assert_eq!(agg.mse_f_sd, 0.0);
    assert_eq!(agg.replicates, 2);
}

#[test]
fn failing_replicates_are_marked_and_skipped() {
    let spec = SimulationSpec::default();
    let ok = |m: f64| ReplicateOutcome {
        replicate: 0,
        report: Some(ReplicateReport {
            replicate: 0,
            mse_f: m,
            mean_ineff_deviation: 0.0,
            residual_skewness: 0.5,
            full_dimensional_share: 1.0,
            k_modal: 1,
            stationary: true,
            iterations: 10,
            w0: 0.1,
        }),
        error: None,
    };
    let bad = ReplicateOutcome { replicate: 2, report: None, error: Some("boom".into()) };
    let agg = aggregate(&spec, &[ok(0.001), ok(0.003), bad]);
    assert_eq!(agg.failed, 1);
    assert!((agg.mse_f_mean - 0.002).abs() < 1e-15);
    assert_eq!(agg.negative_skew_fraction, 0.0);
}
