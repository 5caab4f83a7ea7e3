use mbcri::fitter::{fit_plane, objective, standard_errors, FitOptions, Region};
use mbcri::samplers::RngStream;
use rand::Rng;
use rand_distr::StandardNormal;

fn rows(xs: &[Vec<f64>]) -> Vec<&[f64]> {
    xs.iter().map(|x| x.as_slice()).collect()
}

#[test]
fn one_input_fit_matches_a_lattice_search() {
    let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![1.0 + 0.45 * i as f64]).collect();
    let z: Vec<f64> =
        xs.iter().enumerate().map(|(i, x)| (1.5 + 0.6 * x[0]).ln() + 0.04 * ((i * 7 % 9) as f64 - 4.0) / 4.0).collect();
    let r = rows(&xs);
    let region = Region { inputs: &r, targets: &z };
    let fit = fit_plane(region, None, &FitOptions::default()).unwrap();

    let step = 0.002;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for ia in 0..=2000 {
        let a = ia as f64 * step;
        for ib in 0..=1000 {
            let b = ib as f64 * step;
            if let Some(s) = objective(region, &[a, b]) {
                if s < best.0 {
                    best = (s, a, b);
                }
            }
        }
    }
    assert!(fit.sse <= best.0 + 1e-12, "{} vs lattice {}", fit.sse, best.0);
    assert!(best.0 - fit.sse < 1e-3 * best.0, "{} vs lattice {}", fit.sse, best.0);
    assert!((fit.intercept - best.1).abs() <= 5.0 * step && (fit.slopes[0] - best.2).abs() <= 5.0 * step);
}

#[test]
fn flat_log_region_has_linear_regression_errors() {
    // With predictions near 1000 the log is affine in the slope.
    let xs: Vec<Vec<f64>> = (0..40).map(|i| vec![1.0 + 9.0 * i as f64 / 39.0]).collect();
    let mut rng = RngStream::new(21);
    let z: Vec<f64> = xs.iter().map(|x| (1000.0 + 5.0 * x[0]).ln() + 0.001 * rng.sample::<f64, _>(StandardNormal)).collect();
    let r = rows(&xs);
    let fit = fit_plane(Region { inputs: &r, targets: &z }, None, &FitOptions::default()).unwrap();
    assert!(!fit.active[0]);

    let n = xs.len() as f64;
    let xbar = xs.iter().map(|x| x[0]).sum::<f64>() / n;
    let zbar = z.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x[0] - xbar).powi(2)).sum();
    let slope = xs.iter().zip(&z).map(|(x, z)| (x[0] - xbar) * (z - zbar)).sum::<f64>() / sxx;
    let sse: f64 = xs.iter().zip(&z).map(|(x, z)| (z - zbar - slope * (x[0] - xbar)).powi(2)).sum();
    let se_slope = (sse / (n - 2.0) / sxx).sqrt();
    let level = fit.intercept + fit.slopes[0] * xbar;
    let expected = level * se_slope;
    assert!((fit.std_errors[1] / expected - 1.0).abs() < 0.05, "{} vs {expected}", fit.std_errors[1]);
}

#[test]
fn doubling_the_noise_variance_scales_errors_by_root_two() {
    let mut rng = RngStream::new(22);
    let xs: Vec<Vec<f64>> = (0..30).map(|i| vec![1.0 + (i % 10) as f64, 1.0 + (i * 3 % 7) as f64]).collect();
    let r = rows(&xs);
    let opts = FitOptions::default();
    let (mut base, mut doubled) = (0.0, 0.0);
    for _ in 0..50 {
        let e: Vec<f64> = (0..xs.len()).map(|_| 0.02 * rng.sample::<f64, _>(StandardNormal)).collect();
        let z1: Vec<f64> = xs.iter().zip(&e).map(|(x, e)| (2.0 + 0.5 * x[0] + 0.8 * x[1]).ln() + e).collect();
        let z2: Vec<f64> = xs.iter().zip(&e).map(|(x, e)| (2.0 + 0.5 * x[0] + 0.8 * x[1]).ln() + 2f64.sqrt() * e).collect();
        let f1 = fit_plane(Region { inputs: &r, targets: &z1 }, None, &opts).unwrap();
        let f2 = fit_plane(Region { inputs: &r, targets: &z2 }, None, &opts).unwrap();
        base += f1.std_errors.iter().sum::<f64>();
        doubled += f2.std_errors.iter().sum::<f64>();
    }
    assert!((doubled / base / 2f64.sqrt() - 1.0).abs() < 0.05, "{}", doubled / base);
}

#[test]
fn exact_region_has_zero_errors_except_at_the_bound() {
    let xs: Vec<Vec<f64>> = (0..12).map(|i| vec![1.0 + i as f64, 2.0 + (i * 5 % 7) as f64]).collect();
    let z: Vec<f64> = xs.iter().map(|x| (3.0 + 0.7 * x[0] + 1e-8 * x[1]).ln()).collect();
    let r = rows(&xs);
    let region = Region { inputs: &r, targets: &z };
    let opts = FitOptions::default();
    let fit = fit_plane(region, None, &opts).unwrap();
    let se = standard_errors(&fit, region, opts.active_bound_scale).unwrap();
    for (j, s) in se.iter().enumerate() {
        if j > 0 && fit.active[j - 1] {
            assert_eq!(*s, opts.active_bound_scale);
        } else {
            assert!(*s < 1e-6, "{se:?}");
        }
    }
}
