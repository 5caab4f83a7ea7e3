use mbcri::fitter::{fit_plane, FitOptions, Region};
use mbcri::frontier::Hyperplane;
use mbcri::rjmcmc::full_bayes::{CoefficientSampler, FullBayesConfig};
use mbcri::rjmcmc::SigmaPrior;
use mbcri::samplers::RngStream;
use statrs::function::gamma::ln_gamma;

fn region_data() -> (Vec<Vec<f64>>, Vec<f64>) {
    let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![1.0 + i as f64]).collect();
    let noise = [0.05, -0.03, 0.02, -0.06, 0.04, 0.0, -0.02, 0.05, -0.04, 0.01];
    let z = xs.iter().zip(noise).map(|(x, e)| (1.0 + 0.8 * x[0]).ln() + e).collect();
    (xs, z)
}

/// Posterior mean of the slope by brute-force quadrature of the marginal
/// posterior of (alpha, beta), with the variance integrated analytically.
fn grid_posterior_mean_beta(xs: &[Vec<f64>], z: &[f64], prior: SigmaPrior, m: f64, center: (f64, f64), half: (f64, f64)) -> f64 {
    let steps = 600;
    let mut log_w = Vec::with_capacity(steps * steps);
    for i in 0..steps {
        let a = center.0 - half.0 + 2.0 * half.0 * (i as f64 + 0.5) / steps as f64;
        for j in 0..steps {
            let b = center.1 - half.1 + 2.0 * half.1 * (j as f64 + 0.5) / steps as f64;
            if b < 1e-8 || xs.iter().any(|x| a + b * x[0] <= 0.0) {
                continue;
            }
            let sse: f64 = xs.iter().zip(z).map(|(x, zi)| (zi - (a + b * x[0]).ln()).powi(2)).sum();
            let n = z.len() as f64;
            let (a1, b1) = (prior.shape + n / 2.0, prior.scale + sse / 2.0);
            let lm = -a1 * b1.ln() + ln_gamma(a1) - (a * a + b * b) / (2.0 * m);
            log_w.push((lm, b));
        }
    }
    let top = log_w.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for (lw, b) in log_w {
        let w = (lw - top).exp();
        num += w * b;
        den += w;
    }
    num / den
}

#[test]
fn posterior_mean_of_slope_matches_quadrature() {
    let (xs, z) = region_data();
    let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
    let region = Region { inputs: &refs, targets: &z };
    let fit = fit_plane(region, None, &FitOptions::default()).unwrap();
    let prior = SigmaPrior::default();
    let cfg = FullBayesConfig::default();
    let se = &fit.std_errors;
    let oracle = grid_posterior_mean_beta(&xs, &z, prior, cfg.prior_variance, (fit.intercept, fit.slopes[0]), (8.0 * se[0], 8.0 * se[1]));

    let cur = Hyperplane::new(fit.intercept, fit.slopes.clone(), 0.001).unwrap();
    let mut sampler = CoefficientSampler::new(region, &fit, &cur, prior, cfg, 1e-8).unwrap();
    let mut rng = RngStream::new(11);
    let draws = 10_000;
    let mut sum = 0.0;
    for _ in 0..draws {
        let d = sampler.draw(&mut rng).unwrap();
        sum += d.slopes[0];
    }
    let mean = sum / draws as f64;
    assert!((mean - oracle).abs() < 0.02 * oracle.abs(), "sampler {mean} vs quadrature {oracle}");
}
