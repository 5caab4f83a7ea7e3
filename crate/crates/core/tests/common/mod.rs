//! Goodness-of-fit helpers shared by the statistical tests.
#![allow(dead_code)]

use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf::erfc;

/// Upper tail of the standard normal, accurate far into the tail.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// CDF of N(mu, sigma^2) truncated to `[lower, inf)`.
pub fn truncated_normal_cdf(x: f64, mu: f64, sigma: f64, lower: f64) -> f64 {
    if x <= lower {
        return 0.0;
    }
    1.0 - normal_sf((x - mu) / sigma) / normal_sf((lower - mu) / sigma)
}

/// Asymptotic p-value of the one-sample Kolmogorov-Smirnov statistic.
pub fn ks_p_value(draws: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    draws.sort_by(f64::total_cmp);
    let n = draws.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in draws.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        p += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
    }
    p.clamp(0.0, 1.0)
}

/// Chi-square p-value of draws binned into `bins` equiprobable cells of `cdf`.
pub fn chi_square_p_value(draws: &[f64], cdf: impl Fn(f64) -> f64, bins: usize) -> f64 {
    let mut counts = vec![0usize; bins];
    for &x in draws {
        let u = cdf(x).clamp(0.0, 1.0 - 1e-15);
        counts[(u * bins as f64) as usize] += 1;
    }
    let expected = draws.len() as f64 / bins as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(stat)
}

pub fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}
