//! Random-variate generation and the conjugate posterior draws of the chain.
//!
//! Gamma distributions use the shape/rate parameterization throughout.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seeded, reproducible random stream.
///
/// Independent streams for parallel work come from [`RngStream::substream`],
/// which keeps the seed and selects a different ChaCha stream id.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn substream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Prior family for the inefficiency terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InefficiencyFamily {
    Exponential,
    HalfNormal,
}

/// Inefficiency prior and the Gamma(v0, w0) hyperprior on the exponential rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InefficiencyPrior {
    pub family: InefficiencyFamily,
    /// Exponential rate, used when the chain does not sample it.
    pub theta: f64,
    /// Half-normal prior variance, held fixed.
    pub sigma0u_sq: f64,
    pub v0: f64,
    pub w0: f64,
}

impl Default for InefficiencyPrior {
    fn default() -> Self {
        Self {
            family: InefficiencyFamily::Exponential,
            theta: 1.0,
            sigma0u_sq: 0.04,
            v0: 1.0,
            w0: 0.1,
        }
    }
}

impl InefficiencyPrior {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("theta", self.theta),
            ("sigma0u_sq", self.sigma0u_sq),
            ("v0", self.v0),
            ("w0", self.w0),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

const TAIL_SWITCH: f64 = 0.257;
const MAX_REJECTION_TRIES: usize = 10_000;

/// Standard normal conditioned on `z >= a`.
///
/// Uses plain normal rejection below zero, half-normal rejection for small
/// positive bounds and translated-exponential rejection with the optimal rate
/// in the tail. Every branch accepts with probability above one half.
pub fn sample_standard_truncated<R: Rng + ?Sized>(rng: &mut R, a: f64) -> f64 {
    if a < 0.0 {
        for _ in 0..MAX_REJECTION_TRIES {
            let z: f64 = rng.sample(StandardNormal);
            if z >= a {
                return z;
            }
        }
    } else if a < TAIL_SWITCH {
        for _ in 0..MAX_REJECTION_TRIES {
            let z: f64 = rng.sample::<f64, _>(StandardNormal).abs();
            if z >= a {
                return z;
            }
        }
    } else {
        let rate = 0.5 * (a + (a * a + 4.0).sqrt());
        for _ in 0..MAX_REJECTION_TRIES {
            let z = a + rng.sample::<f64, _>(Exp1) / rate;
            let accept = (-0.5 * (z - rate) * (z - rate)).exp();
            if rng.random::<f64>() <= accept {
                return z;
            }
        }
    }
    // Unreachable in practice: each loop fails with probability below 2^-10000.
    a.max(0.0)
}

/// Draw from N(mu, sigma^2) restricted to `[lower, inf)`.
pub fn sample_truncated_normal<R: Rng + ?Sized>(rng: &mut R, mu: f64, sigma: f64, lower: f64) -> f64 {
    debug_assert!(sigma > 0.0);
    let z = sample_standard_truncated(rng, (lower - mu) / sigma);
    (mu + sigma * z).max(lower)
}

/// Shape/rate of the inverse-gamma posterior of a region noise variance.
pub fn sigma_posterior_params(residuals: &[f64], prior_shape: f64, prior_scale: f64) -> (f64, f64) {
    let ss: f64 = residuals.iter().map(|r| r * r).sum();
    (
        prior_shape + residuals.len() as f64 / 2.0,
        prior_scale + 0.5 * ss,
    )
}

/// Draw from InverseGamma(shape, scale).
pub fn sample_inverse_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> f64 {
    let g = Gamma::new(shape, 1.0 / scale).expect("valid inverse-gamma parameters");
    1.0 / g.sample(rng)
}

/// Conjugate draw of a region noise variance from its residuals.
pub fn sample_sigma_posterior<R: Rng + ?Sized>(
    rng: &mut R,
    residuals: &[f64],
    prior_shape: f64,
    prior_scale: f64,
) -> f64 {
    let (a, b) = sigma_posterior_params(residuals, prior_shape, prior_scale);
    sample_inverse_gamma(rng, a, b)
}

/// Truncated-normal location and variance of `u_i` under the exponential prior.
pub fn exponential_u_params(eps: f64, theta: f64, sigma_sq: f64) -> (f64, f64) {
    (-(eps + theta * sigma_sq), sigma_sq)
}

/// Truncated-normal location and variance of `u_i` under the half-normal prior.
pub fn halfnormal_u_params(eps: f64, sigma0u_sq: f64, sigma_sq: f64) -> (f64, f64) {
    let denom = sigma0u_sq + sigma_sq;
    (-sigma0u_sq * eps / denom, sigma0u_sq * sigma_sq / denom)
}

pub fn sample_u_exponential<R: Rng + ?Sized>(rng: &mut R, eps: f64, theta: f64, sigma_sq: f64) -> f64 {
    let (mu, var) = exponential_u_params(eps, theta, sigma_sq);
    sample_truncated_normal(rng, mu, var.sqrt(), 0.0)
}

pub fn sample_u_halfnormal<R: Rng + ?Sized>(
    rng: &mut R,
    eps: f64,
    sigma0u_sq: f64,
    sigma_sq: f64,
) -> f64 {
    let (mu, var) = halfnormal_u_params(eps, sigma0u_sq, sigma_sq);
    sample_truncated_normal(rng, mu, var.sqrt(), 0.0)
}

/// Draw from Gamma(shape, rate).
pub fn sample_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    Gamma::new(shape, 1.0 / rate)
        .expect("valid gamma parameters")
        .sample(rng)
}

/// Posterior draw of the exponential rate: Gamma(n + v0, w0 + sum(u)).
pub fn sample_theta<R: Rng + ?Sized>(rng: &mut R, u: &[f64], v0: f64, w0: f64) -> f64 {
    let total: f64 = u.iter().sum();
    sample_gamma(rng, u.len() as f64 + v0, w0 + total)
}

/// Draw from the density proportional to `exp(-rate * c)` on `[lower, upper]`.
///
/// `upper` may be infinite only when `rate > 0`.
pub fn sample_tilted_uniform<R: Rng + ?Sized>(rng: &mut R, rate: f64, lower: f64, upper: f64) -> Option<f64> {
    if !(lower <= upper) || !lower.is_finite() || (upper.is_infinite() && !(rate > 0.0)) {
        return None;
    }
    let w = upper - lower;
    let v: f64 = rng.random();
    if rate == 0.0 {
        return Some(lower + v * w);
    }
    // Measured from the end the mass piles up against.
    let r = rate.abs();
    let t = -(v * (-r * w).exp_m1()).ln_1p() / r;
    let t = if t.is_finite() { t.clamp(0.0, w) } else { 0.0 };
    Some(if rate > 0.0 { lower + t } else { upper - t })
}

/// Common shift `c` added to the inefficiencies `u` while the planes they
/// support are scaled by `exp(c)`, drawn from its conditional given
/// everything else.
///
/// The likelihood is unchanged by the shift and the frontier level carries a
/// flat prior on the log scale, so the conditional is the inefficiency prior
/// of `u + c` restricted to `[lower, upper]` and `u + c >= 0`.
pub fn sample_level_shift<R: Rng + ?Sized>(
    rng: &mut R,
    u: &[f64],
    prior: &InefficiencyPrior,
    theta: f64,
    (lower, upper): (f64, f64),
) -> Option<f64> {
    let n = u.len() as f64;
    let lower = u.iter().fold(lower, |m, &v| m.max(-v));
    if u.is_empty() {
        return None;
    }
    match prior.family {
        InefficiencyFamily::Exponential => sample_tilted_uniform(rng, n * theta, lower, upper),
        InefficiencyFamily::HalfNormal => {
            let s2 = prior.sigma0u_sq;
            let mean = -u.iter().sum::<f64>() / n;
            (0..MAX_REJECTION_TRIES)
                .map(|_| sample_truncated_normal(rng, mean, (s2 / n).sqrt(), lower))
                .find(|&c| c <= upper)
        }
    }
}

/// Hyperprior rate implied by a prior guess of the median technical efficiency.
pub fn prior_rate_from_median_te(tau_star: f64) -> Result<f64> {
    if !(tau_star > 0.0 && tau_star < 1.0) {
        return Err(Error::Domain(format!(
            "median technical efficiency must lie in (0, 1), got {tau_star}"
        )));
    }
    Ok(-1.0 / tau_star.ln())
}

/// Ordinary least squares of `target` on the columns of `design`.
pub fn ols(design: &DMatrix<f64>, target: &DVector<f64>) -> Result<DVector<f64>> {
    let gram = design.transpose() * design;
    let rhs = design.transpose() * target;
    let chol = gram.cholesky().ok_or(Error::SingularDesign)?;
    Ok(chol.solve(&rhs))
}

/// Mean and covariance of the conjugate normal update of a linear-effect block.
///
/// `Sigma_1 = (Sigma_0^-1 + D' Sv^-1 D)^-1` and
/// `mu_1 = Sigma_1 (Sigma_0^-1 mu_0 + D' Sv^-1 D b)` where `b` is the OLS fit.
pub fn mvn_conjugate_params(
    design: &DMatrix<f64>,
    noise_var: &[f64],
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
    ols_estimate: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = design.ncols();
    if noise_var.len() != design.nrows() {
        return Err(Error::LengthMismatch {
            expected: design.nrows(),
            found: noise_var.len(),
        });
    }
    if prior_mean.len() != p || prior_cov.shape() != (p, p) || ols_estimate.len() != p {
        return Err(Error::LengthMismatch {
            expected: p,
            found: prior_mean.len(),
        });
    }
    let prior_prec = prior_cov
        .clone()
        .cholesky()
        .ok_or(Error::SingularDesign)?
        .inverse();
    let mut weighted = DMatrix::<f64>::zeros(p, p);
    for (row, &v) in design.row_iter().zip(noise_var) {
        let w = 1.0 / v;
        for a in 0..p {
            let ra = row[a] * w;
            if ra == 0.0 {
                continue;
            }
            for b in 0..p {
                weighted[(a, b)] += ra * row[b];
            }
        }
    }
    let post_prec = &prior_prec + &weighted;
    let chol = post_prec.cholesky().ok_or(Error::SingularDesign)?;
    let cov = chol.inverse();
    let mean = &cov * (&prior_prec * prior_mean + &weighted * ols_estimate);
    Ok((mean, cov))
}

/// Draw from MVN(mean, cov) through the Cholesky factor of `cov`.
pub fn sample_mvn<R: Rng + ?Sized>(
    rng: &mut R,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let l = cov.clone().cholesky().ok_or(Error::SingularDesign)?.unpack();
    let z = DVector::from_iterator(mean.len(), (0..mean.len()).map(|_| rng.sample(StandardNormal)));
    Ok(mean + l * z)
}

pub fn sample_mvn_conjugate<R: Rng + ?Sized>(
    rng: &mut R,
    design: &DMatrix<f64>,
    noise_var: &[f64],
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
    ols_estimate: &DVector<f64>,
) -> Result<DVector<f64>> {
    let (mean, cov) = mvn_conjugate_params(design, noise_var, prior_mean, prior_cov, ols_estimate)?;
    sample_mvn(rng, &mean, &cov)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_u_params_match_closed_form() {
        let (mu, var) = exponential_u_params(-0.2, 5.0, 0.01);
        assert!((mu - 0.15).abs() < 1e-15);
        assert_eq!(var, 0.01);
    }

    #[test]
    fn halfnormal_u_params_match_closed_form() {
        let (mu, var) = halfnormal_u_params(-0.2, 0.04, 0.01);
        assert!((mu - 0.16).abs() < 1e-15);
        assert!((var - 0.008).abs() < 1e-15);
        let (mu, var) = halfnormal_u_params(-0.2, 1e12, 0.01);
        assert!((mu - 0.2).abs() < 1e-9);
        assert!((var - 0.01).abs() < 1e-9);
    }

    #[test]
    fn prior_rate_from_median() {
        assert!((prior_rate_from_median_te((-1.0f64).exp()).unwrap() - 1.0).abs() < 1e-12);
        assert!((prior_rate_from_median_te(0.8).unwrap() - 4.481_420_117_724_75).abs() < 1e-9);
        assert!(prior_rate_from_median_te(1.0 - 1e-12).unwrap() > 1e11);
        assert!(prior_rate_from_median_te(0.0).is_err());
        assert!(prior_rate_from_median_te(1.0).is_err());
    }

    #[test]
    fn sigma_posterior_params_follow_conjugacy() {
        let r = [0.2, -0.1, 0.1, 0.1];
        let (a, b) = sigma_posterior_params(&r, 1.0, 0.01);
        assert_eq!(a, 3.0);
        assert!((b - (0.01 + 0.5 * 0.07)).abs() < 1e-15);
        assert_eq!(sigma_posterior_params(&[], 1.0, 0.01), (1.0, 0.01));
    }

    #[test]
    fn truncated_draws_respect_bound_in_extreme_tails() {
        let mut rng = RngStream::new(3);
        for &lower in &[-40.0, -8.0, 0.0, 0.1, 8.0, 40.0] {
            for _ in 0..1000 {
                assert!(sample_truncated_normal(&mut rng, 0.0, 1.0, lower) >= lower);
            }
        }
    }

    #[test]
    fn streams_are_reproducible() {
        let mut a = RngStream::new(11);
        let mut b = RngStream::new(11);
        let xs: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_eq!(xs, ys);
        let mut c = RngStream::substream(11, 1);
        assert_ne!(xs[0], c.next_u64());
    }

    #[test]
    fn empty_theta_posterior_is_the_prior() {
        let mut rng = RngStream::new(5);
        let n = 200_000;
        let mean = (0..n).map(|_| sample_theta(&mut rng, &[], 2.0, 4.0)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01);
    }

    #[test]
    fn singular_conjugate_update_is_reported() {
        let design = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let prior_cov = DMatrix::from_element(1, 1, 0.0);
        let r = mvn_conjugate_params(
            &design,
            &[1.0, 1.0],
            &DVector::zeros(1),
            &prior_cov,
            &DVector::zeros(1),
        );
        assert!(matches!(r, Err(Error::SingularDesign)));
    }
}
