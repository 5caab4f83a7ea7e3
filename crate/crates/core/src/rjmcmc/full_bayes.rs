//! Posterior draws of one plane's coefficients in place of the least-squares point.
//!
//! An independence Metropolis-Hastings sampler: candidates come from a
//! Gaussian centred on the least-squares fit with covariance
//! `eta * diag(se^2)`, the noise variance from its conjugate conditional given
//! the candidate. The prior is `N(0, M I)` on the coefficients times
//! `IG(a, b)` on the variance, truncated to monotone planes that stay positive
//! on the region.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::SigmaPrior;
use crate::error::{Error, Result};
use crate::fitter::{FitResult, Region};
use crate::frontier::Hyperplane;
use crate::samplers::{sample_inverse_gamma, sigma_posterior_params};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FullBayesConfig {
    /// Inflation of the proposal covariance, > 1.
    pub eta: f64,
    /// Accepted draws discarded before the one returned.
    pub burn_in_accepts: usize,
    /// Prior variance `M` of each coefficient.
    pub prior_variance: f64,
    /// Consecutive rejections tolerated before giving up.
    pub max_tries: usize,
}

impl Default for FullBayesConfig {
    fn default() -> Self {
        Self {
            eta: 1.5,
            burn_in_accepts: 5,
            prior_variance: 1e6,
            max_tries: 100_000,
        }
    }
}

impl FullBayesConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 1.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must exceed 1, got {}", self.eta)));
        }
        if !(self.prior_variance > 0.0 && self.prior_variance.is_finite()) {
            return Err(Error::Config("prior_variance must be positive".into()));
        }
        if self.max_tries == 0 {
            return Err(Error::Config("max_tries must be >= 1".into()));
        }
        Ok(())
    }
}

fn ln_inverse_gamma(v: f64, shape: f64, scale: f64) -> f64 {
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * v.ln() - scale / v
}

/// Independence sampler for one region's `(alpha, beta, sigma^2)`.
pub struct CoefficientSampler<'a> {
    region: Region<'a>,
    center: Vec<f64>,
    proposal_var: Vec<f64>,
    sigma_prior: SigmaPrior,
    cfg: FullBayesConfig,
    slope_floor: f64,
    current: Vec<f64>,
    current_var: f64,
    current_log_w: f64,
}

impl<'a> CoefficientSampler<'a> {
    /// `fit` supplies the proposal centre and standard errors; `current` is the
    /// chain's present value for this plane.
    pub fn new(
        region: Region<'a>,
        fit: &FitResult,
        current: &Hyperplane,
        sigma_prior: SigmaPrior,
        cfg: FullBayesConfig,
        slope_floor: f64,
    ) -> Result<Self> {
        cfg.validate()?;
        let center = fit.params();
        if fit.std_errors.len() != center.len() {
            return Err(Error::LengthMismatch { expected: center.len(), found: fit.std_errors.len() });
        }
        let proposal_var = fit
            .std_errors
            .iter()
            .zip(&center)
            .map(|(se, c)| {
                let floor = 1e-12 * c.abs().max(1.0);
                let se = if se.is_finite() { se.max(floor) } else { floor };
                cfg.eta * se * se
            })
            .collect();
        let mut current_params = vec![current.intercept];
        current_params.extend_from_slice(&current.slopes);
        let mut s = Self {
            region,
            center,
            proposal_var,
            sigma_prior,
            cfg,
            slope_floor,
            current: current_params,
            current_var: current.noise_variance,
            current_log_w: f64::NEG_INFINITY,
        };
        s.current_log_w = s.log_weight(&s.current, s.current_var);
        Ok(s)
    }

    fn residuals(&self, params: &[f64]) -> Option<Vec<f64>> {
        if params[1..].iter().any(|&b| b < self.slope_floor) {
            return None;
        }
        let mut out = Vec::with_capacity(self.region.targets.len());
        for (x, z) in self.region.inputs.iter().zip(self.region.targets) {
            let g = params[0] + params[1..].iter().zip(x.iter()).map(|(b, xi)| b * xi).sum::<f64>();
            if !(g > 0.0) {
                return None;
            }
            out.push(z - g.ln());
        }
        Some(out)
    }

    /// `ln p + ln L - ln q` at a full `(coefficients, variance)` point.
    fn log_weight(&self, params: &[f64], var: f64) -> f64 {
        let Some(r) = self.residuals(params) else {
            return f64::NEG_INFINITY;
        };
        if !(var > 0.0) {
            return f64::NEG_INFINITY;
        }
        let two_pi = 2.0 * std::f64::consts::PI;
        let SigmaPrior { shape, scale } = self.sigma_prior;
        let m = self.cfg.prior_variance;
        let mut lw = ln_inverse_gamma(var, shape, scale);
        for p in params {
            lw += -0.5 * (two_pi * m).ln() - p * p / (2.0 * m);
        }
        let sse: f64 = r.iter().map(|e| e * e).sum();
        lw += -0.5 * r.len() as f64 * (two_pi * var).ln() - sse / (2.0 * var);
        for ((p, c), s2) in params.iter().zip(&self.center).zip(&self.proposal_var) {
            lw -= -0.5 * (two_pi * s2).ln() - (p - c).powi(2) / (2.0 * s2);
        }
        let (a1, b1) = sigma_posterior_params(&r, shape, scale);
        lw -= ln_inverse_gamma(var, a1, b1);
        lw
    }

    /// Probability of moving from the current point to `(params, var)`.
    pub fn acceptance_probability(&self, params: &[f64], var: f64) -> f64 {
        let lw = self.log_weight(params, var);
        if lw == f64::NEG_INFINITY {
            return 0.0;
        }
        if self.current_log_w == f64::NEG_INFINITY {
            return 1.0;
        }
        (lw - self.current_log_w).exp().min(1.0)
    }

    pub fn current(&self) -> (&[f64], f64) {
        (&self.current, self.current_var)
    }

    /// Proposes until one candidate is accepted and moves to it.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        for _ in 0..self.cfg.max_tries {
            let cand: Vec<f64> = self
                .center
                .iter()
                .zip(&self.proposal_var)
                .map(|(c, s2)| {
                    let n: f64 = StandardNormal.sample(rng);
                    c + s2.sqrt() * n
                })
                .collect();
            let Some(r) = self.residuals(&cand) else {
                continue;
            };
            let (a1, b1) = sigma_posterior_params(&r, self.sigma_prior.shape, self.sigma_prior.scale);
            let var = sample_inverse_gamma(rng, a1, b1);
            let lw = self.log_weight(&cand, var);
            let accept = self.current_log_w == f64::NEG_INFINITY
                || lw >= self.current_log_w
                || rng.random::<f64>().ln() < lw - self.current_log_w;
            if accept && lw > f64::NEG_INFINITY {
                self.current = cand;
                self.current_var = var;
                self.current_log_w = lw;
                return Ok(());
            }
        }
        Err(Error::NonConvergent(self.cfg.max_tries))
    }

    /// Returns the accepted draw that follows `burn_in_accepts` discarded ones.
    pub fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Hyperplane> {
        for _ in 0..=self.cfg.burn_in_accepts {
            self.step(rng)?;
        }
        Hyperplane::new(self.current[0], self.current[1..].to_vec(), self.current_var)
    }
}

/// One posterior draw of a plane's coefficients and noise variance.
pub fn fully_bayesian_coeff_draw<R: Rng + ?Sized>(
    region: Region<'_>,
    fit: &FitResult,
    current: &Hyperplane,
    sigma_prior: SigmaPrior,
    cfg: &FullBayesConfig,
    slope_floor: f64,
    rng: &mut R,
) -> Result<Hyperplane> {
    CoefficientSampler::new(region, fit, current, sigma_prior, cfg.clone(), slope_floor)?.draw(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitter::{fit_plane, FitOptions};
    use crate::samplers::RngStream;

    fn data() -> (Vec<Vec<f64>>, Vec<f64>) {
        let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![1.0 + i as f64]).collect();
        let noise = [0.03, -0.02, 0.01, -0.04, 0.02, 0.0, -0.01, 0.03, -0.02, 0.01];
        let z = xs.iter().zip(noise).map(|(x, e)| (1.0 + 0.8 * x[0]).ln() + e).collect();
        (xs, z)
    }

    #[test]
    fn current_point_as_candidate_has_unit_probability() {
        let (xs, z) = data();
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let region = Region { inputs: &refs, targets: &z };
        let fit = fit_plane(region, None, &FitOptions::default()).unwrap();
        let cur = Hyperplane::new(fit.intercept, fit.slopes.clone(), 0.001).unwrap();
        let s = CoefficientSampler::new(region, &fit, &cur, SigmaPrior::default(), FullBayesConfig::default(), 1e-8).unwrap();
        let (p, v) = s.current();
        assert_eq!(s.acceptance_probability(p, v), 1.0);
    }

    #[test]
    fn tiny_errors_pin_draws_to_the_fit() {
        let (xs, z) = data();
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let region = Region { inputs: &refs, targets: &z };
        let mut fit = fit_plane(region, None, &FitOptions::default()).unwrap();
        fit.std_errors = vec![1e-9; 2];
        let cfg = FullBayesConfig { eta: 1.0 + 1e-9, ..FullBayesConfig::default() };
        let cur = Hyperplane::new(fit.intercept, fit.slopes.clone(), 0.001).unwrap();
        let mut rng = RngStream::new(4);
        for _ in 0..20 {
            let d = fully_bayesian_coeff_draw(region, &fit, &cur, SigmaPrior::default(), &cfg, 1e-8, &mut rng).unwrap();
            assert!((d.intercept - fit.intercept).abs() < 1e-7);
            assert!((d.slopes[0] - fit.slopes[0]).abs() < 1e-7);
        }
    }

    #[test]
    fn hopeless_proposal_reports_non_convergence() {
        let (xs, z) = data();
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let region = Region { inputs: &refs, targets: &z };
        let mut fit = fit_plane(region, None, &FitOptions::default()).unwrap();
        // Every candidate has a negative slope.
        fit.slopes = vec![-5.0];
        fit.std_errors = vec![1e-6; 2];
        let cfg = FullBayesConfig { max_tries: 50, ..FullBayesConfig::default() };
        let cur = Hyperplane::new(1.0, vec![0.8], 0.001).unwrap();
        let err = fully_bayesian_coeff_draw(region, &fit, &cur, SigmaPrior::default(), &cfg, 1e-8, &mut RngStream::new(5));
        assert!(matches!(err, Err(Error::NonConvergent(50))));
    }
}
