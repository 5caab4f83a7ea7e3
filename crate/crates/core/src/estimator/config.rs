use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitter::FitOptions;
use crate::rjmcmc::full_bayes::FullBayesConfig;
use crate::rjmcmc::{MoveConfig, SigmaPrior};
use crate::samplers::InefficiencyPrior;

/// Which frontier estimate to report.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMode {
    /// Pointwise mean over the stationary iterations.
    #[default]
    Smooth,
    /// The stationary iteration with the largest MSE_y.
    NonSmooth,
}

/// How the chain gets its starting frontier.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initialization {
    /// Start from one plane and run `warm_up` iterations with prior inefficiency draws.
    #[default]
    WarmUp,
    /// Start from a chain run without inefficiency for `pre_run_iterations`.
    Mbcr,
}

/// Vague normal priors on the time and contextual effects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EffectPriors {
    pub gamma_mean: f64,
    pub gamma_variance: f64,
    pub delta_mean: f64,
    pub delta_variance: f64,
}

impl Default for EffectPriors {
    fn default() -> Self {
        Self {
            gamma_mean: 0.0,
            gamma_variance: 100.0,
            delta_mean: 0.0,
            delta_variance: 100.0,
        }
    }
}

/// Every knob of one estimation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub seed: u64,
    pub burn_in: usize,
    pub warm_up: usize,
    pub stationarity_window: usize,
    pub stationarity_rel_tol: f64,
    pub max_iterations: usize,
    pub mode: EstimatorMode,
    pub initialization: Initialization,
    pub pre_run_iterations: usize,
    /// Sample the exponential rate; when off it stays at `inefficiency.theta`.
    pub sample_theta: bool,
    /// Follow each inefficiency draw with a joint shift of all inefficiencies
    /// and the frontier's log level.
    pub level_shift: bool,
    pub credible_level: f64,
    pub inefficiency: InefficiencyPrior,
    pub sigma_prior: SigmaPrior,
    pub moves: MoveConfig,
    pub fitter: FitOptions,
    pub effects: EffectPriors,
    /// Draw plane coefficients from their posterior instead of using the least-squares point.
    pub full_bayes: Option<FullBayesConfig>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            burn_in: 150,
            warm_up: 20,
            stationarity_window: 200,
            stationarity_rel_tol: 0.01,
            max_iterations: 2000,
            mode: EstimatorMode::Smooth,
            initialization: Initialization::WarmUp,
            pre_run_iterations: 100,
            sample_theta: true,
            level_shift: true,
            credible_level: 0.9,
            inefficiency: InefficiencyPrior::default(),
            sigma_prior: SigmaPrior::default(),
            moves: MoveConfig::default(),
            fitter: FitOptions::default(),
            effects: EffectPriors::default(),
            full_bayes: None,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warm_up > self.burn_in {
            return Err(Error::Config(format!("warm_up ({}) exceeds burn_in ({})", self.warm_up, self.burn_in)));
        }
        if self.stationarity_window < 2 {
            return Err(Error::Config("stationarity_window must be >= 2".into()));
        }
        if !(self.stationarity_rel_tol > 0.0 && self.stationarity_rel_tol.is_finite()) {
            return Err(Error::Config("stationarity_rel_tol must be positive".into()));
        }
        if self.max_iterations <= self.burn_in {
            return Err(Error::Config(format!(
                "max_iterations ({}) must exceed burn_in ({})",
                self.max_iterations, self.burn_in
            )));
        }
        if !(self.credible_level > 0.0 && self.credible_level < 1.0) {
            return Err(Error::Config(format!("credible_level must lie in (0, 1), got {}", self.credible_level)));
        }
        if !(self.sigma_prior.shape > 0.0 && self.sigma_prior.scale > 0.0) {
            return Err(Error::Config("sigma_prior shape and scale must be positive".into()));
        }
        if !(self.fitter.slope_floor >= 0.0 && self.fitter.max_iterations > 0 && self.fitter.rel_tol > 0.0) {
            return Err(Error::Config("invalid fitter options".into()));
        }
        if !(self.effects.gamma_variance > 0.0 && self.effects.delta_variance > 0.0) {
            return Err(Error::Config("effect prior variances must be positive".into()));
        }
        self.inefficiency.validate()?;
        self.moves.validate()?;
        if let Some(fb) = &self.full_bayes {
            fb.validate()?;
        }
        Ok(())
    }

    /// Parses and validates a TOML document; absent fields take their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: FitConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}
