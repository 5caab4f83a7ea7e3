//! Cobb-Douglas simulation designs, accuracy metrics and replicate batches.

use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::economics::full_dimensional_share;
use crate::error::{Error, Result};
use crate::estimator::{run, FitConfig, PosteriorSummary};
use crate::frontier::Observation;
use crate::samplers::{sample_gamma, sample_truncated_normal, InefficiencyFamily, RngStream};

/// Scale of the heteroscedastic half-normal inefficiency of design 4.
pub const HETERO_SCALE: f64 = 0.3;
/// Mean and standard deviation of the exponential inefficiency of designs 1-3.
pub const EXPO_SCALE: f64 = 1.0 / 6.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSpec {
    /// Design number, 1 to 4.
    pub example: u8,
    /// Noise-to-signal ratio `sigma_v / sigma_u`.
    pub rho: f64,
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
    /// Range of the per-replicate draw of the hyperprior rate `w0`; the
    /// design's own range when absent.
    pub w0_range: Option<(f64, f64)>,
    pub input_range: (f64, f64),
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            example: 1,
            rho: 1.0,
            n: 100,
            replicates: 10,
            seed: 0,
            w0_range: None,
            input_range: (1.0, 10.0),
        }
    }
}

impl SimulationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.example) {
            return Err(Error::Config(format!("example must be 1, 2, 3 or 4, got {}", self.example)));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::Config(format!("rho must be non-negative, got {}", self.rho)));
        }
        if self.n == 0 || self.replicates == 0 {
            return Err(Error::Config("n and replicates must be >= 1".into()));
        }
        let (lo, hi) = self.input_range;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::Config(format!("input range must be positive and increasing, got ({lo}, {hi})")));
        }
        let (a, b) = self.w0_bounds();
        if !(a >= 0.0 && b > a) {
            return Err(Error::Config(format!("w0 range must be increasing and non-negative, got ({a}, {b})")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self.example {
            1 => 1,
            2 => 2,
            _ => 3,
        }
    }

    fn exponents(&self) -> &'static [f64] {
        match self.example {
            1 => &[0.5],
            2 => &[0.4, 0.5],
            _ => &[0.4, 0.3, 0.2],
        }
    }

    pub fn w0_bounds(&self) -> (f64, f64) {
        self.w0_range.unwrap_or(if self.example == 4 { (0.0, 0.1) } else { (0.1, 0.2) })
    }

    /// Noise standard deviation of the design.
    pub fn sigma_v(&self) -> f64 {
        match self.example {
            4 => self.rho * HETERO_SCALE * ((std::f64::consts::PI - 2.0) / std::f64::consts::PI).sqrt(),
            _ => self.rho * EXPO_SCALE,
        }
    }

    /// True frontier value at `x`.
    pub fn frontier(&self, x: &[f64]) -> f64 {
        x.iter().zip(self.exponents()).map(|(v, e)| v.powf(*e)).product()
    }
}

/// A simulated sample with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SimData {
    pub data: Dataset,
    pub frontier: Vec<f64>,
    pub inefficiency: Vec<f64>,
}

/// Draws one sample of `spec.n` observations.
pub fn generate<R: Rng + ?Sized>(spec: &SimulationSpec, rng: &mut R) -> Result<SimData> {
    spec.validate()?;
    let (lo, hi) = spec.input_range;
    let inputs_dist = Uniform::new_inclusive(lo, hi).map_err(|e| Error::Config(e.to_string()))?;
    let sigma_v = spec.sigma_v();
    let noise = Normal::new(0.0, sigma_v).map_err(|e| Error::Config(e.to_string()))?;
    let mut obs = Vec::with_capacity(spec.n);
    let mut frontier = Vec::with_capacity(spec.n);
    let mut inefficiency = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let x: Vec<f64> = (0..spec.dim()).map(|_| inputs_dist.sample(rng)).collect();
        let u = match spec.example {
            4 => sample_truncated_normal(rng, 0.0, HETERO_SCALE * (x[0] + x[1]), 0.0),
            _ => sample_gamma(rng, 1.0, 1.0 / EXPO_SCALE),
        };
        let v = if sigma_v > 0.0 { noise.sample(rng) } else { 0.0 };
        let f = spec.frontier(&x);
        obs.push(Observation::new(x, f * (v - u).exp())?);
        frontier.push(f);
        inefficiency.push(u);
    }
    Ok(SimData { data: Dataset::new(obs, None)?, frontier, inefficiency })
}

/// Synthetic two-input industry panel with the layout of a real firm
/// dataset: capital `x1`, labor `x2`, one row per firm and period.
///
/// Output is `x1^0.3 x2^0.6 exp(gamma_t + v - u_f)` with `gamma` zero in the
/// first period, `u_f ~ Exp(mean mean_u)` per firm and `v ~ N(0, sigma_v^2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndustrySpec {
    pub firms: usize,
    pub first_period: i64,
    /// Shifts of periods after the first; their count fixes the panel length.
    pub period_effects: Vec<f64>,
    pub mean_u: f64,
    pub sigma_v: f64,
    pub seed: u64,
}

impl Default for IndustrySpec {
    fn default() -> Self {
        Self {
            firms: 60,
            first_period: 2007,
            period_effects: vec![-0.06, -0.1],
            mean_u: 0.2,
            sigma_v: 0.1,
            seed: 0,
        }
    }
}

/// A synthetic industry panel and the firm inefficiencies behind it.
pub fn synthetic_industry(spec: &IndustrySpec) -> Result<(Dataset, Vec<f64>)> {
    if spec.firms == 0 || !(spec.mean_u > 0.0) || !(spec.sigma_v >= 0.0) {
        return Err(Error::Config("industry needs firms, mean_u > 0 and sigma_v >= 0".into()));
    }
    let mut rng = RngStream::new(spec.seed);
    let labor = Uniform::new_inclusive(5.0, 100.0).map_err(|e| Error::Config(e.to_string()))?;
    let ratio = Uniform::new_inclusive(0.2, 5.0).map_err(|e| Error::Config(e.to_string()))?;
    let noise = Normal::new(0.0, spec.sigma_v).map_err(|e| Error::Config(e.to_string()))?;
    let shifts: Vec<f64> = std::iter::once(0.0).chain(spec.period_effects.iter().copied()).collect();
    let mut obs = Vec::with_capacity(spec.firms * shifts.len());
    let mut us = Vec::with_capacity(spec.firms);
    for f in 0..spec.firms {
        let u = sample_gamma(&mut rng, 1.0, 1.0 / spec.mean_u);
        us.push(u);
        for (t, g) in shifts.iter().enumerate() {
            let l: f64 = labor.sample(&mut rng);
            let k = l * ratio.sample(&mut rng);
            let v = if spec.sigma_v > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            let mut o = Observation::new(vec![k, l], k.powf(0.3) * l.powf(0.6) * (g + v - u).exp())?;
            o.firm_id = Some(format!("F{:03}", f + 1));
            o.period = Some(spec.first_period + t as i64);
            obs.push(o);
        }
    }
    Ok((Dataset::new(obs, None)?, us))
}

/// Accuracy of one fit against its ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateReport {
    pub replicate: usize,
    pub mse_f: f64,
    pub mean_ineff_deviation: f64,
    pub residual_skewness: f64,
    pub full_dimensional_share: f64,
    pub k_modal: usize,
    pub stationary: bool,
    pub iterations: usize,
    pub w0: f64,
}

/// Sample skewness `m3 / m2^(3/2)` with population moments.
pub fn skewness(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m3 = x.iter().map(|v| (v - m).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}

/// MSE of the frontier, inefficiency deviation, residual skewness and the
/// share of observations on fully dimensional planes (averaged over the
/// reported states in smooth mode).
pub fn metrics(summary: &PosteriorSummary, data: &Dataset, truth_f: &[f64], truth_u: &[f64]) -> Result<ReplicateReport> {
    let n = data.len();
    for len in [summary.frontier.len(), truth_f.len(), truth_u.len()] {
        if len != n {
            return Err(Error::LengthMismatch { expected: n, found: len });
        }
    }
    let mse_f = summary.frontier.iter().zip(truth_f).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64;
    let true_mean = truth_u.iter().sum::<f64>() / n as f64;
    let resid: Vec<f64> = data.outputs().iter().zip(&summary.frontier).map(|(y, f)| y.ln() - f.ln()).collect();
    let share = match summary.selected_model() {
        Some(m) => full_dimensional_share(m),
        None => {
            summary.states.iter().map(|s| full_dimensional_share(&s.model)).sum::<f64>() / summary.states.len() as f64
        }
    };
    Ok(ReplicateReport {
        replicate: 0,
        mse_f,
        mean_ineff_deviation: summary.mean_inefficiency - true_mean,
        residual_skewness: skewness(&resid),
        full_dimensional_share: share,
        k_modal: summary.planes_mode,
        stationary: summary.stationary,
        iterations: summary.iterations,
        w0: f64::NAN,
    })
}

/// Outcome of one replicate: its report or the error that stopped it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub report: Option<ReplicateReport>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub example: u8,
    pub rho: f64,
    pub n: usize,
    pub replicates: usize,
    pub failed: usize,
    pub mse_f_mean: f64,
    pub mse_f_sd: f64,
    pub mse_f_cv: f64,
    pub mean_ineff_deviation: f64,
    pub full_dimensional_share: f64,
    /// First checkpoint (every 5 replicates) at which the running mean and
    /// standard deviation of MSE f both moved by less than 5%.
    pub replicates_for_convergence: Option<usize>,
    pub negative_skew_fraction: f64,
}

/// Replicates plus their summary; `runtimes` (seconds) are kept apart
/// because they vary between identical runs.
#[derive(Clone, Debug)]
pub struct SimulationResult {
    pub outcomes: Vec<ReplicateOutcome>,
    pub aggregate: Aggregate,
    pub runtimes: Vec<f64>,
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (m, 0.0);
    }
    (m, (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// Checkpoint count at which the running mean and sd settle within 5%.
pub fn convergence_checkpoint(values: &[f64], every: usize) -> Option<usize> {
    let mut prev: Option<(f64, f64)> = None;
    let mut m = every;
    while m <= values.len() {
        let cur = mean_sd(&values[..m]);
        if let Some((pm, ps)) = prev {
            let close = |a: f64, b: f64| (a - b).abs() <= 0.05 * b.abs() || a == b;
            if close(cur.0, pm) && close(cur.1, ps) {
                return Some(m);
            }
        }
        prev = Some(cur);
        m += every;
    }
    None
}

/// Summary statistics over replicate outcomes, failures excluded.
pub fn aggregate(spec: &SimulationSpec, outcomes: &[ReplicateOutcome]) -> Aggregate {
    let ok: Vec<&ReplicateReport> = outcomes.iter().filter_map(|o| o.report.as_ref()).collect();
    let mse: Vec<f64> = ok.iter().map(|r| r.mse_f).collect();
    let (mean, sd) = mean_sd(&mse);
    let avg = |f: &dyn Fn(&ReplicateReport) -> f64| ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64;
    Aggregate {
        example: spec.example,
        rho: spec.rho,
        n: spec.n,
        replicates: outcomes.len(),
        failed: outcomes.len() - ok.len(),
        mse_f_mean: mean,
        mse_f_sd: sd,
        mse_f_cv: sd / mean,
        mean_ineff_deviation: avg(&|r| r.mean_ineff_deviation),
        full_dimensional_share: avg(&|r| r.full_dimensional_share),
        replicates_for_convergence: convergence_checkpoint(&mse, 5),
        negative_skew_fraction: avg(&|r| if r.residual_skewness < 0.0 { 1.0 } else { 0.0 }),
    }
}

/// Runs one replicate on its own random stream.
pub fn run_replicate(spec: &SimulationSpec, cfg: &FitConfig, replicate: usize) -> Result<ReplicateReport> {
    let mut rng = RngStream::substream(spec.seed, replicate as u64);
    let sim = generate(spec, &mut rng)?;
    let (lo, hi) = spec.w0_bounds();
    // An open lower end of zero would allow a zero rate.
    let w0 = loop {
        let w: f64 = rng.random_range(lo..hi);
        if w > 0.0 {
            break w;
        }
    };
    let mut cfg = cfg.clone();
    cfg.seed = rng.random();
    cfg.inefficiency.family = InefficiencyFamily::Exponential;
    cfg.inefficiency.w0 = w0;
    cfg.inefficiency.v0 = 1.0;
    let summary = run(&sim.data, &cfg, None, None)?;
    let mut report = metrics(&summary, &sim.data, &sim.frontier, &sim.inefficiency)?;
    report.replicate = replicate;
    report.w0 = w0;
    Ok(report)
}

/// Runs every replicate in parallel and aggregates; a failing replicate is
/// recorded and the rest continue.
pub fn run_replicates(spec: &SimulationSpec, cfg: &FitConfig) -> Result<SimulationResult> {
    spec.validate()?;
    cfg.validate()?;
    let results: Vec<(ReplicateOutcome, f64)> = (0..spec.replicates)
        .into_par_iter()
        .map(|r| {
            let started = Instant::now();
            let res = run_replicate(spec, cfg, r);
            let outcome = match res {
                Ok(report) => ReplicateOutcome { replicate: r, report: Some(report), error: None },
                Err(e) => ReplicateOutcome { replicate: r, report: None, error: Some(e.to_string()) },
            };
            (outcome, started.elapsed().as_secs_f64())
        })
        .collect();
    let (outcomes, runtimes): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let aggregate = aggregate(spec, &outcomes);
    Ok(SimulationResult { outcomes, aggregate, runtimes })
}
