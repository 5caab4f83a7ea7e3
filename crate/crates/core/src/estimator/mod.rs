//! The estimation driver.
//!
//! Each iteration runs the reversible-jump model block, refreshes the region
//! variances, draws the inefficiencies, the exponential rate and, when
//! present, the time and contextual effects. Iterations after burn-in are
//! saved and the run stops once the MSE_y trace is stationary.

mod config;
mod extensions;
mod summary;

use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;

pub use config::{EffectPriors, EstimatorMode, FitConfig, Initialization};
pub use extensions::{gibbs_gamma_or_delta, panel_u_params, sample_u_panel, ContextSpec, PanelSpec};
pub use summary::{
    check_stationarity, kde_mode, mse_y, nonsmooth_select, quantile_sorted, smooth_estimate, MoveStats, ParamSummary,
    PosteriorSummary, Traces,
};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fitter::Region;
use crate::frontier::{FrontierModel, Hyperplane, SmoothedFrontier};
use crate::rjmcmc::full_bayes::CoefficientSampler;
use crate::rjmcmc::{
    accept_move, choose_move, draw_noise_variances, is_valid_model, move_probabilities, propose_add, propose_relocate,
    propose_remove, restart_if_stalled, splittable_regions, ChainState, Decision, ModelContext, MoveKind, StallMonitor,
};
use crate::samplers::{
    sample_gamma, sample_level_shift, sample_theta, sample_truncated_normal, sample_u_exponential, sample_u_halfnormal, InefficiencyFamily,
    RngStream,
};

/// Where a model-block retry gets its fresh inefficiencies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum UDraw {
    Prior,
    Posterior,
    /// Held at zero, for the no-inefficiency pre-run.
    Zero,
}

/// A running chain, advanced one iteration at a time.
pub struct Chain<'a> {
    cfg: &'a FitConfig,
    inputs: Vec<Vec<f64>>,
    outputs: Vec<f64>,
    ln_y: Vec<f64>,
    panel: Option<&'a PanelSpec>,
    context: Option<&'a ContextSpec>,
    unit_of: Vec<usize>,
    units: Vec<Vec<usize>>,
    state: ChainState,
    rng: RngStream,
    monitor: StallMonitor,
    saved: Vec<ChainState>,
    traces: Traces,
    stats: MoveStats,
    warm_up: usize,
    stationary: bool,
}

impl<'a> Chain<'a> {
    /// Validates the inputs and sets up the starting state (step 0 plus the
    /// optional no-inefficiency pre-run).
    pub fn new(
        data: &Dataset,
        cfg: &'a FitConfig,
        panel: Option<&'a PanelSpec>,
        context: Option<&'a ContextSpec>,
    ) -> Result<Self> {
        cfg.validate()?;
        data.validate()?;
        let n = data.len();
        if n < crate::frontier::min_region_size(data.dim()) {
            return Err(Error::InvalidData { row: 0, msg: format!("{n} observations are too few for {} inputs", data.dim()) });
        }
        if let Some(p) = panel {
            if p.firm_of.len() != n || p.design.nrows() != n {
                return Err(Error::LengthMismatch { expected: n, found: p.firm_of.len() });
            }
        }
        if let Some(c) = context {
            if c.z.nrows() != n {
                return Err(Error::LengthMismatch { expected: n, found: c.z.nrows() });
            }
        }
        let unit_of: Vec<usize> = match panel {
            Some(p) => p.firm_of.clone(),
            None => (0..n).collect(),
        };
        let n_units = unit_of.iter().max().map_or(0, |m| m + 1);
        let mut units = vec![Vec::new(); n_units];
        for (i, &u) in unit_of.iter().enumerate() {
            units[u].push(i);
        }
        let inputs = data.inputs();
        let outputs = data.outputs();
        let ln_y = outputs.iter().map(|y| y.ln()).collect();
        let mut rng = RngStream::new(cfg.seed);

        let prior = &cfg.inefficiency;
        let theta = if prior.family == InefficiencyFamily::Exponential && cfg.sample_theta {
            sample_gamma(&mut rng, prior.v0, prior.w0)
        } else {
            prior.theta
        };
        let gamma = panel.filter(|p| p.num_effects() > 0).map(|p| vec![0.0; p.num_effects()]);
        let delta = context.map(|c| vec![0.0; c.z.ncols()]);
        let placeholder = FrontierModel::from_planes(vec![Hyperplane::new(1.0, vec![1.0; data.dim()], 1.0)?])?;
        let mut chain = Chain {
            cfg,
            inputs,
            outputs,
            ln_y,
            panel,
            context,
            unit_of,
            units,
            state: ChainState { model: placeholder, u: vec![0.0; n_units], theta, gamma, delta, iteration: 0, mse_y: 0.0 },
            rng,
            monitor: StallMonitor::new(&cfg.moves),
            saved: Vec::new(),
            traces: Traces::default(),
            stats: MoveStats::default(),
            warm_up: cfg.warm_up,
            stationary: false,
        };
        chain.state.model = chain.single_plane()?;
        if cfg.initialization == Initialization::Mbcr {
            for _ in 0..cfg.pre_run_iterations {
                chain.model_block(UDraw::Zero)?;
                chain.refresh_variances()?;
            }
            chain.warm_up = 0;
            chain.stats = MoveStats::default();
        }
        chain.draw_u(UDraw::Prior)?;
        Ok(chain)
    }

    fn single_plane(&self) -> Result<FrontierModel> {
        let targets = self.targets();
        let ctx = self.context_for(&targets);
        let all: Vec<usize> = (0..self.inputs.len()).collect();
        let fit = ctx.fit_indices(&all, None)?;
        let var = self.cfg.sigma_prior.profile_variance(fit.sse, all.len());
        FrontierModel::new(vec![Hyperplane::new(fit.intercept, fit.slopes, var)?], &self.inputs)
    }

    fn context_for<'c>(&'c self, targets: &'c [f64]) -> ModelContext<'c> {
        ModelContext { inputs: &self.inputs, targets, fit: &self.cfg.fitter, sigma_prior: self.cfg.sigma_prior }
    }

    /// `gamma' d_i + delta' z_i` of every observation, if any effect is active.
    fn shifts_of(&self, state: &ChainState) -> Option<Vec<f64>> {
        let mut out: Option<Vec<f64>> = None;
        if let (Some(p), Some(g)) = (self.panel, &state.gamma) {
            let v = &p.design * DVector::from_column_slice(g);
            out = Some(v.iter().copied().collect());
        }
        if let (Some(c), Some(d)) = (self.context, &state.delta) {
            let v = &c.z * DVector::from_column_slice(d);
            let acc = out.get_or_insert_with(|| vec![0.0; self.inputs.len()]);
            acc.iter_mut().zip(v.iter()).for_each(|(a, b)| *a += b);
        }
        out
    }

    /// Fitting targets `ln Y_i + u_i - shift_i`.
    fn targets(&self) -> Vec<f64> {
        let shifts = self.shifts_of(&self.state);
        (0..self.inputs.len())
            .map(|i| self.ln_y[i] + self.state.u[self.unit_of[i]] - shifts.as_ref().map_or(0.0, |s| s[i]))
            .collect()
    }

    fn draw_u(&mut self, how: UDraw) -> Result<()> {
        let prior = &self.cfg.inefficiency;
        match how {
            UDraw::Zero => self.state.u.iter_mut().for_each(|u| *u = 0.0),
            UDraw::Prior => {
                for u in self.state.u.iter_mut() {
                    *u = match prior.family {
                        InefficiencyFamily::Exponential => sample_gamma(&mut self.rng, 1.0, self.state.theta),
                        InefficiencyFamily::HalfNormal => {
                            sample_truncated_normal(&mut self.rng, 0.0, prior.sigma0u_sq.sqrt(), 0.0)
                        }
                    };
                }
            }
            UDraw::Posterior => {
                let f = self.state.model.fitted_values(&self.inputs)?;
                let shifts = self.shifts_of(&self.state);
                let eps: Vec<f64> = (0..self.inputs.len())
                    .map(|i| self.ln_y[i] - f[i].ln() - shifts.as_ref().map_or(0.0, |s| s[i]))
                    .collect();
                let theta = self.state.theta;
                for (unit, members) in self.units.iter().enumerate() {
                    let u = if self.panel.is_some() {
                        let periods: Vec<(f64, f64)> =
                            members.iter().map(|&i| (eps[i], self.state.model.noise_variance_of(i))).collect();
                        sample_u_panel(&mut self.rng, &periods, prior, theta)
                    } else {
                        let i = members[0];
                        let var = self.state.model.noise_variance_of(i);
                        match prior.family {
                            InefficiencyFamily::Exponential => sample_u_exponential(&mut self.rng, eps[i], theta, var),
                            InefficiencyFamily::HalfNormal => {
                                sample_u_halfnormal(&mut self.rng, eps[i], prior.sigma0u_sq, var)
                            }
                        }
                    };
                    self.state.u[unit] = u;
                }
            }
        }
        Ok(())
    }

    /// Joint shifts of inefficiencies and frontier level: one over all units,
    /// then one per region holding its partition fixed (cross-section only).
    fn shift_level(&mut self) -> Result<()> {
        let floor_bound = |planes: &[Hyperplane]| {
            planes
                .iter()
                .flat_map(|p| p.slopes.iter())
                .filter(|&&b| b > 0.0)
                .fold(f64::NEG_INFINITY, |m, &b| m.max((self.cfg.fitter.slope_floor / b).ln()))
        };
        let lower = floor_bound(self.state.model.planes());
        if let Some(c) = sample_level_shift(
            &mut self.rng,
            &self.state.u,
            &self.cfg.inefficiency,
            self.state.theta,
            (lower, f64::INFINITY),
        ) {
            let planes: Vec<Hyperplane> = self.state.model.planes().iter().map(|p| scaled(p, c.exp())).collect();
            self.state.model = FrontierModel::new(planes, &self.inputs)?;
            self.state.u.iter_mut().for_each(|u| *u = (*u + c).max(0.0));
        }
        if self.panel.is_some() {
            return Ok(());
        }
        for k in 0..self.state.model.num_planes() {
            let planes = self.state.model.planes();
            let part = self.state.model.partition();
            let mut lo = floor_bound(&planes[k..=k]);
            let mut hi = f64::INFINITY;
            for (i, x) in self.inputs.iter().enumerate() {
                let own = planes[k].value(x);
                if part[i] == k {
                    for (j, p) in planes.iter().enumerate().filter(|&(j, _)| j != k) {
                        // Ties go to the lower index, so a later plane may only touch.
                        let gap = (p.value(x) / own).ln();
                        hi = hi.min(if j < k { gap - 1e-12 } else { gap });
                    }
                } else {
                    let gap = (planes[part[i]].value(x) / own).ln();
                    lo = lo.max(if part[i] < k { gap } else { gap + 1e-12 });
                }
            }
            let members: Vec<usize> = (0..part.len()).filter(|&i| part[i] == k).collect();
            let u: Vec<f64> = members.iter().map(|&i| self.state.u[i]).collect();
            let Some(c) =
                sample_level_shift(&mut self.rng, &u, &self.cfg.inefficiency, self.state.theta, (lo, hi))
            else {
                continue;
            };
            let mut planes = planes.to_vec();
            planes[k] = scaled(&planes[k], c.exp());
            let moved = FrontierModel::new(planes, &self.inputs)?;
            if moved.partition() != part {
                continue;
            }
            self.state.model = moved;
            members.iter().for_each(|&i| self.state.u[i] = (self.state.u[i] + c).max(0.0));
        }
        Ok(())
    }

    /// One reversible-jump move. Automatic rejections redraw the
    /// inefficiencies against the current planes and try again, until the
    /// stall monitor restarts the chain from a saved iteration.
    fn model_block(&mut self, retry: UDraw) -> Result<()> {
        let moves = &self.cfg.moves;
        loop {
            let started = Instant::now();
            let targets = self.targets();
            let ctx = ModelContext { inputs: &self.inputs, targets: &targets, fit: &self.cfg.fitter, sigma_prior: self.cfg.sigma_prior };
            let model = &self.state.model;
            let probs = move_probabilities(model.num_planes(), moves);
            let kind = choose_move(&probs, &mut self.rng);
            let candidate = match kind {
                MoveKind::Add => {
                    let eligible = splittable_regions(&ctx, model);
                    if eligible.is_empty() {
                        Err(Error::NoFeasibleSplit)
                    } else {
                        let k = eligible[self.rng.random_range(0..eligible.len())];
                        propose_add(&ctx, model, k, moves.knots_per_region, moves.directions_per_knot, &mut self.rng)
                    }
                }
                MoveKind::Relocate => Ok(propose_relocate(&ctx, model, &mut self.rng)),
                MoveKind::Remove => propose_remove(&ctx, model, &mut self.rng),
            };
            let decision = match candidate {
                Ok(c) => accept_move(&ctx, model, c, moves, &mut self.rng),
                Err(_) => Decision { accepted: false, log_ratio: f64::NEG_INFINITY, automatic: false, model: None },
            };
            self.stats.record(kind, decision.accepted);
            if !decision.automatic {
                self.monitor.record_success(started.elapsed());
                if let Some(m) = decision.model {
                    self.state.model = m;
                }
                return Ok(());
            }
            self.stats.automatic_rejections += 1;
            self.monitor.record_failure(started.elapsed());
            if let Some(restored) = restart_if_stalled(&self.saved, &mut self.monitor, &mut self.rng) {
                let iteration = self.state.iteration;
                self.state = restored;
                self.state.iteration = iteration;
                self.stats.restarts += 1;
                return Ok(());
            }
            if self.monitor.stalled() {
                // Nothing saved to restart from yet: keep the current frontier.
                self.monitor.record_success(std::time::Duration::ZERO);
                return Ok(());
            }
            self.draw_u(retry)?;
        }
    }

    fn refresh_variances(&mut self) -> Result<()> {
        let targets = self.targets();
        let ctx = ModelContext { inputs: &self.inputs, targets: &targets, fit: &self.cfg.fitter, sigma_prior: self.cfg.sigma_prior };
        draw_noise_variances(&ctx, &mut self.state.model, &mut self.rng)
    }

    /// Replaces each plane's least-squares point by a posterior draw, keeping
    /// the old planes if the draws break a region constraint.
    fn full_bayes_block(&mut self) -> Result<()> {
        let Some(fb) = &self.cfg.full_bayes else {
            return Ok(());
        };
        let targets = self.targets();
        let ctx = ModelContext { inputs: &self.inputs, targets: &targets, fit: &self.cfg.fitter, sigma_prior: self.cfg.sigma_prior };
        let mut planes = self.state.model.planes().to_vec();
        for (k, idx) in self.state.model.regions().iter().enumerate() {
            let plane = &self.state.model.planes()[k];
            let warm: Vec<f64> = std::iter::once(plane.intercept).chain(plane.slopes.iter().copied()).collect();
            let Ok(fit) = ctx.fit_indices(idx, Some(&warm)) else {
                continue;
            };
            let rows: Vec<&[f64]> = idx.iter().map(|&i| self.inputs[i].as_slice()).collect();
            let z: Vec<f64> = idx.iter().map(|&i| targets[i]).collect();
            let region = Region { inputs: &rows, targets: &z };
            let mut sampler =
                CoefficientSampler::new(region, &fit, plane, self.cfg.sigma_prior, fb.clone(), self.cfg.fitter.slope_floor)?;
            planes[k] = sampler.draw(&mut self.rng)?;
        }
        let candidate = FrontierModel::new(planes, &self.inputs)?;
        if is_valid_model(&ctx, &candidate) && candidate.supported_planes() == self.state.model.supported_planes() {
            self.state.model = candidate;
        }
        Ok(())
    }

    fn effects_block(&mut self) -> Result<()> {
        if self.state.gamma.is_none() && self.state.delta.is_none() {
            return Ok(());
        }
        let f = self.state.model.fitted_values(&self.inputs)?;
        let var: Vec<f64> = (0..self.inputs.len()).map(|i| self.state.model.noise_variance_of(i)).collect();
        let base: Vec<f64> = (0..self.inputs.len())
            .map(|i| self.ln_y[i] - f[i].ln() + self.state.u[self.unit_of[i]])
            .collect();
        if let (Some(p), Some(_)) = (self.panel, &self.state.gamma) {
            let other = match (self.context, &self.state.delta) {
                (Some(c), Some(d)) => Some(&c.z * DVector::from_column_slice(d)),
                _ => None,
            };
            let r: Vec<f64> = base.iter().enumerate().map(|(i, b)| b - other.as_ref().map_or(0.0, |o| o[i])).collect();
            let g = gibbs_gamma_or_delta(&mut self.rng, &p.design, &r, &var, &p.prior_mean, &p.prior_cov)?;
            self.state.gamma = Some(g.iter().copied().collect());
        }
        if let (Some(c), Some(_)) = (self.context, &self.state.delta) {
            let other = match (self.panel, &self.state.gamma) {
                (Some(p), Some(g)) => Some(&p.design * DVector::from_column_slice(g)),
                _ => None,
            };
            let r: Vec<f64> = base.iter().enumerate().map(|(i, b)| b - other.as_ref().map_or(0.0, |o| o[i])).collect();
            let d = gibbs_gamma_or_delta(&mut self.rng, &c.z, &r, &var, &c.prior_mean, &c.prior_cov)?;
            self.state.delta = Some(d.iter().copied().collect());
        }
        Ok(())
    }

    /// Runs one full iteration.
    pub fn step(&mut self) -> Result<()> {
        let t = self.state.iteration + 1;
        let warm = t <= self.warm_up;
        let u_draw = if warm { UDraw::Prior } else { UDraw::Posterior };
        self.model_block(u_draw)?;
        self.refresh_variances()?;
        self.full_bayes_block()?;
        self.draw_u(u_draw)?;
        if !warm && self.cfg.level_shift {
            self.shift_level()?;
        }
        let prior = &self.cfg.inefficiency;
        if prior.family == InefficiencyFamily::Exponential && self.cfg.sample_theta {
            self.state.theta = sample_theta(&mut self.rng, &self.state.u, prior.v0, prior.w0);
        }
        self.effects_block()?;
        self.state.iteration = t;
        self.state.mse_y = self.current_mse_y()?;
        if t > self.cfg.burn_in {
            self.saved.push(self.state.clone());
            self.traces.push(&self.state);
            self.stationary = check_stationarity(
                &self.traces.mse_y,
                self.cfg.stationarity_window,
                self.cfg.stationarity_rel_tol,
            );
        }
        Ok(())
    }

    fn current_mse_y(&self) -> Result<f64> {
        let f = self.state.model.fitted_values(&self.inputs)?;
        let u: Vec<f64> = self.unit_of.iter().map(|&k| self.state.u[k]).collect();
        let shifts = self.shifts_of(&self.state);
        Ok(mse_y(&f, &u, shifts.as_deref(), &self.outputs))
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn saved(&self) -> &[ChainState] {
        &self.saved
    }

    pub fn is_stationary(&self) -> bool {
        self.stationary
    }

    pub fn is_done(&self) -> bool {
        self.stationary || self.state.iteration >= self.cfg.max_iterations
    }

    /// Summarizes the last `2 * window` saved iterations (fewer if the chain
    /// stopped early).
    pub fn finish(self) -> Result<PosteriorSummary> {
        let keep = (2 * self.cfg.stationarity_window).min(self.saved.len());
        if keep == 0 {
            return Err(Error::Domain("no iterations were saved".into()));
        }
        let states: Vec<ChainState> = self.saved[self.saved.len() - keep..].to_vec();
        let level = self.cfg.credible_level;
        let per_obs_u = |s: &ChainState| -> Vec<f64> { self.unit_of.iter().map(|&k| s.u[k]).collect() };
        let (frontier, inefficiency, mean_inefficiency, estimate, selected) = match self.cfg.mode {
            EstimatorMode::Smooth => {
                let (f, mean_u) = smooth_estimate(&states, &self.inputs)?;
                let mut u = vec![0.0; self.inputs.len()];
                for s in &states {
                    u.iter_mut().zip(per_obs_u(s)).for_each(|(a, b)| *a += b);
                }
                u.iter_mut().for_each(|v| *v /= states.len() as f64);
                let members = states.iter().map(|s| s.model.planes().to_vec()).collect();
                (f, u, mean_u, SmoothedFrontier::new(members)?, None)
            }
            EstimatorMode::NonSmooth => {
                let i = nonsmooth_select(&states)?;
                let s = &states[i];
                let f = s.model.fitted_values(&self.inputs)?;
                (f, per_obs_u(s), s.mean_u(), SmoothedFrontier::new(vec![s.model.planes().to_vec()])?, Some(i))
            }
        };
        let thetas: Vec<f64> = states.iter().map(|s| s.theta).collect();
        let means: Vec<f64> = states.iter().map(ChainState::mean_u).collect();
        let component = |get: &dyn Fn(&ChainState) -> Option<&Vec<f64>>| -> Result<Option<Vec<ParamSummary>>> {
            let Some(first) = get(&states[0]) else {
                return Ok(None);
            };
            (0..first.len())
                .map(|j| {
                    let draws: Vec<f64> = states.iter().map(|s| get(s).map_or(f64::NAN, |v| v[j])).collect();
                    ParamSummary::from_draws(&draws, level)
                })
                .collect::<Result<Vec<_>>>()
                .map(Some)
        };
        let gamma = component(&|s: &ChainState| s.gamma.as_ref())?;
        let delta = component(&|s: &ChainState| s.delta.as_ref())?;
        let mut counts = std::collections::BTreeMap::new();
        for s in &states {
            *counts.entry(s.num_planes()).or_insert(0usize) += 1;
        }
        let planes_mode = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(k, _)| *k).unwrap();
        Ok(PosteriorSummary {
            mode: self.cfg.mode,
            stationary: self.stationary,
            iterations: self.state.iteration,
            frontier,
            inefficiency,
            mean_inefficiency,
            estimate,
            selected,
            theta: ParamSummary::from_draws(&thetas, level)?,
            mean_u: ParamSummary::from_draws(&means, level)?,
            planes_mode,
            gamma,
            delta,
            gamma_periods: gamma_periods(self.panel, &states),
            states,
            traces: self.traces,
            moves: self.stats,
        })
    }
}

fn scaled(p: &Hyperplane, s: f64) -> Hyperplane {
    Hyperplane {
        intercept: p.intercept * s,
        slopes: p.slopes.iter().map(|b| b * s).collect(),
        noise_variance: p.noise_variance,
    }
}

fn gamma_periods(panel: Option<&PanelSpec>, states: &[ChainState]) -> Option<Vec<i64>> {
    let p = panel?;
    states.first()?.gamma.as_ref()?;
    Some(p.periods[1..].to_vec())
}

/// Runs a chain to stationarity or `max_iterations` and summarizes it.
///
/// A chain that never became stationary still yields a summary, with
/// `stationary` false.
pub fn run(
    data: &Dataset,
    cfg: &FitConfig,
    panel: Option<&PanelSpec>,
    context: Option<&ContextSpec>,
) -> Result<PosteriorSummary> {
    let mut chain = Chain::new(data, cfg, panel, context)?;
    while !chain.is_done() {
        chain.step()?;
    }
    chain.finish()
}
