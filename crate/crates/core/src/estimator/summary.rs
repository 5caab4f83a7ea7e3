use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontier::{FrontierModel, SmoothedFrontier};
use crate::rjmcmc::{ChainState, MoveKind};

/// Posterior mean, mode and equal-tail interval of one scalar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub mean: f64,
    pub median: f64,
    /// Highest point of a Gaussian kernel density estimate.
    pub map: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

impl ParamSummary {
    pub fn from_draws(draws: &[f64], level: f64) -> Result<Self> {
        if draws.is_empty() || draws.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("summary needs finite draws".into()));
        }
        let mut sorted = draws.to_vec();
        sorted.sort_by(f64::total_cmp);
        let tail = 0.5 * (1.0 - level);
        Ok(Self {
            mean: draws.iter().sum::<f64>() / draws.len() as f64,
            median: quantile_sorted(&sorted, 0.5),
            map: kde_mode(&sorted),
            lower: quantile_sorted(&sorted, tail),
            upper: quantile_sorted(&sorted, 1.0 - tail),
            level,
        })
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (m, 0.0);
    }
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

/// Mode of a Gaussian kernel density with Silverman's bandwidth, located on a
/// 512-point grid; the lowest grid point wins ties.
pub fn kde_mode(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    let (_, sd) = mean_sd(sorted);
    let iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * (n as f64).powf(-0.2);
    if !(h > 0.0) {
        return quantile_sorted(sorted, 0.5);
    }
    let (lo, hi) = (sorted[0] - 3.0 * h, sorted[n - 1] + 3.0 * h);
    let grid = 512;
    let mut best = (f64::NEG_INFINITY, lo);
    for g in 0..grid {
        let x = lo + (hi - lo) * g as f64 / (grid - 1) as f64;
        let dens: f64 = sorted.iter().map(|v| (-0.5 * ((x - v) / h).powi(2)).exp()).sum();
        if dens > best.0 {
            best = (dens, x);
        }
    }
    best.1
}

/// `(1/n) sum (Yhat_i - Y_i)^2` with `Yhat_i = f_i exp(shift_i - u_i)`.
pub fn mse_y(frontier: &[f64], u: &[f64], shifts: Option<&[f64]>, outputs: &[f64]) -> f64 {
    let n = outputs.len();
    let mut total = 0.0;
    for i in 0..n {
        let s = shifts.map_or(0.0, |s| s[i]);
        let yhat = frontier[i] * (s - u[i]).exp();
        total += (yhat - outputs[i]).powi(2);
    }
    total / n as f64
}

/// Whether an MSE_y trace has settled.
///
/// Compares the last `window` values with the `window` before them: the
/// medians must agree to within `rel_tol` of the earlier median or three
/// standard errors of a median difference, whichever is wider, and the
/// standard deviations to within `10 rel_tol` or three standard errors of
/// their ratio. The sampling terms keep the false-alarm rate on a settled
/// chain below one percent.
pub fn check_stationarity(history: &[f64], window: usize, rel_tol: f64) -> bool {
    if window < 2 || history.len() < 2 * window {
        return false;
    }
    let n = history.len();
    let prev = &history[n - 2 * window..n - window];
    let last = &history[n - window..];
    let med = |w: &[f64]| {
        let mut s = w.to_vec();
        s.sort_by(f64::total_cmp);
        quantile_sorted(&s, 0.5)
    };
    let (m0, m1) = (med(prev), med(last));
    let (_, s0) = mean_sd(prev);
    let (_, s1) = mean_sd(last);
    let w = window as f64;
    let median_tol = (rel_tol * m0.abs()).max(3.0 * 1.2533 * s0 * (2.0 / w).sqrt());
    let sd_band = (10.0 * rel_tol).max(3.0 / (w - 1.0).sqrt());
    (m1 - m0).abs() <= median_tol && (s1 - s0).abs() <= sd_band * s0
}

/// Pointwise mean frontier at the observations and mean of per-state mean inefficiency.
pub fn smooth_estimate(states: &[ChainState], inputs: &[Vec<f64>]) -> Result<(Vec<f64>, f64)> {
    if states.is_empty() {
        return Err(Error::Domain("no stationary states".into()));
    }
    let mut f = vec![0.0; inputs.len()];
    for s in states {
        for (acc, v) in f.iter_mut().zip(s.model.fitted_values(inputs)?) {
            *acc += v;
        }
    }
    let m = states.len() as f64;
    f.iter_mut().for_each(|v| *v /= m);
    let mean_u = states.iter().map(ChainState::mean_u).sum::<f64>() / m;
    Ok((f, mean_u))
}

/// Index of the state with the largest MSE_y, the earliest on ties.
pub fn nonsmooth_select(states: &[ChainState]) -> Result<usize> {
    if states.is_empty() {
        return Err(Error::Domain("no stationary states".into()));
    }
    let mut best = 0;
    for (i, s) in states.iter().enumerate().skip(1) {
        if s.mse_y > states[best].mse_y {
            best = i;
        }
    }
    Ok(best)
}

/// Per-iteration traces over every saved (post-burn-in) iteration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Traces {
    pub iteration: Vec<usize>,
    pub mse_y: Vec<f64>,
    pub mean_u: Vec<f64>,
    pub theta: Vec<f64>,
    pub planes: Vec<usize>,
}

impl Traces {
    pub(crate) fn push(&mut self, s: &ChainState) {
        self.iteration.push(s.iteration);
        self.mse_y.push(s.mse_y);
        self.mean_u.push(s.mean_u());
        self.theta.push(s.theta);
        self.planes.push(s.num_planes());
    }
}

/// Proposal and acceptance counts of the model block.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveStats {
    pub proposed_add: usize,
    pub accepted_add: usize,
    pub proposed_relocate: usize,
    pub accepted_relocate: usize,
    pub proposed_remove: usize,
    pub accepted_remove: usize,
    pub automatic_rejections: usize,
    pub restarts: usize,
}

impl MoveStats {
    pub(crate) fn record(&mut self, kind: MoveKind, accepted: bool) {
        let (p, a) = match kind {
            MoveKind::Add => (&mut self.proposed_add, &mut self.accepted_add),
            MoveKind::Relocate => (&mut self.proposed_relocate, &mut self.accepted_relocate),
            MoveKind::Remove => (&mut self.proposed_remove, &mut self.accepted_remove),
        };
        *p += 1;
        *a += usize::from(accepted);
    }
}

/// Everything a run reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mode: super::EstimatorMode,
    /// False when `max_iterations` ran out first; the summary then covers the
    /// last saved iterations anyway.
    pub stationary: bool,
    pub iterations: usize,
    /// Estimated frontier at each observation.
    pub frontier: Vec<f64>,
    /// Estimated inefficiency of each observation (its firm's, in panels).
    pub inefficiency: Vec<f64>,
    /// Mean inefficiency, averaged over the stationary iterations.
    pub mean_inefficiency: f64,
    /// The estimate as an evaluable function: one member in non-smooth mode.
    pub estimate: SmoothedFrontier,
    /// Position in `states` of the non-smooth pick.
    pub selected: Option<usize>,
    pub states: Vec<ChainState>,
    pub traces: Traces,
    pub theta: ParamSummary,
    pub mean_u: ParamSummary,
    pub planes_mode: usize,
    pub gamma: Option<Vec<ParamSummary>>,
    pub delta: Option<Vec<ParamSummary>>,
    /// Period labels of the `gamma` entries.
    pub gamma_periods: Option<Vec<i64>>,
    pub moves: MoveStats,
}

impl PosteriorSummary {
    /// The single frontier behind a non-smooth estimate.
    pub fn selected_model(&self) -> Option<&FrontierModel> {
        self.selected.map(|i| &self.states[i].model)
    }
}
