use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::MoveKind;
use crate::error::{Error, Result};
use crate::fitter::{fit_plane, FitOptions, FitResult, Region};
use crate::frontier::{min_region_size, FrontierModel, Hyperplane};
use crate::samplers::sample_sigma_posterior;

/// Inverse-gamma prior `IG(shape, scale)` on each region noise variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SigmaPrior {
    pub shape: f64,
    pub scale: f64,
}

impl Default for SigmaPrior {
    fn default() -> Self {
        Self {
            shape: 1.0,
            scale: 0.01,
        }
    }
}

impl SigmaPrior {
    /// Regularized variance estimate used to score candidate fits.
    pub fn profile_variance(&self, sse: f64, n: usize) -> f64 {
        (2.0 * self.scale + sse) / (2.0 * self.shape + n as f64)
    }
}

/// Data the model block works on.
///
/// `targets` are `ln Y_i + u_i` minus any linear shifters, so that the frontier
/// fit is always a plain log-space regression.
#[derive(Clone, Copy, Debug)]
pub struct ModelContext<'a> {
    pub inputs: &'a [Vec<f64>],
    pub targets: &'a [f64],
    pub fit: &'a FitOptions,
    pub sigma_prior: SigmaPrior,
}

impl ModelContext<'_> {
    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.len())
    }

    pub fn fit_indices(&self, idx: &[usize], warm: Option<&[f64]>) -> Result<FitResult> {
        let rows: Vec<&[f64]> = idx.iter().map(|&i| self.inputs[i].as_slice()).collect();
        let z: Vec<f64> = idx.iter().map(|&i| self.targets[i]).collect();
        fit_plane(Region { inputs: &rows, targets: &z }, warm, self.fit)
    }

    /// Log residuals `z_i - ln f(x_i)` of each region; `None` on a non-positive prediction.
    pub fn region_residuals(&self, model: &FrontierModel) -> Option<Vec<Vec<f64>>> {
        let mut out = vec![Vec::new(); model.num_planes()];
        for (i, &k) in model.partition().iter().enumerate() {
            let g = model.planes()[k].value(&self.inputs[i]);
            if !(g > 0.0) {
                return None;
            }
            out[k].push(self.targets[i] - g.ln());
        }
        Some(out)
    }
}

/// A proposed frontier and the move that produced it.
#[derive(Clone, Debug)]
pub struct Candidate {
    pub model: FrontierModel,
    pub kind: MoveKind,
    /// Number of regions that were eligible for splitting when the move was made.
    pub eligible_regions: usize,
}

fn plane_from_fit(fit: &FitResult, noise_variance: f64) -> Hyperplane {
    Hyperplane {
        intercept: fit.intercept,
        slopes: fit.slopes.clone(),
        noise_variance,
    }
}

fn params_of(p: &Hyperplane) -> Vec<f64> {
    std::iter::once(p.intercept).chain(p.slopes.iter().copied()).collect()
}

/// Every region large enough and every in-sample prediction positive.
pub fn is_valid_model(ctx: &ModelContext<'_>, model: &FrontierModel) -> bool {
    let min = min_region_size(ctx.dim());
    model.partition().len() == ctx.inputs.len()
        && model.region_sizes().iter().all(|&s| s >= min)
        && ctx.region_residuals(model).is_some()
}

/// Redraws every region noise variance from its conjugate posterior.
pub fn draw_noise_variances<R: Rng + ?Sized>(
    ctx: &ModelContext<'_>,
    model: &mut FrontierModel,
    rng: &mut R,
) -> Result<()> {
    let residuals = ctx
        .region_residuals(model)
        .ok_or(Error::NonPositivePrediction { index: None, value: 0.0 })?;
    for (plane, r) in model.planes_mut().iter_mut().zip(&residuals) {
        plane.noise_variance =
            sample_sigma_posterior(rng, r, ctx.sigma_prior.shape, ctx.sigma_prior.scale);
    }
    Ok(())
}

/// Profile log likelihood with regularized per-region variances, used to rank splits.
pub(crate) fn profile_log_likelihood(ctx: &ModelContext<'_>, model: &FrontierModel) -> Option<f64> {
    let residuals = ctx.region_residuals(model)?;
    let mut ll = 0.0;
    for r in &residuals {
        let sse: f64 = r.iter().map(|e| e * e).sum();
        let var = ctx.sigma_prior.profile_variance(sse, r.len());
        ll += -0.5 * r.len() as f64 * (2.0 * std::f64::consts::PI * var).ln() - sse / (2.0 * var);
    }
    Some(ll)
}

/// Regions with enough observations to be split in two.
pub fn splittable_regions(ctx: &ModelContext<'_>, model: &FrontierModel) -> Vec<usize> {
    let min = min_region_size(ctx.dim());
    model
        .region_sizes()
        .iter()
        .enumerate()
        .filter(|(_, &s)| s >= 2 * min)
        .map(|(k, _)| k)
        .collect()
}

fn random_direction<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|a| a / norm).collect();
        }
    }
}

/// Splits region `k` by a random hyperplane through one of its observations.
///
/// Tries `L` knots (observations of the region, without replacement) times `M`
/// random unit directions, refits both halves and keeps the feasible candidate
/// with the highest profile likelihood.
pub fn propose_add<R: Rng + ?Sized>(
    ctx: &ModelContext<'_>,
    model: &FrontierModel,
    k: usize,
    knots: usize,
    directions: usize,
    rng: &mut R,
) -> Result<Candidate> {
    let d = ctx.dim();
    let min = min_region_size(d);
    let region: Vec<usize> = model
        .partition()
        .iter()
        .enumerate()
        .filter(|(_, &r)| r == k)
        .map(|(i, _)| i)
        .collect();
    if region.len() < 2 * min {
        return Err(Error::NoFeasibleSplit);
    }
    let eligible_regions = splittable_regions(ctx, model).len();
    let warm = params_of(&model.planes()[k]);
    let noise = model.planes()[k].noise_variance;

    let mut best: Option<(f64, FrontierModel)> = None;
    let knot_ids = sample_indices(rng, region.len(), knots.min(region.len()));
    for knot in knot_ids.iter().map(|j| region[j]) {
        for _ in 0..directions {
            let dir = random_direction(rng, d);
            let origin = &ctx.inputs[knot];
            let (left, right): (Vec<usize>, Vec<usize>) = region.iter().partition(|&&i| {
                ctx.inputs[i]
                    .iter()
                    .zip(origin)
                    .zip(&dir)
                    .map(|((x, o), v)| (x - o) * v)
                    .sum::<f64>()
                    >= 0.0
            });
            if left.len() < min || right.len() < min {
                continue;
            }
            let (Ok(fa), Ok(fb)) = (
                ctx.fit_indices(&left, Some(&warm)),
                ctx.fit_indices(&right, Some(&warm)),
            ) else {
                continue;
            };
            let mut planes = model.planes().to_vec();
            planes[k] = plane_from_fit(&fa, noise);
            planes.push(plane_from_fit(&fb, noise));
            let Ok(cand) = FrontierModel::new(planes, ctx.inputs) else {
                continue;
            };
            if !is_valid_model(ctx, &cand) {
                continue;
            }
            let Some(score) = profile_log_likelihood(ctx, &cand) else {
                continue;
            };
            if best.as_ref().map_or(true, |(s, _)| score > *s) {
                best = Some((score, cand));
            }
        }
    }
    best.map(|(_, model)| Candidate {
        model,
        kind: MoveKind::Add,
        eligible_regions,
    })
    .ok_or(Error::NoFeasibleSplit)
}

/// Refits every plane whose region changed between `before` and the current
/// partition of `model`, then reassigns once more.
fn refit_changed(ctx: &ModelContext<'_>, model: &mut FrontierModel, before: &[Vec<usize>]) {
    let after = model.regions();
    for (k, idx) in after.iter().enumerate() {
        if before.get(k) == Some(idx) || idx.len() < min_region_size(ctx.dim()) {
            continue;
        }
        let warm = params_of(&model.planes()[k]);
        if let Ok(fit) = ctx.fit_indices(idx, Some(&warm)) {
            let noise = model.planes()[k].noise_variance;
            model.planes_mut()[k] = plane_from_fit(&fit, noise);
        }
    }
    model.reassign(ctx.inputs);
}

/// Refits one uniformly chosen plane to its region from a jittered start.
pub fn propose_relocate<R: Rng + ?Sized>(
    ctx: &ModelContext<'_>,
    model: &FrontierModel,
    rng: &mut R,
) -> Candidate {
    let mut cand = model.clone();
    let regions = model.regions();
    let k = rng.random_range(0..model.num_planes());
    let warm: Vec<f64> = params_of(&model.planes()[k])
        .into_iter()
        .map(|v| v * (1.0 + 0.01 * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    if let Ok(fit) = ctx.fit_indices(&regions[k], Some(&warm)) {
        let noise = cand.planes()[k].noise_variance;
        cand.planes_mut()[k] = plane_from_fit(&fit, noise);
    }
    let mut before = regions;
    cand.reassign(ctx.inputs);
    // Plane k was just refitted; only membership changes elsewhere matter.
    before[k] = cand.regions()[k].clone();
    refit_changed(ctx, &mut cand, &before);
    Candidate {
        model: cand,
        kind: MoveKind::Relocate,
        eligible_regions: splittable_regions(ctx, model).len(),
    }
}

/// Drops one uniformly chosen plane and refits the survivors that absorbed its data.
pub fn propose_remove<R: Rng + ?Sized>(
    ctx: &ModelContext<'_>,
    model: &FrontierModel,
    rng: &mut R,
) -> Result<Candidate> {
    let kk = model.num_planes();
    if kk < 2 {
        return Err(Error::Domain("cannot remove the only plane".into()));
    }
    let drop = rng.random_range(0..kk);
    let mut before = model.regions();
    before.remove(drop);
    let mut planes = model.planes().to_vec();
    planes.remove(drop);
    let mut cand = FrontierModel::new(planes, ctx.inputs)?;
    refit_changed(ctx, &mut cand, &before);
    Ok(Candidate {
        eligible_regions: splittable_regions(ctx, &cand).len(),
        model: cand,
        kind: MoveKind::Remove,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::RngStream;

    fn kinked(n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let xs: Vec<Vec<f64>> = (0..n).map(|i| vec![1.0 + 9.0 * i as f64 / (n - 1) as f64]).collect();
        let z = xs.iter().map(|x| (1.0 + x[0]).min(4.0 + 0.25 * x[0]).ln()).collect();
        (xs, z)
    }

    #[test]
    fn add_separates_a_kinked_region() {
        let (xs, z) = kinked(40);
        let fit = FitOptions::default();
        let ctx = ModelContext { inputs: &xs, targets: &z, fit: &fit, sigma_prior: SigmaPrior::default() };
        let all: Vec<usize> = (0..xs.len()).collect();
        let single = ctx.fit_indices(&all, None).unwrap();
        let model = FrontierModel::new(vec![plane_from_fit(&single, 0.01)], &xs).unwrap();
        let mut rng = RngStream::new(1);
        let cand = propose_add(&ctx, &model, 0, 20, 4, &mut rng).unwrap();
        assert_eq!(cand.model.num_planes(), 2);
        let sse = |m: &FrontierModel| -> f64 {
            ctx.region_residuals(m).unwrap().iter().flatten().map(|r| r * r).sum()
        };
        assert!(sse(&cand.model) < 1e-3 * sse(&model), "{} vs {}", sse(&cand.model), sse(&model));
    }

    #[test]
    fn add_never_creates_a_sub_minimal_region() {
        let xs: Vec<Vec<f64>> = (0..6).map(|i| vec![1.0 + i as f64]).collect();
        let z: Vec<f64> = xs.iter().map(|x| (2.0 * x[0]).ln()).collect();
        let fit = FitOptions::default();
        let ctx = ModelContext { inputs: &xs, targets: &z, fit: &fit, sigma_prior: SigmaPrior::default() };
        let model = FrontierModel::new(vec![Hyperplane::new(0.0, vec![2.0], 0.01).unwrap()], &xs).unwrap();
        let mut rng = RngStream::new(2);
        for _ in 0..20 {
            match propose_add(&ctx, &model, 0, 1, 1, &mut rng) {
                Ok(c) => assert!(c.model.region_sizes().iter().all(|&s| s >= 3)),
                Err(e) => assert!(matches!(e, Error::NoFeasibleSplit)),
            }
        }
    }

    #[test]
    fn relocate_with_one_plane_is_a_global_refit() {
        let (xs, z) = kinked(30);
        let fit = FitOptions::default();
        let ctx = ModelContext { inputs: &xs, targets: &z, fit: &fit, sigma_prior: SigmaPrior::default() };
        let all: Vec<usize> = (0..xs.len()).collect();
        let global = ctx.fit_indices(&all, None).unwrap();
        let start = FrontierModel::new(vec![Hyperplane::new(1.0, vec![0.5], 0.01).unwrap()], &xs).unwrap();
        let mut rng = RngStream::new(3);
        let cand = propose_relocate(&ctx, &start, &mut rng);
        let p = &cand.model.planes()[0];
        assert!((p.intercept - global.intercept).abs() < 1e-6);
        assert!((p.slopes[0] - global.slopes[0]).abs() < 1e-6);
    }

    #[test]
    fn removal_keeps_at_least_one_plane() {
        let (xs, z) = kinked(30);
        let fit = FitOptions::default();
        let ctx = ModelContext { inputs: &xs, targets: &z, fit: &fit, sigma_prior: SigmaPrior::default() };
        let model = FrontierModel::new(
            vec![
                Hyperplane::new(1.0, vec![1.0], 0.01).unwrap(),
                Hyperplane::new(4.0, vec![0.25], 0.01).unwrap(),
            ],
            &xs,
        )
        .unwrap();
        let mut rng = RngStream::new(4);
        let cand = propose_remove(&ctx, &model, &mut rng).unwrap();
        assert_eq!(cand.model.num_planes(), 1);
        assert!(propose_remove(&ctx, &cand.model, &mut rng).is_err());
    }
}
