use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use statrs::function::gamma::ln_gamma;

use super::proposals::{draw_noise_variances, is_valid_model, splittable_regions, Candidate, ModelContext, SigmaPrior};
use super::{log_prior_k, move_probabilities, MoveConfig, MoveKind};
use crate::error::{Error, Result};
use crate::frontier::FrontierModel;
use crate::samplers::sigma_posterior_params;

/// How a frontier is scored in the acceptance ratio.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AcceptanceScore {
    /// Gaussian-mixture likelihood at the fitted coefficients with each region
    /// variance integrated against its inverse-gamma prior.
    #[default]
    Likelihood,
    /// Likelihood plus a Laplace approximation of integrating each plane's
    /// coefficients against an `N(0, prior_variance I)` prior.
    Laplace { prior_variance: f64 },
}

impl AcceptanceScore {
    pub fn validate(&self) -> Result<()> {
        match self {
            AcceptanceScore::Likelihood => Ok(()),
            AcceptanceScore::Laplace { prior_variance } if *prior_variance > 0.0 => Ok(()),
            AcceptanceScore::Laplace { prior_variance } => Err(Error::Config(format!(
                "laplace prior_variance must be positive, got {prior_variance}"
            ))),
        }
    }
}

/// Outcome of one Metropolis-Hastings test.
#[derive(Clone, Debug)]
pub struct Decision {
    pub accepted: bool,
    pub log_ratio: f64,
    /// Rejected without a likelihood comparison (invalid or inconsistent support).
    pub automatic: bool,
    /// The candidate with its freshly drawn noise variances, when accepted.
    pub model: Option<FrontierModel>,
}

impl Decision {
    fn automatic() -> Self {
        Decision {
            accepted: false,
            log_ratio: f64::NEG_INFINITY,
            automatic: true,
            model: None,
        }
    }
}

/// Gaussian-mixture log likelihood of the log residuals under each region's variance.
pub fn log_likelihood(ctx: &ModelContext<'_>, model: &FrontierModel) -> f64 {
    let Some(residuals) = ctx.region_residuals(model) else {
        return f64::NEG_INFINITY;
    };
    let mut ll = 0.0;
    for (plane, r) in model.planes().iter().zip(&residuals) {
        let v = plane.noise_variance;
        let sse: f64 = r.iter().map(|e| e * e).sum();
        ll += -0.5 * r.len() as f64 * (2.0 * std::f64::consts::PI * v).ln() - sse / (2.0 * v);
    }
    ll
}

/// Laplace correction: log prior density at the fit plus the log volume of
/// the local Gaussian posterior of each plane's coefficients.
fn laplace_correction(ctx: &ModelContext<'_>, model: &FrontierModel, prior_variance: f64) -> f64 {
    let regions = model.regions();
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut total = 0.0;
    let Some(residuals) = ctx.region_residuals(model) else {
        return f64::NEG_INFINITY;
    };
    for ((plane, idx), r) in model.planes().iter().zip(&regions).zip(&residuals) {
        let p = plane.dim() + 1;
        let sse: f64 = r.iter().map(|e| e * e).sum();
        let variance = ctx.sigma_prior.profile_variance(sse, r.len());
        let mut info = DMatrix::<f64>::zeros(p, p);
        let mut row = vec![0.0; p];
        for &i in idx {
            let x = &ctx.inputs[i];
            let g = plane.value(x);
            row[0] = 1.0 / g;
            for j in 0..x.len() {
                row[j + 1] = x[j] / g;
            }
            for a in 0..p {
                for b in 0..p {
                    info[(a, b)] += row[a] * row[b] / variance;
                }
            }
        }
        for a in 0..p {
            info[(a, a)] += 1.0 / prior_variance;
        }
        let Some(chol) = info.cholesky() else {
            return f64::NEG_INFINITY;
        };
        let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let sq = plane.intercept.powi(2) + plane.slopes.iter().map(|b| b * b).sum::<f64>();
        total += -0.5 * p as f64 * (two_pi * prior_variance).ln() - sq / (2.0 * prior_variance)
            + 0.5 * p as f64 * two_pi.ln()
            - 0.5 * log_det;
    }
    total
}

/// Log likelihood at the fitted coefficients with every region variance
/// integrated out against `IG(shape, scale)`.
pub fn collapsed_log_likelihood(ctx: &ModelContext<'_>, model: &FrontierModel) -> f64 {
    let Some(residuals) = ctx.region_residuals(model) else {
        return f64::NEG_INFINITY;
    };
    let SigmaPrior { shape, scale } = ctx.sigma_prior;
    residuals
        .iter()
        .map(|r| {
            let (a, b) = sigma_posterior_params(r, shape, scale);
            shape * scale.ln() - a * b.ln() + ln_gamma(a) - ln_gamma(shape)
                - 0.5 * r.len() as f64 * (2.0 * std::f64::consts::PI).ln()
        })
        .sum()
}

fn score(ctx: &ModelContext<'_>, model: &FrontierModel, cfg: &MoveConfig) -> f64 {
    let ll = collapsed_log_likelihood(ctx, model);
    match cfg.score {
        AcceptanceScore::Likelihood => ll,
        AcceptanceScore::Laplace { prior_variance } => ll + laplace_correction(ctx, model, prior_variance),
    }
}

/// Whether the number of supported planes moved the way the move kind says.
pub(crate) fn support_consistent(kind: MoveKind, before: usize, after: usize) -> bool {
    match kind {
        MoveKind::Relocate => after == before,
        MoveKind::Add => after == before + 1,
        MoveKind::Remove => after + 1 == before,
    }
}

/// Log of `q(reverse) / q(forward)` for a trans-dimensional move.
///
/// An add from `K` picks one of the splittable regions; its reverse removes one
/// of `K + 1` planes uniformly. The `1/(LM)` split-selection mass appears on
/// both sides and cancels.
fn log_proposal_ratio(kind: MoveKind, k_current: usize, k_candidate: usize, eligible_fwd: usize, eligible_rev: usize, cfg: &MoveConfig) -> f64 {
    match kind {
        MoveKind::Relocate => 0.0,
        MoveKind::Add => {
            let fwd = move_probabilities(k_current, cfg).add / eligible_fwd.max(1) as f64;
            let rev = move_probabilities(k_candidate, cfg).remove / k_candidate as f64;
            rev.ln() - fwd.ln()
        }
        MoveKind::Remove => {
            let fwd = move_probabilities(k_current, cfg).remove / k_current as f64;
            if eligible_rev == 0 {
                return f64::NEG_INFINITY;
            }
            let rev = move_probabilities(k_candidate, cfg).add / eligible_rev as f64;
            rev.ln() - fwd.ln()
        }
    }
}

/// Metropolis-Hastings test of a candidate frontier against the current one.
///
/// Candidates that break a region-size or positivity constraint, or whose
/// count of supported planes did not change as the move kind requires, are
/// rejected outright. Otherwise the ratio is
/// `L(cand) p(K_cand) q(cand -> cur) / (L(cur) p(K) q(cur -> cand))` with the
/// region variances integrated out of `L`; relocations use the likelihood
/// ratio alone. An accepted candidate gets fresh conjugate variance draws.
pub fn accept_move<R: Rng + ?Sized>(
    ctx: &ModelContext<'_>,
    current: &FrontierModel,
    mut candidate: Candidate,
    cfg: &MoveConfig,
    rng: &mut R,
) -> Decision {
    if !is_valid_model(ctx, &candidate.model)
        || !support_consistent(
            candidate.kind,
            current.supported_planes(),
            candidate.model.supported_planes(),
        )
    {
        return Decision::automatic();
    }
    let k = current.num_planes();
    let kc = candidate.model.num_planes();
    let mut log_ratio = score(ctx, &candidate.model, cfg) - score(ctx, current, cfg);
    if candidate.kind != MoveKind::Relocate {
        let eligible_rev = match candidate.kind {
            MoveKind::Remove => splittable_regions(ctx, &candidate.model).len(),
            _ => 0,
        };
        log_ratio += log_prior_k(kc, cfg.lambda) - log_prior_k(k, cfg.lambda)
            + log_proposal_ratio(candidate.kind, k, kc, candidate.eligible_regions, eligible_rev, cfg);
    }
    if log_ratio.is_nan() {
        return Decision::automatic();
    }
    let accepted = log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio;
    if accepted && draw_noise_variances(ctx, &mut candidate.model, rng).is_err() {
        return Decision::automatic();
    }
    Decision {
        accepted,
        log_ratio,
        automatic: false,
        model: accepted.then_some(candidate.model),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitter::FitOptions;
    use crate::frontier::Hyperplane;
    use crate::rjmcmc::proposals::SigmaPrior;
    use crate::samplers::RngStream;

    #[test]
    fn support_rule() {
        assert!(support_consistent(MoveKind::Relocate, 3, 3));
        assert!(!support_consistent(MoveKind::Relocate, 3, 2));
        assert!(support_consistent(MoveKind::Add, 2, 3));
        assert!(!support_consistent(MoveKind::Add, 2, 2));
        assert!(support_consistent(MoveKind::Remove, 2, 1));
        assert!(!support_consistent(MoveKind::Remove, 2, 2));
    }

    #[test]
    fn identical_candidate_has_unit_ratio() {
        let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![1.0 + i as f64 * 0.5]).collect();
        let z: Vec<f64> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| (1.0 + 0.5 * x[0]).ln() + 0.01 * ((i % 3) as f64 - 1.0))
            .collect();
        let fit = FitOptions::default();
        let ctx = ModelContext { inputs: &xs, targets: &z, fit: &fit, sigma_prior: SigmaPrior::default() };
        let model = FrontierModel::new(vec![Hyperplane::new(1.0, vec![0.5], 1e-4).unwrap()], &xs).unwrap();
        for score in [AcceptanceScore::Likelihood, AcceptanceScore::Laplace { prior_variance: 2000.0 }] {
            let cfg = MoveConfig { score, ..MoveConfig::default() };
            let mut rng = RngStream::new(9);
            for _ in 0..20 {
                let cand = Candidate { model: model.clone(), kind: MoveKind::Relocate, eligible_regions: 1 };
                let d = accept_move(&ctx, &model, cand, &cfg, &mut rng);
                assert_eq!(d.log_ratio, 0.0);
                assert!(d.accepted);
            }
        }
    }

    #[test]
    fn collapsed_likelihood_matches_numerical_integration() {
        let xs: Vec<Vec<f64>> = (0..6).map(|i| vec![1.0 + i as f64]).collect();
        let z: Vec<f64> = xs.iter().enumerate().map(|(i, x)| (2.0 * x[0]).ln() + 0.1 * ((i % 3) as f64 - 1.0)).collect();
        let fit = FitOptions::default();
        let prior = SigmaPrior::default();
        let ctx = ModelContext { inputs: &xs, targets: &z, fit: &fit, sigma_prior: prior };
        let model = FrontierModel::new(vec![Hyperplane::new(0.0, vec![2.0], 1.0).unwrap()], &xs).unwrap();
        let r = &ctx.region_residuals(&model).unwrap()[0];
        let sse: f64 = r.iter().map(|e| e * e).sum();
        let n = r.len() as f64;
        // Integrate N(r; 0, v) IG(v; a, b) dv on a log grid in v.
        let (a, b) = (prior.shape, prior.scale);
        let mut total = 0.0;
        let steps = 200_000;
        let (lo, hi) = ((1e-8f64).ln(), (1e3f64).ln());
        let h = (hi - lo) / steps as f64;
        for s in 0..steps {
            let t = lo + (s as f64 + 0.5) * h;
            let v = t.exp();
            let log_ig = a * b.ln() - ln_gamma(a) - (a + 1.0) * v.ln() - b / v;
            let log_lik = -0.5 * n * (2.0 * std::f64::consts::PI * v).ln() - sse / (2.0 * v);
            total += (log_ig + log_lik).exp() * v * h;
        }
        let got = collapsed_log_likelihood(&ctx, &model);
        assert!((got - total.ln()).abs() < 1e-6, "{got} vs {}", total.ln());
    }
}
