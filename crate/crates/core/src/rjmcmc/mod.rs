//! Reversible-jump moves over the number of hyperplanes.
//!
//! Each model-block step draws one of add, relocate or remove, builds a
//! candidate frontier with freshly fitted planes and accepts it with a
//! Metropolis-Hastings test. The optional coefficient sampler in
//! [`full_bayes`] replaces least-squares points with posterior draws.

mod acceptance;
pub mod full_bayes;
mod proposals;
mod restart;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use acceptance::{accept_move, collapsed_log_likelihood, log_likelihood, AcceptanceScore, Decision};
pub use proposals::{
    draw_noise_variances, is_valid_model, propose_add, propose_relocate, propose_remove, splittable_regions,
    Candidate, ModelContext, SigmaPrior,
};
pub use restart::{restart_if_stalled, StallMonitor};

use crate::error::{Error, Result};
use crate::frontier::FrontierModel;

/// Move-probability and proposal controls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MoveConfig {
    /// Scale of the add/remove probabilities, in (0, 0.5].
    pub c: f64,
    /// Poisson rate of the prior on `K - 1`.
    pub lambda: f64,
    /// Candidate knots per split (L).
    pub knots_per_region: usize,
    /// Candidate directions per knot (M).
    pub directions_per_knot: usize,
    /// Consecutive rejections that trigger a restart.
    pub stall_rejects: usize,
    /// Draw-time multiple that triggers a restart; `None` keeps runs reproducible.
    pub stall_factor: Option<f64>,
    pub score: AcceptanceScore,
}

impl Default for MoveConfig {
    fn default() -> Self {
        Self {
            c: 0.4,
            lambda: 2.0,
            knots_per_region: 5,
            directions_per_knot: 5,
            stall_rejects: 50,
            stall_factor: None,
            score: AcceptanceScore::default(),
        }
    }
}

impl MoveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c <= 0.5) {
            return Err(Error::Config(format!("c must lie in (0, 0.5], got {}", self.c)));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.knots_per_region == 0 || self.directions_per_knot == 0 {
            return Err(Error::Config("knots_per_region and directions_per_knot must be >= 1".into()));
        }
        if self.stall_rejects == 0 {
            return Err(Error::Config("stall_rejects must be >= 1".into()));
        }
        if let Some(f) = self.stall_factor {
            if !(f > 1.0) {
                return Err(Error::Config(format!("stall_factor must exceed 1, got {f}")));
            }
        }
        self.score.validate()
    }
}

/// Kind of reversible-jump move.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveKind {
    Add,
    Relocate,
    Remove,
}

/// Birth, death and relocation probabilities at the current `K`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MoveProbabilities {
    pub add: f64,
    pub remove: f64,
    pub relocate: f64,
}

/// Log prior mass of `K` planes under `K - 1 ~ Poisson(lambda)`.
pub fn log_prior_k(k: usize, lambda: f64) -> f64 {
    if k == 0 {
        return f64::NEG_INFINITY;
    }
    let m = (k - 1) as f64;
    m * lambda.ln() - lambda - ln_factorial(k - 1)
}

fn ln_factorial(m: usize) -> f64 {
    (1..=m).map(|i| (i as f64).ln()).sum()
}

pub fn move_probabilities(k: usize, cfg: &MoveConfig) -> MoveProbabilities {
    assert!(k >= 1, "a frontier has at least one plane");
    let here = log_prior_k(k, cfg.lambda);
    let ratio = |other: usize| (log_prior_k(other, cfg.lambda) - here).exp().min(1.0);
    let add = cfg.c * ratio(k + 1);
    let remove = cfg.c * ratio(k - 1);
    MoveProbabilities {
        add,
        remove,
        relocate: 1.0 - add - remove,
    }
}

pub fn choose_move<R: Rng + ?Sized>(probs: &MoveProbabilities, rng: &mut R) -> MoveKind {
    let u: f64 = rng.random();
    if u < probs.add {
        MoveKind::Add
    } else if u < probs.add + probs.remove {
        MoveKind::Remove
    } else {
        MoveKind::Relocate
    }
}

/// Full chain state at one iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub model: FrontierModel,
    /// One inefficiency term per unit (observation, or firm in panel runs).
    pub u: Vec<f64>,
    pub theta: f64,
    pub gamma: Option<Vec<f64>>,
    pub delta: Option<Vec<f64>>,
    pub iteration: usize,
    pub mse_y: f64,
}

impl ChainState {
    pub fn num_planes(&self) -> usize {
        self.model.num_planes()
    }

    pub fn mean_u(&self) -> f64 {
        if self.u.is_empty() {
            0.0
        } else {
            self.u.iter().sum::<f64>() / self.u.len() as f64
        }
    }
}
