//! Efficiency, substitution and scale measures read off a fitted frontier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::quantile_sorted;
use crate::frontier::{Frontier, FrontierModel, SLOPE_FLOOR};

/// Slopes at or below this count as zero when classifying planes.
pub const ZERO_SLOPE_TOL: f64 = 1e-6;

/// Minimum, quartiles and maximum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| v.is_nan()) {
            return Err(Error::Domain("quantiles need non-NaN values".into()));
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        Ok(Self {
            min: s[0],
            q25: quantile_sorted(&s, 0.25),
            median: quantile_sorted(&s, 0.5),
            q75: quantile_sorted(&s, 0.75),
            max: s[s.len() - 1],
        })
    }

    /// Rows in table order with their labels.
    pub fn rows(&self) -> [(&'static str, f64); 5] {
        [
            ("min", self.min),
            ("25th", self.q25),
            ("median", self.median),
            ("75th", self.q75),
            ("max", self.max),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    /// Posterior mean inefficiency of each unit.
    pub mean_u: Vec<f64>,
    /// `exp(-mean_u)` of each unit.
    pub efficiency: Vec<f64>,
    pub quantiles: Quantiles,
    /// Median over units of `1 - exp(-mean_u)`.
    pub median_inefficiency: f64,
    /// Median over units of `mean_u` itself.
    pub median_u: f64,
}

/// Technical efficiency from saved inefficiency draws, one vector per iteration.
pub fn technical_efficiency(draws: &[Vec<f64>]) -> Result<EfficiencyReport> {
    let first = draws.first().ok_or_else(|| Error::Domain("no inefficiency draws".into()))?;
    let n = first.len();
    let mut mean_u = vec![0.0; n];
    for d in draws {
        if d.len() != n {
            return Err(Error::LengthMismatch { expected: n, found: d.len() });
        }
        mean_u.iter_mut().zip(d).for_each(|(m, u)| *m += u);
    }
    mean_u.iter_mut().for_each(|m| *m /= draws.len() as f64);
    let efficiency: Vec<f64> = mean_u.iter().map(|u| (-u).exp()).collect();
    let ineff: Vec<f64> = efficiency.iter().map(|te| 1.0 - te).collect();
    Ok(EfficiencyReport {
        quantiles: Quantiles::of(&efficiency)?,
        median_inefficiency: Quantiles::of(&ineff)?.median,
        median_u: Quantiles::of(&mean_u)?.median,
        mean_u,
        efficiency,
    })
}

/// Marginal rate of technical substitution `beta_1 / beta_2` at `x`.
pub fn substitution_ratio(frontier: &dyn Frontier, x: &[f64]) -> Result<f64> {
    if frontier.dim() != 2 {
        return Err(Error::Domain(format!("substitution ratio needs two inputs, got {}", frontier.dim())));
    }
    let mp = frontier.marginal_products(x);
    if mp[1] <= SLOPE_FLOOR {
        return Err(Error::ZeroDenominator(mp[1]));
    }
    Ok(mp[0] / mp[1])
}

/// Frontier shift factor `exp(gamma_t)` of a period effect.
pub fn frontier_multiplier(gamma_t: f64) -> f64 {
    gamma_t.exp()
}

/// Fraction of observations whose supporting plane has every slope above
/// [`ZERO_SLOPE_TOL`].
pub fn full_dimensional_share(model: &FrontierModel) -> f64 {
    let full: Vec<bool> = model
        .planes()
        .iter()
        .map(|p| p.slopes.iter().all(|&b| b > ZERO_SLOPE_TOL))
        .collect();
    let n = model.partition().len();
    if n == 0 {
        return 1.0;
    }
    model.partition().iter().filter(|&&k| full[k]).count() as f64 / n as f64
}

/// Most productive scale size along a ray.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mpss {
    pub capital: f64,
    pub labor: f64,
    /// `f / I` at the optimum.
    pub average_product: f64,
}

/// Grid search for the scale maximizing `f(x) / I(x)` on the ray
/// `x = (ratio * w, w)`, `w` uniform over `labor_range`, with
/// `I = beta . x` from the supporting slopes at each point.
///
/// With one input the ray is `x = w` and `ratio` is unused. Ties go to the
/// smallest `w`. Grid points where the frontier is not positive are skipped.
pub fn mpss(frontier: &dyn Frontier, ratio: f64, grid_size: usize, labor_range: (f64, f64)) -> Result<Mpss> {
    let d = frontier.dim();
    if d > 2 {
        return Err(Error::Domain(format!("scale search supports one or two inputs, got {d}")));
    }
    if grid_size < 2 {
        return Err(Error::Domain("grid_size must be >= 2".into()));
    }
    let (lo, hi) = labor_range;
    if !(lo > 0.0 && hi >= lo && ratio > 0.0) {
        return Err(Error::Domain(format!("invalid ray: ratio {ratio}, labor range ({lo}, {hi})")));
    }
    let mut best: Option<(f64, f64)> = None;
    for l in 0..grid_size {
        let w = lo + (hi - lo) * l as f64 / (grid_size - 1) as f64;
        let x = if d == 1 { vec![w] } else { vec![ratio * w, w] };
        let f = match frontier.evaluate(&x) {
            Ok(f) => f,
            Err(Error::NonPositivePrediction { .. }) => continue,
            Err(e) => return Err(e),
        };
        let beta = frontier.marginal_products(&x);
        let aggregate: f64 = beta.iter().zip(&x).map(|(b, v)| b * v).sum();
        if aggregate <= 0.0 {
            continue;
        }
        let ap = f / aggregate;
        if best.map_or(true, |(_, b)| ap > b) {
            best = Some((w, ap));
        }
    }
    let (w, ap) = best.ok_or_else(|| Error::Domain("the frontier is not positive anywhere on the ray".into()))?;
    Ok(Mpss {
        capital: if d == 1 { w } else { ratio * w },
        labor: w,
        average_product: ap,
    })
}
