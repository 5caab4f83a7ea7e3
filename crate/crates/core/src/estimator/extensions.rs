//! Time effects for panels and linear contextual effects.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::samplers::{ols, sample_mvn_conjugate, sample_truncated_normal, InefficiencyFamily, InefficiencyPrior};

/// Period dummies and firm grouping of a balanced panel.
#[derive(Clone, Debug, PartialEq)]
pub struct PanelSpec {
    /// Distinct periods in ascending order; the first is the base period.
    pub periods: Vec<i64>,
    /// Firm identifiers in order of first appearance.
    pub firms: Vec<String>,
    /// Firm index of each observation.
    pub firm_of: Vec<usize>,
    /// `n x (T - 1)` dummies, all zero for base-period rows.
    pub design: DMatrix<f64>,
    pub prior_mean: DVector<f64>,
    pub prior_cov: DMatrix<f64>,
}

impl PanelSpec {
    /// Builds the dummies from `firm` and `period`; every firm must appear
    /// exactly once in every period.
    pub fn from_dataset(data: &Dataset, prior_mean: f64, prior_variance: f64) -> Result<Self> {
        let mut periods: Vec<i64> = Vec::new();
        let mut firms: Vec<String> = Vec::new();
        let mut firm_index: BTreeMap<String, usize> = BTreeMap::new();
        let mut firm_of = Vec::with_capacity(data.len());
        for (i, o) in data.observations.iter().enumerate() {
            let (Some(f), Some(p)) = (&o.firm_id, o.period) else {
                return Err(Error::InvalidData { row: i, msg: "panel rows need both firm and period".into() });
            };
            let next = firms.len();
            let idx = *firm_index.entry(f.clone()).or_insert(next);
            if idx == next {
                firms.push(f.clone());
            }
            firm_of.push(idx);
            periods.push(p);
        }
        periods.sort_unstable();
        periods.dedup();
        let t = periods.len();
        let mut seen = vec![vec![false; t]; firms.len()];
        for (i, o) in data.observations.iter().enumerate() {
            let pi = periods.binary_search(&o.period.unwrap()).unwrap();
            if std::mem::replace(&mut seen[firm_of[i]][pi], true) {
                return Err(Error::InvalidData { row: i, msg: format!("firm {} repeats period {}", firms[firm_of[i]], periods[pi]) });
            }
        }
        if let Some(f) = seen.iter().position(|row| row.iter().any(|s| !s)) {
            return Err(Error::InvalidData { row: 0, msg: format!("panel is unbalanced: firm {} misses a period", firms[f]) });
        }
        let design = DMatrix::from_fn(data.len(), t.saturating_sub(1), |i, j| {
            let pi = periods.binary_search(&data.observations[i].period.unwrap()).unwrap();
            if pi == j + 1 { 1.0 } else { 0.0 }
        });
        let p = design.ncols();
        Ok(Self {
            periods,
            firms,
            firm_of,
            design,
            prior_mean: DVector::from_element(p, prior_mean),
            prior_cov: DMatrix::identity(p, p) * prior_variance,
        })
    }

    pub fn num_effects(&self) -> usize {
        self.design.ncols()
    }
}

/// Contextual variables entering the log frontier linearly.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextSpec {
    pub z: DMatrix<f64>,
    pub prior_mean: DVector<f64>,
    pub prior_cov: DMatrix<f64>,
}

impl ContextSpec {
    pub fn from_dataset(data: &Dataset, prior_mean: f64, prior_variance: f64) -> Result<Self> {
        let rows = data
            .context
            .as_ref()
            .ok_or_else(|| Error::InvalidData { row: 0, msg: "dataset has no contextual columns".into() })?;
        let r = rows[0].len();
        Ok(Self {
            z: DMatrix::from_fn(rows.len(), r, |i, j| rows[i][j]),
            prior_mean: DVector::from_element(r, prior_mean),
            prior_cov: DMatrix::identity(r, r) * prior_variance,
        })
    }
}

/// Truncated-normal location and variance of a firm's inefficiency given its
/// per-period residuals `eps_t = ln Y - ln f - shifts` and variances.
///
/// The precision is the sum of per-period precisions (plus `1/sigma0u^2` under
/// the half-normal prior); with one period this is the cross-sectional update.
pub fn panel_u_params(periods: &[(f64, f64)], prior: &InefficiencyPrior, theta: f64) -> (f64, f64) {
    let mut precision = 0.0;
    let mut weighted = 0.0;
    for &(eps, var) in periods {
        precision += 1.0 / var;
        weighted -= eps / var;
    }
    match prior.family {
        InefficiencyFamily::Exponential => {
            let var = 1.0 / precision;
            (var * (weighted - theta), var)
        }
        InefficiencyFamily::HalfNormal => {
            let var = 1.0 / (precision + 1.0 / prior.sigma0u_sq);
            (var * weighted, var)
        }
    }
}

pub fn sample_u_panel<R: Rng + ?Sized>(rng: &mut R, periods: &[(f64, f64)], prior: &InefficiencyPrior, theta: f64) -> f64 {
    let (mu, var) = panel_u_params(periods, prior, theta);
    sample_truncated_normal(rng, mu, var.sqrt(), 0.0)
}

/// Conjugate draw of a linear effect block from residual targets `r`.
pub fn gibbs_gamma_or_delta<R: Rng + ?Sized>(
    rng: &mut R,
    design: &DMatrix<f64>,
    targets: &[f64],
    noise_var: &[f64],
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let r = DVector::from_column_slice(targets);
    let b = ols(design, &r)?;
    sample_mvn_conjugate(rng, design, noise_var, prior_mean, prior_cov, &b)
}
