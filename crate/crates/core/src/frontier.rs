//! Min-of-hyperplanes frontiers.
//!
//! A frontier is `f(x) = min_k (alpha_k + beta_k . x)` with every slope
//! nonnegative, so it is concave by construction and nondecreasing in each
//! input. Observations are partitioned into basis regions by their argmin
//! plane.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slopes are stored with a lower bound of zero but fitted with this floor.
pub const SLOPE_FLOOR: f64 = 1e-8;

/// Absolute slack allowed by the midpoint concavity test.
pub const CONCAVITY_TOL: f64 = 1e-9;

/// Smallest number of observations a plane in `d` inputs may support.
pub fn min_region_size(dim: usize) -> usize {
    dim + 2
}

/// One production record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub inputs: Vec<f64>,
    pub output: f64,
    #[serde(default)]
    pub firm_id: Option<String>,
    #[serde(default)]
    pub period: Option<i64>,
}

impl Observation {
    pub fn new(inputs: Vec<f64>, output: f64) -> Result<Self> {
        let obs = Self {
            inputs,
            output,
            firm_id: None,
            period: None,
        };
        obs.validate(0)?;
        Ok(obs)
    }

    /// Checks positivity of output and every input; `row` is used for the message.
    pub fn validate(&self, row: usize) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::InvalidData {
                row,
                msg: "observation has no inputs".into(),
            });
        }
        if !(self.output.is_finite() && self.output > 0.0) {
            return Err(Error::InvalidData {
                row,
                msg: format!("output must be positive, got {}", self.output),
            });
        }
        if let Some(j) = self
            .inputs
            .iter()
            .position(|v| !(v.is_finite() && *v > 0.0))
        {
            return Err(Error::InvalidData {
                row,
                msg: format!("input x{} must be positive, got {}", j + 1, self.inputs[j]),
            });
        }
        Ok(())
    }
}

/// One affine piece `alpha + beta . x` with its region noise variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperplane {
    pub intercept: f64,
    pub slopes: Vec<f64>,
    pub noise_variance: f64,
}

impl Hyperplane {
    pub fn new(intercept: f64, slopes: Vec<f64>, noise_variance: f64) -> Result<Self> {
        if slopes.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Error::Domain(format!("slopes must be nonnegative: {slopes:?}")));
        }
        if !(noise_variance.is_finite() && noise_variance > 0.0) {
            return Err(Error::Domain(format!(
                "noise variance must be positive, got {noise_variance}"
            )));
        }
        if !intercept.is_finite() {
            return Err(Error::Domain("intercept must be finite".into()));
        }
        Ok(Self {
            intercept,
            slopes,
            noise_variance,
        })
    }

    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        self.intercept
            + self
                .slopes
                .iter()
                .zip(x)
                .map(|(b, xi)| b * xi)
                .sum::<f64>()
    }

    pub fn dim(&self) -> usize {
        self.slopes.len()
    }
}

/// Index of the lowest plane at `x`; ties go to the lowest index.
pub fn argmin_plane(planes: &[Hyperplane], x: &[f64]) -> (usize, f64) {
    let mut best = (0, planes[0].value(x));
    for (k, p) in planes.iter().enumerate().skip(1) {
        let v = p.value(x);
        if v < best.1 {
            best = (k, v);
        }
    }
    best
}

/// Basis-region assignment of every row of `inputs`.
pub fn assign_regions(planes: &[Hyperplane], inputs: &[Vec<f64>]) -> Vec<usize> {
    inputs.iter().map(|x| argmin_plane(planes, x).0).collect()
}

/// Something that can be evaluated and differentiated like a production frontier.
pub trait Frontier {
    fn dim(&self) -> usize;

    /// Frontier output at `x`; errors when the value is not positive.
    fn evaluate(&self, x: &[f64]) -> Result<f64>;

    /// Gradient (marginal products) at `x`.
    fn marginal_products(&self, x: &[f64]) -> Vec<f64>;
}

/// K hyperplanes together with the basis-region partition of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontierModel {
    planes: Vec<Hyperplane>,
    partition: Vec<usize>,
}

impl FrontierModel {
    /// Builds the model and assigns `inputs` to their argmin planes.
    pub fn new(planes: Vec<Hyperplane>, inputs: &[Vec<f64>]) -> Result<Self> {
        if planes.is_empty() {
            return Err(Error::Domain("a frontier needs at least one plane".into()));
        }
        let d = planes[0].dim();
        if planes.iter().any(|p| p.dim() != d) {
            return Err(Error::Domain("planes disagree on input dimension".into()));
        }
        if let Some(x) = inputs.iter().find(|x| x.len() != d) {
            return Err(Error::LengthMismatch {
                expected: d,
                found: x.len(),
            });
        }
        let partition = assign_regions(&planes, inputs);
        Ok(Self { planes, partition })
    }

    /// Model without a partition, for evaluation away from any dataset.
    pub fn from_planes(planes: Vec<Hyperplane>) -> Result<Self> {
        Self::new(planes, &[])
    }

    pub fn planes(&self) -> &[Hyperplane] {
        &self.planes
    }

    pub fn planes_mut(&mut self) -> &mut [Hyperplane] {
        &mut self.planes
    }

    pub fn partition(&self) -> &[usize] {
        &self.partition
    }

    pub fn num_planes(&self) -> usize {
        self.planes.len()
    }

    /// Recomputes the partition after the planes changed.
    pub fn reassign(&mut self, inputs: &[Vec<f64>]) {
        self.partition = assign_regions(&self.planes, inputs);
    }

    pub fn into_planes(self) -> Vec<Hyperplane> {
        self.planes
    }

    /// Observation indices of each basis region.
    pub fn regions(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.planes.len()];
        for (i, &k) in self.partition.iter().enumerate() {
            out[k].push(i);
        }
        out
    }

    pub fn region_sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.planes.len()];
        for &k in &self.partition {
            out[k] += 1;
        }
        out
    }

    /// Number of planes supporting at least one observation.
    pub fn supported_planes(&self) -> usize {
        self.region_sizes().iter().filter(|&&s| s > 0).count()
    }

    /// Noise variance of the region observation `i` belongs to.
    pub fn noise_variance_of(&self, i: usize) -> f64 {
        self.planes[self.partition[i]].noise_variance
    }

    /// Frontier values at the partitioned observations; errors on non-positive values.
    pub fn fitted_values(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
        inputs
            .iter()
            .zip(&self.partition)
            .enumerate()
            .map(|(i, (x, &k))| {
                let v = self.planes[k].value(x);
                if v > 0.0 {
                    Ok(v)
                } else {
                    Err(Error::NonPositivePrediction {
                        index: Some(i),
                        value: v,
                    })
                }
            })
            .collect()
    }

    /// Supporting plane at `x`.
    pub fn supporting_plane(&self, x: &[f64]) -> usize {
        argmin_plane(&self.planes, x).0
    }
}

impl Frontier for FrontierModel {
    fn dim(&self) -> usize {
        self.planes[0].dim()
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        let (_, v) = argmin_plane(&self.planes, x);
        if v > 0.0 {
            Ok(v)
        } else {
            Err(Error::NonPositivePrediction {
                index: None,
                value: v,
            })
        }
    }

    fn marginal_products(&self, x: &[f64]) -> Vec<f64> {
        self.planes[self.supporting_plane(x)].slopes.clone()
    }
}

/// Pointwise average of several min-of-hyperplanes frontiers.
///
/// Averages of concave nondecreasing functions keep both properties, so this
/// is the smoothed estimator evaluated off the sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothedFrontier {
    pub members: Vec<Vec<Hyperplane>>,
}

impl SmoothedFrontier {
    pub fn new(members: Vec<Vec<Hyperplane>>) -> Result<Self> {
        if members.is_empty() || members.iter().any(|m| m.is_empty()) {
            return Err(Error::Domain("smoothed frontier needs nonempty members".into()));
        }
        Ok(Self { members })
    }
}

impl Frontier for SmoothedFrontier {
    fn dim(&self) -> usize {
        self.members[0][0].dim()
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        let total: f64 = self
            .members
            .iter()
            .map(|planes| argmin_plane(planes, x).1)
            .sum();
        let v = total / self.members.len() as f64;
        if v > 0.0 {
            Ok(v)
        } else {
            Err(Error::NonPositivePrediction {
                index: None,
                value: v,
            })
        }
    }

    fn marginal_products(&self, x: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.dim()];
        for planes in &self.members {
            let (k, _) = argmin_plane(planes, x);
            for (g, b) in grad.iter_mut().zip(&planes[k].slopes) {
                *g += b;
            }
        }
        let m = self.members.len() as f64;
        grad.iter_mut().for_each(|g| *g /= m);
        grad
    }
}

/// Midpoint concavity test over all pairs of probe points.
///
/// `f` is any scalar function so that non-concave evaluators can be audited
/// with the same routine.
pub fn check_concavity<F>(f: F, probes: &[Vec<f64>], tol: f64) -> bool
where
    F: Fn(&[f64]) -> f64,
{
    let values: Vec<f64> = probes.iter().map(|p| f(p)).collect();
    let mut mid = vec![0.0; probes.first().map_or(0, |p| p.len())];
    for i in 0..probes.len() {
        for j in (i + 1)..probes.len() {
            for ((m, a), b) in mid.iter_mut().zip(&probes[i]).zip(&probes[j]) {
                *m = 0.5 * (a + b);
            }
            if f(&mid) < 0.5 * (values[i] + values[j]) - tol {
                return false;
            }
        }
    }
    true
}

/// Concavity test of a frontier's raw min-of-planes values (no positivity check).
pub fn check_model_concavity(model: &FrontierModel, probes: &[Vec<f64>]) -> bool {
    check_concavity(
        |x| argmin_plane(model.planes(), x).1,
        probes,
        CONCAVITY_TOL,
    )
}
