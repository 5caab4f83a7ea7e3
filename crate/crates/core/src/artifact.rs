//! The saved result of a fit: configuration, data and posterior summary.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimator::{FitConfig, PosteriorSummary};
use crate::frontier::Hyperplane;

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitArtifact {
    pub version: u32,
    pub config: FitConfig,
    pub data: Dataset,
    pub summary: PosteriorSummary,
}

fn check_planes(planes: &[Hyperplane], d: usize, what: &str) -> Result<()> {
    if planes.is_empty() {
        return Err(Error::Domain(format!("{what} has no planes")));
    }
    for p in planes {
        if p.dim() != d {
            return Err(Error::LengthMismatch { expected: d, found: p.dim() });
        }
        if !p.intercept.is_finite() {
            return Err(Error::Domain(format!("{what} has a non-finite intercept")));
        }
        Hyperplane::new(p.intercept, p.slopes.clone(), p.noise_variance)?;
    }
    Ok(())
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, found })
    }
}

impl FitArtifact {
    pub fn new(config: FitConfig, data: Dataset, summary: PosteriorSummary) -> Self {
        Self { version: ARTIFACT_VERSION, config, data, summary }
    }

    /// Parses and validates an artifact.
    pub fn from_json(text: &str) -> Result<Self> {
        let a: FitArtifact = serde_json::from_str(text)?;
        a.validate()?;
        Ok(a)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Checks every length and plane so that downstream evaluation cannot
    /// index out of bounds.
    pub fn validate(&self) -> Result<()> {
        if self.version != ARTIFACT_VERSION {
            return Err(Error::Domain(format!(
                "artifact version {} is not supported (expected {ARTIFACT_VERSION})",
                self.version
            )));
        }
        self.config.validate()?;
        self.data.validate()?;
        let n = self.data.len();
        let d = self.data.dim();
        let s = &self.summary;
        check_len(n, s.frontier.len())?;
        check_len(n, s.inefficiency.len())?;
        if s.frontier.iter().chain(&s.inefficiency).any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite fitted value".into()));
        }
        for m in &s.estimate.members {
            check_planes(m, d, "smoothed frontier member")?;
        }
        if s.estimate.members.is_empty() {
            return Err(Error::Domain("smoothed frontier has no members".into()));
        }
        for st in &s.states {
            check_planes(st.model.planes(), d, "saved state")?;
            let k = st.model.num_planes();
            if !st.model.partition().is_empty() {
                check_len(n, st.model.partition().len())?;
            }
            if st.model.partition().iter().any(|&j| j >= k) {
                return Err(Error::Domain("partition refers to a missing plane".into()));
            }
            if st.u.iter().any(|u| !(u.is_finite() && *u >= 0.0)) {
                return Err(Error::Domain("inefficiency draws must be finite and nonnegative".into()));
            }
        }
        if let Some(i) = s.selected {
            if i >= s.states.len() {
                return Err(Error::Domain(format!("selected state {i} is out of range")));
            }
        }
        if let (Some(g), Some(p)) = (&s.gamma, &s.gamma_periods) {
            check_len(g.len(), p.len())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::run;
    use crate::frontier::Observation;

    fn artifact() -> FitArtifact {
        let obs = (0..12)
            .map(|i| {
                let x = 1.0 + i as f64;
                Observation::new(vec![x], x.sqrt() * (1.0 - 0.01 * (i % 3) as f64)).unwrap()
            })
            .collect();
        let data = Dataset::new(obs, None).unwrap();
        let cfg = FitConfig { burn_in: 5, warm_up: 2, stationarity_window: 5, max_iterations: 30, ..FitConfig::default() };
        let summary = run(&data, &cfg, None, None).unwrap();
        FitArtifact::new(cfg, data, summary)
    }

    #[test]
    fn round_trips_through_json() {
        let a = artifact();
        let back = FitArtifact::from_json(&a.to_json().unwrap()).unwrap();
        assert!(back == a);
    }

    #[test]
    fn rejects_inconsistent_lengths_and_versions() {
        let mut a = artifact();
        a.summary.frontier.pop();
        assert!(matches!(a.validate(), Err(Error::LengthMismatch { .. })));
        let mut a = artifact();
        a.version = 99;
        assert!(a.validate().is_err());
        let mut a = artifact();
        a.summary.estimate.members[0][0].slopes.push(1.0);
        assert!(a.validate().is_err());
    }
}
