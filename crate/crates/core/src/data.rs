//! Observations and datasets.
//!
//! An observation carries fully observed covariates `x`, instruments `z`,
//! and an outcome that is present exactly when the response indicator is 1.
//! The indicator is not stored separately, so the two can never disagree.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub y: Option<f64>,
}

impl Observation {
    pub fn observed(x: Vec<f64>, z: Vec<f64>, y: f64) -> Self {
        Self { x, z, y: Some(y) }
    }

    pub fn missing(x: Vec<f64>, z: Vec<f64>) -> Self {
        Self { x, z, y: None }
    }

    /// Response indicator R.
    #[inline]
    pub fn r(&self) -> bool {
        self.y.is_some()
    }

    #[inline]
    pub fn r_f64(&self) -> f64 {
        if self.r() {
            1.0
        } else {
            0.0
        }
    }

    /// Outcome with the missing value replaced by zero. Only meaningful when
    /// multiplied by R.
    #[inline]
    pub fn y_or_zero(&self) -> f64 {
        self.y.unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dataset {
    observations: Vec<Observation>,
    covariate_names: Vec<String>,
    instrument_names: Vec<String>,
    #[serde(skip)]
    groups: Vec<(usize, usize)>,
}

/// Index of the first occurrence of each distinct observation and its count.
fn distinct_groups(observations: &[Observation]) -> Vec<(usize, usize)> {
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut groups: Vec<(usize, usize)> = Vec::new();
    for (i, o) in observations.iter().enumerate() {
        let key: Vec<u64> = o
            .x
            .iter()
            .chain(&o.z)
            .map(|v| v.to_bits())
            .chain(std::iter::once(o.y.map_or(u64::MAX, f64::to_bits)))
            .collect();
        match seen.get(&key) {
            Some(&g) => groups[g].1 += 1,
            None => {
                seen.insert(key, groups.len());
                groups.push((i, 1));
            }
        }
    }
    groups
}

impl Dataset {
    pub fn new(
        observations: Vec<Observation>,
        covariate_names: Vec<String>,
        instrument_names: Vec<String>,
    ) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::InsufficientData("dataset has no observations".into()));
        }
        let (nx, nz) = (covariate_names.len(), instrument_names.len());
        for (i, obs) in observations.iter().enumerate() {
            if obs.x.len() != nx || obs.z.len() != nz {
                return Err(Error::InvalidInput(format!(
                    "observation {i} has {} covariates and {} instruments, expected {nx} and {nz}",
                    obs.x.len(),
                    obs.z.len()
                )));
            }
            if let Some(y) = obs.y {
                if !y.is_finite() {
                    return Err(Error::InvalidInput(format!("observation {i} has non-finite outcome")));
                }
            }
        }
        let groups = distinct_groups(&observations);
        Ok(Self {
            observations,
            covariate_names,
            instrument_names,
            groups,
        })
    }

    /// Builds a dataset with generated column names `x1..`, `z1..`.
    pub fn from_observations(observations: Vec<Observation>) -> Result<Self> {
        let first = observations
            .first()
            .ok_or_else(|| Error::InsufficientData("dataset has no observations".into()))?;
        let cov = (1..=first.x.len()).map(|i| format!("x{i}")).collect();
        let inst = (1..=first.z.len()).map(|i| format!("z{i}")).collect();
        Self::new(observations, cov, inst)
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    /// Distinct observations as `(index of first occurrence, count)`, in
    /// order of first occurrence. Sums over the data go through these so that
    /// discrete data cost one evaluation per support point.
    pub fn groups(&self) -> &[(usize, usize)] {
        &self.groups
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn instrument_names(&self) -> &[String] {
        &self.instrument_names
    }

    pub fn n(&self) -> usize {
        self.observations.len()
    }

    pub fn n_observed(&self) -> usize {
        self.observations.iter().filter(|o| o.r()).count()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn n_instruments(&self) -> usize {
        self.instrument_names.len()
    }

    pub fn fully_observed(&self) -> bool {
        self.n_observed() == self.n()
    }

    /// Mean of the outcome among complete cases.
    pub fn complete_case_mean(&self) -> Option<f64> {
        let ys: Vec<f64> = self.observations.iter().filter_map(|o| o.y).collect();
        if ys.is_empty() {
            None
        } else {
            Some(crate::stats::mean(&ys))
        }
    }

    /// Checks that every instrument takes values in {0, 1}.
    pub fn require_binary_instruments(&self) -> Result<()> {
        for (i, obs) in self.observations.iter().enumerate() {
            if obs.z.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidInput(format!(
                    "observation {i}: instruments must be binary (0/1)"
                )));
            }
        }
        Ok(())
    }

    pub fn require_binary_outcome(&self) -> Result<()> {
        for (i, obs) in self.observations.iter().enumerate() {
            if let Some(y) = obs.y {
                if y != 0.0 && y != 1.0 {
                    return Err(Error::InvalidInput(format!(
                        "observation {i}: outcome must be binary (0/1) for the Bernoulli family"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn require_binary_covariates(&self) -> Result<()> {
        for (i, obs) in self.observations.iter().enumerate() {
            if obs.x.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidInput(format!(
                    "observation {i}: covariates must be binary (0/1)"
                )));
            }
        }
        Ok(())
    }

    /// Returns a copy with covariate columns permuted: new column `j` is old
    /// column `perm[j]`.
    pub fn permute_covariates(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n_covariates() {
            return Err(Error::InvalidInput("permutation length mismatch".into()));
        }
        let observations = self
            .observations
            .iter()
            .map(|o| Observation {
                x: perm.iter().map(|&p| o.x[p]).collect(),
                z: o.z.clone(),
                y: o.y,
            })
            .collect();
        let names = perm.iter().map(|&p| self.covariate_names[p].clone()).collect();
        Self::new(observations, names, self.instrument_names.clone())
    }
}
