use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::DisengagementCause;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub distance_m: f64,
    pub fraction: f64,
}

/// Engaged-distance statistics over one or more rollouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    /// Arc-length progress of every contiguous engaged segment.
    pub trajectory_distances_m: Vec<f64>,
    pub total_distance_m: f64,
    pub disengagements: usize,
    pub avg_distance_m: f64,
    pub cdf: Vec<CdfPoint>,
    pub steps: usize,
    pub causes: BTreeMap<DisengagementCause, usize>,
}

/// Raw tallies from a single rollout.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutTally {
    pub trajectories: Vec<f64>,
    pub causes: Vec<DisengagementCause>,
    pub steps: usize,
}

impl EvalReport {
    pub fn from_tallies<'a>(tallies: impl IntoIterator<Item = &'a RolloutTally>) -> EvalReport {
        let mut trajectories = Vec::new();
        let mut causes = BTreeMap::new();
        let mut steps = 0;
        for t in tallies {
            trajectories.extend_from_slice(&t.trajectories);
            for &c in &t.causes {
                *causes.entry(c).or_insert(0) += 1;
            }
            steps += t.steps;
        }
        let disengagements = causes.values().sum();
        let total: f64 = trajectories.iter().sum();
        let mut sorted = trajectories.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let cdf = sorted
            .iter()
            .enumerate()
            .map(|(i, &d)| CdfPoint {
                distance_m: d,
                fraction: (i + 1) as f64 / n as f64,
            })
            .collect();
        EvalReport {
            trajectory_distances_m: trajectories,
            total_distance_m: total,
            disengagements,
            avg_distance_m: total / disengagements.max(1) as f64,
            cdf,
            steps,
            causes,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
