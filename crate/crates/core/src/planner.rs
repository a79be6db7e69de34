//! Receding-horizon planner over scalar heading-change sequences.
//!
//! Each round draws temporally filtered Gaussian perturbations around the
//! current mean, scores every candidate with a [`SequenceScorer`], and moves
//! the mean to an exponentially cost-weighted average of the candidates.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EncodedObservation, ModelParams};
use crate::sim::{self, Action, Oracle, RobotState, MAX_HEADING_CHANGE};
use crate::world::{TerrainClass, World};

/// Brute-force enumeration limit.
pub const BRUTE_FORCE_GUARD: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    pub samples: usize,
    pub sigma: f64,
    pub beta: f64,
    pub gamma: f64,
    pub horizon: usize,
    pub goal_weight: f64,
    /// Desired heading change (rad) for the goal term.
    pub goal: f64,
    pub max_action: f64,
    pub iterations: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            samples: 1024,
            sigma: 1.0,
            beta: 0.5,
            gamma: 50.0,
            horizon: 8,
            goal_weight: 0.0,
            goal: 0.0,
            max_action: MAX_HEADING_CHANGE,
            iterations: 1,
        }
    }
}

impl PlannerConfig {
    /// Full-size sample count for machines with cores to spare.
    pub fn large() -> Self {
        PlannerConfig {
            samples: 8192,
            ..PlannerConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.samples == 0 {
            return bad("planner needs at least one sample".into());
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma {} must be finite and non-negative", self.sigma));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad(format!("beta {} outside (0, 1]", self.beta));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma {} must be positive", self.gamma));
        }
        if self.horizon == 0 {
            return bad("planner horizon must be positive".into());
        }
        if self.iterations == 0 {
            return bad("planner needs at least one iteration".into());
        }
        if !(self.max_action > 0.0 && self.max_action.is_finite()) {
            return bad(format!("action bound {} must be positive", self.max_action));
        }
        if !(self.goal_weight >= 0.0 && self.goal_weight.is_finite() && self.goal.is_finite()) {
            return bad("goal weight must be non-negative and goal finite".into());
        }
        Ok(())
    }

    fn clamp(&self, a: f64) -> f64 {
        a.clamp(-self.max_action, self.max_action)
    }
}

/// Warm-start state carried between control steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanState {
    pub mean: Vec<f64>,
    /// Perturbation of the lowest-cost candidate in the last round, shifted
    /// like the mean. Informational only: sampling restarts its filter at zero.
    pub prev_noise: Vec<f64>,
}

impl PlanState {
    pub fn new(horizon: usize) -> Self {
        PlanState {
            mean: vec![0.0; horizon],
            prev_noise: vec![0.0; horizon],
        }
    }
}

/// Expected disengagements plus the optional goal penalty.
pub fn cost(probs: &[f64], actions: &[f64], goal_weight: f64, goal: f64) -> f64 {
    debug_assert_eq!(probs.len(), actions.len());
    let risk: f64 = probs.iter().sum();
    if goal_weight == 0.0 {
        return risk;
    }
    risk + goal_weight * actions.iter().map(|a| (a - goal) * (a - goal)).sum::<f64>()
}

fn sample_with_noise<R: Rng + ?Sized>(
    state: &PlanState,
    config: &PlannerConfig,
    rng: &mut R,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let h = config.horizon;
    let mut candidates = Vec::with_capacity(config.samples);
    let mut noises = Vec::with_capacity(config.samples);
    for _ in 0..config.samples {
        let mut u_prev = 0.0;
        let mut cand = Vec::with_capacity(h);
        let mut noise = Vec::with_capacity(h);
        for &m in state.mean.iter().take(h) {
            let eps: f64 = rng.sample(StandardNormal);
            let u = config.beta * config.sigma * eps + (1.0 - config.beta) * u_prev;
            u_prev = u;
            noise.push(u);
            cand.push(config.clamp(m + u));
        }
        candidates.push(cand);
        noises.push(noise);
    }
    (candidates, noises)
}

/// Draws `config.samples` clamped candidates around `state.mean`.
pub fn sample_sequences<R: Rng + ?Sized>(
    state: &PlanState,
    config: &PlannerConfig,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    sample_with_noise(state, config, rng).0
}

/// Cost-weighted average of the candidates, accumulated in index order.
pub fn update_mean(candidates: &[Vec<f64>], costs: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if candidates.is_empty() || candidates.len() != costs.len() {
        return Err(Error::Shape(format!(
            "{} candidates with {} costs",
            candidates.len(),
            costs.len()
        )));
    }
    if let Some(c) = costs.iter().find(|c| !c.is_finite()) {
        return Err(Error::Shape(format!("non-finite candidate cost {c}")));
    }
    let h = candidates[0].len();
    if candidates.iter().any(|c| c.len() != h) {
        return Err(Error::Shape("candidates differ in length".into()));
    }
    let best = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = costs.iter().map(|c| (-gamma * (c - best)).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut mean = vec![0.0; h];
    let mut lo = vec![f64::INFINITY; h];
    let mut hi = vec![f64::NEG_INFINITY; h];
    for (cand, w) in candidates.iter().zip(&weights) {
        for (k, &a) in cand.iter().enumerate() {
            mean[k] += w * a;
            lo[k] = lo[k].min(a);
            hi[k] = hi[k].max(a);
        }
    }
    // Rounding in the weighted sum can step just outside the hull.
    for k in 0..h {
        mean[k] = (mean[k] / total).clamp(lo[k], hi[k]);
    }
    Ok(mean)
}

/// Anything that maps candidate action sequences to per-step disengagement
/// probabilities from a fixed current situation.
pub trait SequenceScorer: Sync {
    fn horizon(&self) -> usize;
    fn score(&self, candidates: &[Vec<f64>]) -> Result<Vec<Vec<f64>>>;
}

/// The learned predictor with the observation encoded once.
pub struct ModelScorer<'a> {
    params: &'a ModelParams,
    encoded: EncodedObservation,
}

impl<'a> ModelScorer<'a> {
    pub fn new(params: &'a ModelParams, grid: &[TerrainClass]) -> Result<Self> {
        Ok(ModelScorer {
            params,
            encoded: params.encode(grid)?,
        })
    }
}

impl SequenceScorer for ModelScorer<'_> {
    fn horizon(&self) -> usize {
        self.params.horizon()
    }

    fn score(&self, candidates: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if let Some(c) = candidates.iter().find(|c| c.len() != self.horizon()) {
            return Err(Error::Shape(format!(
                "candidate of length {} for model horizon {}",
                c.len(),
                self.horizon()
            )));
        }
        Ok(self.params.predict_many(&self.encoded, candidates))
    }
}

/// Idealized predictor: simulates each candidate and reports 1 from the
/// first step the monitor would flag onwards.
pub struct OracleScorer<'a> {
    pub world: &'a World,
    pub state: RobotState,
    pub oracle: Oracle,
    pub horizon: usize,
}

impl SequenceScorer for OracleScorer<'_> {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn score(&self, candidates: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        Ok(candidates
            .par_iter()
            .map(|cand| {
                let mut state = self.state;
                let mut failed = false;
                cand.iter()
                    .map(|&a| {
                        if !failed {
                            state = sim::step(self.world, &state, Action::new(a));
                            failed = self.oracle.check(self.world, &state).is_some();
                        }
                        if failed {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePlan {
    pub actions: Vec<f64>,
    pub probs: Vec<f64>,
    pub cost: f64,
}

/// Final-round candidates and the optimized mean, for visualization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDiagnostics {
    pub candidates: Vec<CandidatePlan>,
    pub chosen: f64,
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub action: Action,
    pub state: PlanState,
    pub diagnostics: PlanDiagnostics,
}

/// One control step with the learned model.
pub fn plan<R: Rng + ?Sized>(
    params: &ModelParams,
    grid: &[TerrainClass],
    state: &PlanState,
    config: &PlannerConfig,
    rng: &mut R,
) -> Result<PlanOutcome> {
    if params.horizon() != config.horizon {
        return Err(Error::Shape(format!(
            "model horizon {} differs from planner horizon {}",
            params.horizon(),
            config.horizon
        )));
    }
    plan_with(&ModelScorer::new(params, grid)?, state, config, rng)
}

/// One control step with an arbitrary scorer.
pub fn plan_with<S: SequenceScorer + ?Sized, R: Rng + ?Sized>(
    scorer: &S,
    state: &PlanState,
    config: &PlannerConfig,
    rng: &mut R,
) -> Result<PlanOutcome> {
    config.validate()?;
    let h = config.horizon;
    if scorer.horizon() != h || state.mean.len() != h {
        return Err(Error::Shape(format!(
            "scorer horizon {} and plan mean length {} must equal {h}",
            scorer.horizon(),
            state.mean.len()
        )));
    }
    let mut working = PlanState {
        mean: state.mean.iter().map(|&a| config.clamp(a)).collect(),
        prev_noise: state.prev_noise.clone(),
    };
    let mut last = Vec::new();
    let mut best_noise = vec![0.0; h];
    for _ in 0..config.iterations {
        let (candidates, noises) = sample_with_noise(&working, config, rng);
        let probs = scorer.score(&candidates)?;
        let costs: Vec<f64> = candidates
            .iter()
            .zip(&probs)
            .map(|(c, p)| cost(p, c, config.goal_weight, config.goal))
            .collect();
        working.mean = update_mean(&candidates, &costs, config.gamma)?;
        let argmin = (0..costs.len()).fold(0, |b, k| if costs[k] < costs[b] { k } else { b });
        best_noise.clone_from(&noises[argmin]);
        last = candidates
            .into_iter()
            .zip(probs)
            .zip(costs)
            .map(|((actions, probs), cost)| CandidatePlan { actions, probs, cost })
            .collect();
    }
    let chosen = working.mean[0];
    let shift = |v: &[f64]| -> Vec<f64> {
        let mut out = v[1..].to_vec();
        out.push(v[h - 1]);
        out
    };
    Ok(PlanOutcome {
        action: Action::new(chosen),
        state: PlanState {
            mean: shift(&working.mean),
            prev_noise: shift(&best_noise),
        },
        diagnostics: PlanDiagnostics {
            candidates: last,
            chosen,
            mean: working.mean,
        },
    })
}

/// Exhaustive minimum of the planning cost over `grid^horizon`. Ties go to
/// the lexicographically smallest grid-index tuple.
pub fn brute_force_plan<S: SequenceScorer + ?Sized>(
    scorer: &S,
    grid: &[f64],
    goal_weight: f64,
    goal: f64,
) -> Result<(Vec<f64>, f64)> {
    let h = scorer.horizon();
    if grid.is_empty() {
        return Err(Error::Config("empty action grid".into()));
    }
    let total = (grid.len() as u128).checked_pow(h as u32).unwrap_or(u128::MAX);
    if total > BRUTE_FORCE_GUARD {
        return Err(Error::GuardExceeded(total));
    }
    let mut sequences: Vec<Vec<f64>> = (0..total as usize)
        .map(|mut code| {
            let mut seq = vec![0.0; h];
            for slot in seq.iter_mut().rev() {
                *slot = grid[code % grid.len()];
                code /= grid.len();
            }
            seq
        })
        .collect();
    let probs = scorer.score(&sequences)?;
    let mut best = 0;
    let mut best_cost = f64::INFINITY;
    for (k, (seq, p)) in sequences.iter().zip(&probs).enumerate() {
        let c = cost(p, seq, goal_weight, goal);
        if c < best_cost {
            best = k;
            best_cost = c;
        }
    }
    Ok((sequences.swap_remove(best), best_cost))
}
