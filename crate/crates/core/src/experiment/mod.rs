//! The alternating collect/train loop, the baselines it is compared with,
//! and the evaluation harness.

mod bc;
mod policy;
mod report;

pub use bc::{bc_training_indices, train_bc, BcConfig, BcOutcome, BcParams, BC_FORMAT};
pub use policy::{Decision, Policy, PolicyKind};
pub use report::{CdfPoint, EvalReport, RolloutTally};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, StepRecord};
use crate::error::{Error, Result};
use crate::model::{train, ModelConfig, ModelParams, TrainConfig};
use crate::planner::PlannerConfig;
use crate::sim::{self, Action, Oracle, RobotState};
use crate::world::{generate_world, StreetSide, World, WorldSpec};

/// Arc position where rollouts begin.
pub const START_ARC_M: f64 = 2.0;
/// Rollouts stop (or restart) this far before the end of the centerline,
/// so the observation window never reaches past the map.
pub const END_ZONE_M: f64 = 7.0;

/// Mixes a base seed with stream identifiers (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    stream.iter().fold(mix(base), |acc, &s| mix(acc ^ mix(s)))
}

/// What a rollout does when the robot reaches the end zone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtWorldEnd {
    /// Close the trajectory and stop early.
    Stop,
    /// Close the trajectory and start over at [`START_ARC_M`] in a new episode.
    Restart,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutLog {
    pub tally: RolloutTally,
    pub dataset: Dataset,
    pub final_state: RobotState,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutOptions {
    pub steps: usize,
    pub oracle: Oracle,
    pub at_end: AtWorldEnd,
    pub record: bool,
}

/// Drives `policy` for up to `options.steps` control steps under the
/// monitor. A flagged state is recorded with `disengaged = true` and no
/// action, then the robot is reset onto the centerline and re-engaged.
pub fn rollout(world: &World, start: RobotState, policy: &mut Policy, options: RolloutOptions) -> Result<RolloutLog> {
    let mut state = start;
    let mut episode = 0u64;
    let mut step_index = 0u64;
    let mut segment_start = state.progress_m;
    let mut segment_steps = 0usize;
    let mut tally = RolloutTally::default();
    let mut dataset = Dataset::new();
    let end = world.length() - END_ZONE_M;
    let tag = policy.tag();
    let mut open_segment = true;
    for _ in 0..options.steps {
        if state.progress_m >= end {
            tally.trajectories.push((state.progress_m - segment_start).max(0.0));
            if options.at_end == AtWorldEnd::Stop {
                open_segment = false;
                break;
            }
            state = RobotState::on_centerline(world, START_ARC_M);
            episode += 1;
            step_index = 0;
            segment_start = state.progress_m;
            segment_steps = 0;
            policy.reset();
        }
        tally.steps += 1;
        let observation = sim::render_observation(world, &state);
        if let Some(cause) = options.oracle.check(world, &state) {
            if options.record {
                dataset.record_step(StepRecord {
                    episode_id: episode,
                    step_index,
                    observation,
                    action: Action::new(0.0),
                    disengaged: true,
                    progress_m: state.progress_m,
                    policy_tag: tag.into(),
                    cause: Some(cause),
                })?;
            }
            step_index += 1;
            tally.trajectories.push((state.progress_m - segment_start).max(0.0));
            tally.causes.push(cause);
            state = sim::reset_to_centerline(world, &state)?;
            policy.reset();
            segment_start = state.progress_m;
            segment_steps = 0;
            continue;
        }
        let decision = policy.act(world, &state, &observation)?;
        if options.record {
            dataset.record_step(StepRecord {
                episode_id: episode,
                step_index,
                observation,
                action: decision.action,
                disengaged: false,
                progress_m: state.progress_m,
                policy_tag: tag.into(),
                cause: None,
            })?;
        }
        step_index += 1;
        state = sim::step(world, &state, decision.action);
        segment_steps += 1;
    }
    if open_segment && segment_steps > 0 {
        tally.trajectories.push((state.progress_m - segment_start).max(0.0));
    }
    Ok(RolloutLog {
        tally,
        dataset,
        final_state: state,
    })
}

pub fn generate_worlds(specs: &[WorldSpec]) -> Result<Vec<World>> {
    specs.par_iter().map(generate_world).collect()
}

/// Rolls a fresh copy of the policy on every world from [`START_ARC_M`],
/// stopping at the end zone. Worlds run in parallel; results are merged in
/// world order.
pub fn evaluate_recording(
    kind: &PolicyKind,
    worlds: &[World],
    steps: usize,
    seed: u64,
    record: bool,
) -> Result<(EvalReport, Dataset)> {
    let logs: Vec<RolloutLog> = worlds
        .par_iter()
        .map(|world| {
            let mut policy = Policy::new(kind.clone(), derive_seed(seed, &[world.spec.seed]));
            rollout(
                world,
                RobotState::on_centerline(world, START_ARC_M),
                &mut policy,
                RolloutOptions {
                    steps,
                    oracle: Oracle::default(),
                    at_end: AtWorldEnd::Stop,
                    record,
                },
            )
        })
        .collect::<Result<_>>()?;
    let report = EvalReport::from_tallies(logs.iter().map(|l| &l.tally));
    let mut dataset = Dataset::new();
    for log in &logs {
        dataset.merge(&log.dataset)?;
    }
    Ok((report, dataset))
}

pub fn evaluate(kind: &PolicyKind, worlds: &[World], steps: usize, seed: u64) -> Result<EvalReport> {
    Ok(evaluate_recording(kind, worlds, steps, seed, false)?.0)
}

/// Collect/train schedule. Training worlds keep their robot state across
/// phases; each phase trains on everything collected so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopConfig {
    pub phases: usize,
    pub steps_per_phase: usize,
    pub train_worlds: Vec<WorldSpec>,
    pub eval_worlds: Vec<WorldSpec>,
    pub eval_steps: usize,
    pub model: ModelConfig,
    pub planner: PlannerConfig,
    /// `steps` is the number of updates in the first phase, and in every
    /// phase unless `scale_updates_with_data` is set.
    pub train: TrainConfig,
    /// Grow each phase's update count in proportion to the cumulative
    /// dataset, so every phase makes as many passes over its data as the
    /// first. A fixed count leaves later phases underfit.
    #[serde(default)]
    pub scale_updates_with_data: bool,
    pub seed: u64,
}

impl LoopConfig {
    /// Fixed benchmark: 10 training worlds, 4 phases of 2500 steps, five
    /// held-out evaluation worlds of 500 steps.
    pub fn benchmark() -> Self {
        LoopConfig {
            phases: 4,
            steps_per_phase: 2500,
            train_worlds: (1..=10).map(WorldSpec::with_seed).collect(),
            eval_worlds: (101..=105).map(WorldSpec::with_seed).collect(),
            eval_steps: 500,
            model: ModelConfig::default(),
            planner: PlannerConfig::default(),
            train: TrainConfig::default(),
            scale_updates_with_data: true,
            seed: 7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.phases == 0 || self.steps_per_phase == 0 || self.train_worlds.is_empty() {
            return Err(Error::Config("loop needs phases, steps and training worlds".into()));
        }
        if self.eval_steps == 0 && !self.eval_worlds.is_empty() {
            return Err(Error::Config("evaluation worlds given with zero evaluation steps".into()));
        }
        for e in &self.eval_worlds {
            if self.train_worlds.iter().any(|t| t.seed == e.seed) {
                return Err(Error::Config(format!("world seed {} used for training and evaluation", e.seed)));
            }
        }
        if self.model.horizon != self.planner.horizon {
            return Err(Error::Config(format!(
                "model horizon {} differs from planner horizon {}",
                self.model.horizon, self.planner.horizon
            )));
        }
        self.model.validate()?;
        self.planner.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub phase: usize,
    pub collected_steps: usize,
    pub collected_disengagements: usize,
    pub dataset_records: usize,
    pub train_steps: usize,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopOutcome {
    pub params: ModelParams,
    pub dataset: Dataset,
    /// Untrained policy first, then one report after each phase's training.
    pub reports: Vec<EvalReport>,
    pub phases: Vec<PhaseSummary>,
    pub loss_history: Vec<Vec<f64>>,
}

/// Step budget of world `w` out of `n` for a phase of `total` steps.
fn share(total: usize, n: usize, w: usize) -> usize {
    total / n + usize::from(w < total % n)
}

pub fn run_land(config: &LoopConfig) -> Result<LoopOutcome> {
    run_land_from(config, &Dataset::new())
}

/// As [`run_land`], starting from an existing (possibly off-policy) dataset.
pub fn run_land_from(config: &LoopConfig, initial: &Dataset) -> Result<LoopOutcome> {
    config.validate()?;
    let train_worlds = generate_worlds(&config.train_worlds)?;
    let eval_worlds = generate_worlds(&config.eval_worlds)?;
    let mut params = ModelParams::init(config.model.clone(), derive_seed(config.seed, &[0]))?;
    let mut dataset = initial.clone();
    let mut cursors: Vec<RobotState> = train_worlds
        .iter()
        .map(|w| RobotState::on_centerline(w, START_ARC_M))
        .collect();
    let eval = |params: &ModelParams| -> Result<EvalReport> {
        let kind = PolicyKind::Land {
            params: params.clone(),
            planner: config.planner.clone(),
        };
        evaluate(&kind, &eval_worlds, config.eval_steps, derive_seed(config.seed, &[1]))
    };
    let mut reports = Vec::with_capacity(config.phases + 1);
    if !eval_worlds.is_empty() {
        reports.push(eval(&params)?);
    }
    let mut phases = Vec::with_capacity(config.phases);
    let mut first_len: Option<usize> = None;
    let mut loss_history = Vec::with_capacity(config.phases);
    for phase in 0..config.phases {
        let kind = PolicyKind::Land {
            params: params.clone(),
            planner: config.planner.clone(),
        };
        let logs: Vec<RolloutLog> = train_worlds
            .par_iter()
            .zip(cursors.par_iter())
            .enumerate()
            .map(|(w, (world, &start))| {
                let mut policy = Policy::new(kind.clone(), derive_seed(config.seed, &[2, phase as u64, w as u64]));
                rollout(
                    world,
                    start,
                    &mut policy,
                    RolloutOptions {
                        steps: share(config.steps_per_phase, train_worlds.len(), w),
                        oracle: Oracle::default(),
                        at_end: AtWorldEnd::Restart,
                        record: true,
                    },
                )
            })
            .collect::<Result<_>>()?;
        let mut collected_steps = 0;
        let mut collected_disengagements = 0;
        for (cursor, log) in cursors.iter_mut().zip(&logs) {
            *cursor = log.final_state;
            collected_steps += log.tally.steps;
            collected_disengagements += log.tally.causes.len();
            dataset.merge(&log.dataset)?;
        }
        let first_len = *first_len.get_or_insert(dataset.len());
        let steps = if config.scale_updates_with_data {
            // Integer arithmetic keeps the count platform independent.
            (config.train.steps as u128 * dataset.len() as u128 / first_len.max(1) as u128) as usize
        } else {
            config.train.steps
        };
        let train_config = TrainConfig {
            steps,
            seed: derive_seed(config.seed, &[3, phase as u64]),
            ..config.train.clone()
        };
        let outcome = train(&params, &dataset, &train_config)?;
        params = outcome.params;
        phases.push(PhaseSummary {
            phase,
            collected_steps,
            collected_disengagements,
            dataset_records: dataset.len(),
            train_steps: steps,
            final_loss: outcome.loss_history.last().copied().unwrap_or(f64::NAN),
        });
        loss_history.push(outcome.loss_history);
        if !eval_worlds.is_empty() {
            reports.push(eval(&params)?);
        }
    }
    Ok(LoopOutcome {
        params,
        dataset,
        reports,
        phases,
        loss_history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    pub worlds: Vec<WorldSpec>,
    pub steps: usize,
    pub planner: PlannerConfig,
    pub train: TrainConfig,
    pub seed: u64,
}

impl FinetuneConfig {
    /// Three held-out worlds with the street on the side the benchmark
    /// training worlds never use.
    pub fn benchmark() -> Self {
        FinetuneConfig {
            worlds: (201..=203)
                .map(|s| WorldSpec {
                    street_side: StreetSide::Left,
                    ..WorldSpec::with_seed(s)
                })
                .collect(),
            steps: 500,
            planner: PlannerConfig::default(),
            train: TrainConfig::default(),
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneOutcome {
    pub before: EvalReport,
    pub after: EvalReport,
    pub params: ModelParams,
    pub dataset: Dataset,
}

/// Evaluates on the held-out worlds while recording, finetunes on `base`
/// plus the new records, and re-evaluates on the same worlds.
pub fn finetune_experiment(params: &ModelParams, base: &Dataset, config: &FinetuneConfig) -> Result<FinetuneOutcome> {
    config.planner.validate()?;
    let worlds = generate_worlds(&config.worlds)?;
    let kind = PolicyKind::Land {
        params: params.clone(),
        planner: config.planner.clone(),
    };
    let eval_seed = derive_seed(config.seed, &[1]);
    let (before, collected) = evaluate_recording(&kind, &worlds, config.steps, eval_seed, true)?;
    let mut dataset = base.clone();
    dataset.merge(&collected)?;
    let train_config = TrainConfig {
        seed: derive_seed(config.seed, &[3]),
        ..config.train.clone()
    };
    let tuned = train(params, &dataset, &train_config)?.params;
    let kind = PolicyKind::Land {
        params: tuned.clone(),
        planner: config.planner.clone(),
    };
    let after = evaluate(&kind, &worlds, config.steps, eval_seed)?;
    Ok(FinetuneOutcome {
        before,
        after,
        params: tuned,
        dataset,
    })
}
