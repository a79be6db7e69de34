use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::ModelParams;
use crate::planner::{self, OracleScorer, PlanDiagnostics, PlanState, PlannerConfig};
use crate::sim::{wrap_angle, Action, Observation, Oracle, RobotState, MAX_HEADING_CHANGE};
use crate::world::World;

use super::bc::BcParams;

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyKind {
    /// Planner over the learned disengagement predictor.
    Land {
        params: ModelParams,
        planner: PlannerConfig,
    },
    Bc(BcParams),
    /// Steers toward the centerline point `lookahead_m` ahead of the
    /// robot's progress. Uses privileged world geometry.
    ScriptedPurePursuit { lookahead_m: f64 },
    /// Uniform heading changes over the full action range.
    Random,
    /// The same heading change every step.
    Constant(f64),
    /// Planner whose probabilities come from simulating the monitor forward.
    OraclePlanner { planner: PlannerConfig, oracle: Oracle },
}

impl PolicyKind {
    pub fn tag(&self) -> &'static str {
        match self {
            PolicyKind::Land { .. } => "land",
            PolicyKind::Bc(_) => "bc",
            PolicyKind::ScriptedPurePursuit { .. } => "scripted",
            PolicyKind::Random => "random",
            PolicyKind::Constant(_) => "constant",
            PolicyKind::OraclePlanner { .. } => "oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: Action,
    pub plan: Option<PlanDiagnostics>,
}

/// A driving policy with its own random stream and planner warm start.
#[derive(Debug, Clone)]
pub struct Policy {
    pub kind: PolicyKind,
    plan_state: Option<PlanState>,
    rng: ChaCha8Rng,
}

impl Policy {
    pub fn new(kind: PolicyKind, seed: u64) -> Self {
        let mut policy = Policy {
            kind,
            plan_state: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        policy.reset();
        policy
    }

    pub fn tag(&self) -> &'static str {
        self.kind.tag()
    }

    /// Forgets the planner warm start (after a reset or reposition).
    pub fn reset(&mut self) {
        self.plan_state = match &self.kind {
            PolicyKind::Land { planner, .. } | PolicyKind::OraclePlanner { planner, .. } => {
                Some(PlanState::new(planner.horizon))
            }
            _ => None,
        };
    }

    pub fn planner_mut(&mut self) -> Option<&mut PlannerConfig> {
        match &mut self.kind {
            PolicyKind::Land { planner, .. } | PolicyKind::OraclePlanner { planner, .. } => Some(planner),
            _ => None,
        }
    }

    pub fn act(&mut self, world: &World, state: &RobotState, obs: &Observation) -> Result<Decision> {
        let simple = |a: f64| {
            Ok(Decision {
                action: Action::new(a),
                plan: None,
            })
        };
        match &self.kind {
            PolicyKind::Land { params, planner } => {
                let plan_state = self.plan_state.get_or_insert_with(|| PlanState::new(planner.horizon));
                let out = planner::plan(params, obs.cells(), plan_state, planner, &mut self.rng)?;
                *plan_state = out.state;
                Ok(Decision {
                    action: out.action,
                    plan: Some(out.diagnostics),
                })
            }
            PolicyKind::OraclePlanner { planner, oracle } => {
                let scorer = OracleScorer {
                    world,
                    state: *state,
                    oracle: *oracle,
                    horizon: planner.horizon,
                };
                let plan_state = self.plan_state.get_or_insert_with(|| PlanState::new(planner.horizon));
                let out = planner::plan_with(&scorer, plan_state, planner, &mut self.rng)?;
                *plan_state = out.state;
                Ok(Decision {
                    action: out.action,
                    plan: Some(out.diagnostics),
                })
            }
            PolicyKind::Bc(params) => Ok(Decision {
                action: params.act(obs.cells())?,
                plan: None,
            }),
            PolicyKind::ScriptedPurePursuit { lookahead_m } => {
                let target = world.centerline.pose_at(state.progress_m + lookahead_m);
                let desired = (target.y - state.y).atan2(target.x - state.x);
                simple(wrap_angle(desired - state.heading))
            }
            PolicyKind::Random => simple(self.rng.gen_range(-MAX_HEADING_CHANGE..=MAX_HEADING_CHANGE)),
            PolicyKind::Constant(a) => simple(*a),
        }
    }
}
