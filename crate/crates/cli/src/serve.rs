//! Live session over a WebSocket: the simulator publishes frames, a
//! monitor client sends commands that are applied between steps.

use std::collections::VecDeque;
use std::io::ErrorKind;
use std::net::{TcpListener, TcpStream};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tungstenite::{Message, WebSocket};

use land_core::dataset::{Dataset, StepRecord};
use land_core::experiment::{Policy, END_ZONE_M, START_ARC_M};
use land_core::planner::{CandidatePlan, PlanDiagnostics};
use land_core::sim::{self, Action, DisengagementCause, Oracle, RobotState};
use land_core::world::World;

use crate::manifest::blob_hash;
use crate::{CliError, Result};

/// Candidates forwarded per frame; the rest are dropped by striding.
pub const MAX_FRAME_CANDIDATES: usize = 64;

/// Client to server messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    Disengage,
    Engage,
    Reposition { x: f64, y: f64, heading: f64 },
    SetGoal { g: f64 },
    Pause,
    Resume,
    /// Asks for the `world.v1` document.
    GetWorld,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotPose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePlan {
    pub candidates: Vec<CandidatePlan>,
    pub chosen: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub distance_since_disengagement: f64,
}

/// Server to client messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Frame {
        step: u64,
        robot: RobotPose,
        engaged: bool,
        paused: bool,
        world_digest: String,
        observation: String,
        plan: Option<FramePlan>,
        metrics: Metrics,
        /// Set on the frame of the step that ended in a disengagement.
        disengaged_by: Option<DisengagementCause>,
    },
    World {
        digest: String,
        world: serde_json::Value,
    },
    Error {
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionOptions {
    /// `None` leaves every disengagement to the human monitor.
    pub oracle: Option<Oracle>,
}

/// Simulation state of one served robot. Commands queue up and are only
/// applied inside [`ServeSession::tick`], before the step runs.
#[derive(Debug)]
pub struct ServeSession {
    world: World,
    world_json: String,
    digest: String,
    policy: Policy,
    options: SessionOptions,
    state: RobotState,
    engaged: bool,
    paused: bool,
    step: u64,
    episode: u64,
    step_index: u64,
    segment_start: f64,
    pending: VecDeque<Command>,
    dataset: Dataset,
    last_plan: Option<PlanDiagnostics>,
}

impl ServeSession {
    pub fn new(world: World, policy: Policy, options: SessionOptions) -> Self {
        let world_json = world.to_json();
        let digest = blob_hash(world_json.as_bytes());
        let state = RobotState::on_centerline(&world, START_ARC_M);
        ServeSession {
            world,
            world_json,
            digest,
            policy,
            options,
            segment_start: state.progress_m,
            state,
            engaged: true,
            paused: false,
            step: 0,
            episode: 0,
            step_index: 0,
            pending: VecDeque::new(),
            dataset: Dataset::new(),
            last_plan: None,
        }
    }

    pub fn world_digest(&self) -> &str {
        &self.digest
    }

    pub fn state(&self) -> RobotState {
        self.state
    }

    pub fn engaged(&self) -> bool {
        self.engaged
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn into_dataset(self) -> Dataset {
        self.dataset
    }

    /// Parses a client message. Queries are answered at once; control
    /// commands are queued for the next step boundary.
    pub fn receive(&mut self, text: &str) -> Option<ServerMessage> {
        match serde_json::from_str::<Command>(text) {
            Ok(Command::GetWorld) => Some(self.world_message()),
            Ok(cmd) => {
                self.pending.push_back(cmd);
                None
            }
            Err(e) => Some(error(format!("malformed command: {e}"))),
        }
    }

    pub fn world_message(&self) -> ServerMessage {
        ServerMessage::World {
            digest: self.digest.clone(),
            world: serde_json::from_str(&self.world_json).expect("world document is valid JSON"),
        }
    }

    fn apply(&mut self, cmd: Command) -> std::result::Result<(), String> {
        match cmd {
            Command::Disengage => {
                if !self.engaged {
                    return Err("already disengaged".into());
                }
                self.disengage(DisengagementCause::Human).map_err(|e| e.to_string())
            }
            Command::Engage => {
                if self.engaged {
                    return Err("already engaged".into());
                }
                if let Some(cause) = sim::check_disengagement(&self.world, &self.state) {
                    return Err(format!("cannot engage inside a failure region ({cause})"));
                }
                self.engaged = true;
                self.segment_start = self.state.progress_m;
                self.policy.reset();
                Ok(())
            }
            Command::Reposition { x, y, heading } => {
                if self.engaged {
                    return Err("reposition requires a disengaged robot".into());
                }
                if !(x.is_finite() && y.is_finite() && heading.is_finite()) {
                    return Err("reposition pose must be finite".into());
                }
                self.state = RobotState::at_pose(&self.world, x, y, sim::wrap_angle(heading));
                Ok(())
            }
            Command::SetGoal { g } => {
                if !g.is_finite() {
                    return Err("goal must be finite".into());
                }
                match self.policy.planner_mut() {
                    Some(planner) => {
                        planner.goal = g.clamp(-planner.max_action, planner.max_action);
                        Ok(())
                    }
                    None => Err("the served policy has no planner".into()),
                }
            }
            Command::Pause => {
                self.paused = true;
                Ok(())
            }
            Command::Resume => {
                self.paused = false;
                Ok(())
            }
            Command::GetWorld => Ok(()),
        }
    }

    /// Records the current state as disengaged and hands control back to
    /// the monitor.
    fn disengage(&mut self, cause: DisengagementCause) -> land_core::Result<()> {
        self.dataset.record_step(StepRecord {
            episode_id: self.episode,
            step_index: self.step_index,
            observation: sim::render_observation(&self.world, &self.state),
            action: Action::new(0.0),
            disengaged: true,
            progress_m: self.state.progress_m,
            policy_tag: self.policy.tag().into(),
            cause: Some(cause),
        })?;
        self.step_index += 1;
        self.engaged = false;
        self.last_plan = None;
        Ok(())
    }

    /// Applies queued commands, advances one control step when engaged and
    /// not paused, and returns the messages to publish.
    pub fn tick(&mut self) -> Result<Vec<ServerMessage>> {
        let mut out = Vec::new();
        let mut disengaged_by = None;
        while let Some(cmd) = self.pending.pop_front() {
            let human = matches!(cmd, Command::Disengage);
            match self.apply(cmd) {
                Ok(()) if human => disengaged_by = Some(DisengagementCause::Human),
                Ok(()) => {}
                Err(message) => out.push(error(message)),
            }
        }
        if self.engaged && !self.paused && disengaged_by.is_none() {
            disengaged_by = self.advance()?;
        }
        out.push(self.frame(disengaged_by));
        Ok(out)
    }

    fn advance(&mut self) -> Result<Option<DisengagementCause>> {
        if self.state.progress_m >= self.world.length() - END_ZONE_M {
            // Route finished: start a new lap.
            self.state = RobotState::on_centerline(&self.world, START_ARC_M);
            self.episode += 1;
            self.step_index = 0;
            self.segment_start = self.state.progress_m;
            self.policy.reset();
        }
        if let Some(cause) = self.options.oracle.and_then(|o| o.check(&self.world, &self.state)) {
            self.disengage(cause)?;
            self.state = sim::reset_to_centerline(&self.world, &self.state)?;
            self.engaged = true;
            self.segment_start = self.state.progress_m;
            self.policy.reset();
            self.step += 1;
            return Ok(Some(cause));
        }
        let observation = sim::render_observation(&self.world, &self.state);
        let decision = self.policy.act(&self.world, &self.state, &observation)?;
        self.dataset.record_step(StepRecord {
            episode_id: self.episode,
            step_index: self.step_index,
            observation,
            action: decision.action,
            disengaged: false,
            progress_m: self.state.progress_m,
            policy_tag: self.policy.tag().into(),
            cause: None,
        })?;
        self.step_index += 1;
        self.state = sim::step(&self.world, &self.state, decision.action);
        self.last_plan = decision.plan;
        self.step += 1;
        Ok(None)
    }

    pub fn frame(&self, disengaged_by: Option<DisengagementCause>) -> ServerMessage {
        let plan = self.last_plan.as_ref().map(|d| {
            let stride = d.candidates.len().div_ceil(MAX_FRAME_CANDIDATES).max(1);
            FramePlan {
                candidates: d.candidates.iter().step_by(stride).cloned().collect(),
                chosen: d.chosen,
            }
        });
        ServerMessage::Frame {
            step: self.step,
            robot: RobotPose {
                x: self.state.x,
                y: self.state.y,
                heading: self.state.heading,
            },
            engaged: self.engaged,
            paused: self.paused,
            world_digest: self.digest.clone(),
            observation: sim::render_observation(&self.world, &self.state).to_digits(),
            plan,
            metrics: Metrics {
                distance_since_disengagement: if self.engaged {
                    (self.state.progress_m - self.segment_start).max(0.0)
                } else {
                    0.0
                },
            },
            disengaged_by,
        }
    }
}

fn error(message: String) -> ServerMessage {
    ServerMessage::Error { message }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServeOptions {
    /// Simulation steps per second.
    pub rate_hz: f64,
    /// Stop after this many ticks; `None` runs until the client leaves.
    pub max_ticks: Option<u64>,
}

fn send(ws: &mut WebSocket<TcpStream>, msg: &ServerMessage) -> Result<()> {
    let text = serde_json::to_string(msg)?;
    ws.send(Message::text(text)).map_err(CliError::from)
}

fn is_timeout(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut))
}

/// Accepts one client on `listener` and runs the session until the client
/// disconnects or `max_ticks` is reached.
pub fn serve_one(listener: &TcpListener, session: &mut ServeSession, options: ServeOptions) -> Result<()> {
    let (stream, _) = listener.accept().map_err(|e| CliError::Serve(e.to_string()))?;
    let period = Duration::from_secs_f64(1.0 / options.rate_hz.max(1e-3));
    stream
        .set_read_timeout(Some(Duration::from_millis(5)))
        .map_err(|e| CliError::Serve(e.to_string()))?;
    let mut ws = tungstenite::accept(stream).map_err(|e| CliError::Serve(e.to_string()))?;
    send(&mut ws, &session.world_message())?;
    let mut ticks = 0u64;
    let mut next = Instant::now();
    loop {
        // Drain commands until the next step is due.
        loop {
            match ws.read() {
                Ok(Message::Text(text)) => {
                    if let Some(reply) = session.receive(text.as_str()) {
                        send(&mut ws, &reply)?;
                    }
                }
                Ok(Message::Close(_)) => return Ok(()),
                Ok(_) => {}
                Err(e) if is_timeout(&e) => {}
                Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
                Err(e) => return Err(e.into()),
            }
            if Instant::now() >= next {
                break;
            }
        }
        next += period;
        for msg in session.tick()? {
            send(&mut ws, &msg)?;
        }
        ticks += 1;
        if options.max_ticks.is_some_and(|m| ticks >= m) {
            let _ = ws.close(None);
            let _ = ws.flush();
            return Ok(());
        }
    }
}
