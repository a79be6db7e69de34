//! Robot kinematics, egocentric observations, the disengagement oracle that
//! stands in for the human monitor, and the reset maneuver.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{classify_ground, classify_point, Point, TerrainClass, World};

/// Distance travelled per control step (also the dataset spacing).
pub const STEP_LENGTH_M: f64 = 0.5;
/// Largest heading change per step, radians.
pub const MAX_HEADING_CHANGE: f64 = 0.4;
/// Cells per side of the observation grid.
pub const GRID_SIDE: usize = 24;
pub const GRID_CELLS: usize = GRID_SIDE * GRID_SIDE;
/// Side of the square covered by the observation grid.
pub const GRID_EXTENT_M: f64 = 6.0;
pub const CELL_SIZE_M: f64 = GRID_EXTENT_M / GRID_SIDE as f64;
/// Forward advance applied by the reset maneuver.
pub const RESET_ADVANCE_M: f64 = 1.0;

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a % (2.0 * PI);
    if w <= -PI {
        w += 2.0 * PI;
    } else if w > PI {
        w -= 2.0 * PI;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub progress_m: f64,
}

impl RobotState {
    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }

    /// State on the centerline at arc `s`, heading along the tangent.
    pub fn on_centerline(world: &World, s: f64) -> RobotState {
        let pose = world.centerline.pose_at(s);
        RobotState {
            x: pose.x,
            y: pose.y,
            heading: wrap_angle(pose.heading),
            progress_m: s.clamp(0.0, world.length()),
        }
    }

    /// State at an arbitrary pose; progress is recomputed from the world.
    pub fn at_pose(world: &World, x: f64, y: f64, heading: f64) -> RobotState {
        let progress_m = world.project(Point::new(x, y)).arc_m;
        RobotState {
            x,
            y,
            heading: wrap_angle(heading),
            progress_m,
        }
    }
}

/// Desired heading change for one step, clamped to `[-a_max, a_max]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
pub struct Action(f64);

impl Action {
    pub fn new(delta_heading: f64) -> Self {
        let v = if delta_heading.is_nan() { 0.0 } else { delta_heading };
        Action(v.clamp(-MAX_HEADING_CHANGE, MAX_HEADING_CHANGE))
    }

    pub fn delta_heading(self) -> f64 {
        self.0
    }
}

/// Egocentric one-hot terrain grid.
///
/// Row 0 is the band nearest the robot and rows extend forward; column 0 is
/// the leftmost band. Cell centers sit at forward `(row + 0.5) * CELL_SIZE_M`
/// and lateral `(GRID_SIDE / 2 - col - 0.5) * CELL_SIZE_M` (positive = left).
/// Rendered observations are `GRID_SIDE` wide; other sizes only occur in
/// small model tests.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Observation {
    side: usize,
    cells: Vec<TerrainClass>,
}

impl Observation {
    pub fn from_cells(side: usize, cells: Vec<TerrainClass>) -> Result<Self> {
        if side == 0 || cells.len() != side * side {
            return Err(Error::Shape(format!(
                "observation of side {side} needs {} cells, got {}",
                side * side,
                cells.len()
            )));
        }
        Ok(Observation { side, cells })
    }

    pub fn filled(class: TerrainClass) -> Self {
        Observation {
            side: GRID_SIDE,
            cells: vec![class; GRID_CELLS],
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn cells(&self) -> &[TerrainClass] {
        &self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> TerrainClass {
        self.cells[row * self.side + col]
    }

    pub fn set(&mut self, row: usize, col: usize, class: TerrainClass) {
        self.cells[row * self.side + col] = class;
    }

    /// Row-major class digits, one character per cell.
    pub fn to_digits(&self) -> String {
        self.cells
            .iter()
            .map(|c| char::from(b'0' + c.index() as u8))
            .collect()
    }

    /// Parses a digit string; the side is the square root of its length.
    pub fn from_digits(digits: &str) -> Result<Self> {
        let cells = digits
            .bytes()
            .map(|b| {
                b.checked_sub(b'0')
                    .and_then(|d| TerrainClass::from_index(d as usize))
                    .ok_or_else(|| Error::Shape(format!("invalid class digit {:?}", b as char)))
            })
            .collect::<Result<Vec<_>>>()?;
        let side = (cells.len() as f64).sqrt().round() as usize;
        Self::from_cells(side, cells)
    }

    /// Dense `[cell][channel]` one-hot tensor.
    pub fn one_hot(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cells.len() * TerrainClass::COUNT];
        for (k, c) in self.cells.iter().enumerate() {
            out[k * TerrainClass::COUNT + c.index()] = 1.0;
        }
        out
    }
}

impl fmt::Debug for Observation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Observation").field(&self.to_digits()).finish()
    }
}

/// Cell-center offset `(forward, lateral)` in the robot frame.
pub fn cell_offset(row: usize, col: usize) -> (f64, f64) {
    let forward = (row as f64 + 0.5) * CELL_SIZE_M;
    let lateral = ((GRID_SIDE / 2) as f64 - col as f64 - 0.5) * CELL_SIZE_M;
    (forward, lateral)
}

/// World coordinates of an egocentric offset.
pub fn to_world(state: &RobotState, forward: f64, lateral: f64) -> Point {
    let (s, c) = state.heading.sin_cos();
    Point::new(
        state.x + forward * c - lateral * s,
        state.y + forward * s + lateral * c,
    )
}

pub fn step(world: &World, state: &RobotState, action: Action) -> RobotState {
    let heading = wrap_angle(state.heading + action.delta_heading());
    let (s, c) = heading.sin_cos();
    let x = state.x + STEP_LENGTH_M * c;
    let y = state.y + STEP_LENGTH_M * s;
    RobotState {
        x,
        y,
        heading,
        progress_m: world.project(Point::new(x, y)).arc_m,
    }
}

pub fn render_observation(world: &World, state: &RobotState) -> Observation {
    let mut cells = Vec::with_capacity(GRID_CELLS);
    for row in 0..GRID_SIDE {
        for col in 0..GRID_SIDE {
            let (forward, lateral) = cell_offset(row, col);
            cells.push(classify_point(world, to_world(state, forward, lateral)));
        }
    }
    Observation {
        side: GRID_SIDE,
        cells,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisengagementCause {
    Collision,
    Street,
    Driveway,
    /// Robot center left the mapped area (lawn side or past the ends).
    Offmap,
    /// Disengaged by a human monitor.
    Human,
}

impl fmt::Display for DisengagementCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DisengagementCause::Collision => "collision",
            DisengagementCause::Street => "street",
            DisengagementCause::Driveway => "driveway",
            DisengagementCause::Offmap => "offmap",
            DisengagementCause::Human => "human",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisengagementEvent {
    pub cause: DisengagementCause,
    pub state_at_event: RobotState,
    pub step_index: u64,
}

/// Simulated monitor. With `margin_m > 0` it disengages pre-emptively when
/// the robot comes within the margin of a failure region.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Oracle {
    pub margin_m: f64,
}

impl Oracle {
    pub fn check(&self, world: &World, state: &RobotState) -> Option<DisengagementCause> {
        let p = state.position();
        let reach = world.spec.robot_radius_m + self.margin_m;
        if world
            .obstacles
            .iter()
            .any(|o| p.distance(o.center) < o.radius + reach)
        {
            return Some(DisengagementCause::Collision);
        }
        let proj = world.project(p);
        let class = if self.margin_m > 0.0 && !proj.beyond_end {
            let mut pushed = proj;
            pushed.lateral += self.margin_m * proj.lateral.signum();
            classify_ground(world, &pushed)
        } else {
            classify_ground(world, &proj)
        };
        match class {
            TerrainClass::Street => Some(DisengagementCause::Street),
            TerrainClass::Driveway => Some(DisengagementCause::Driveway),
            TerrainClass::Offmap => Some(DisengagementCause::Offmap),
            TerrainClass::Sidewalk | TerrainClass::Obstacle => None,
        }
    }
}

/// Collision > street > driveway > offmap, evaluated at the robot center.
pub fn check_disengagement(world: &World, state: &RobotState) -> Option<DisengagementCause> {
    Oracle::default().check(world, state)
}

/// Moves a disengaged robot to the closest centerline point, advanced by
/// [`RESET_ADVANCE_M`], facing along the tangent.
pub fn reset_maneuver(world: &World, state: &RobotState) -> Result<RobotState> {
    if check_disengagement(world, state).is_none() {
        return Err(Error::NotDisengaged);
    }
    reset_to_centerline(world, state)
}

/// Reset without the disengaged precondition (used for human repositioning
/// commands that land off the sidewalk).
pub fn reset_to_centerline(world: &World, state: &RobotState) -> Result<RobotState> {
    let arc = world.project(state.position()).arc_m;
    let target = (arc + RESET_ADVANCE_M).min(world.length());
    let reset = RobotState::on_centerline(world, target);
    match check_disengagement(world, &reset) {
        None => Ok(reset),
        Some(cause) => Err(Error::ResetFailed {
            arc_m: target,
            cause: cause.to_string(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_world, StreetSide, WorldSpec};

    fn straight_world(side: StreetSide) -> World {
        generate_world(&WorldSpec {
            max_curvature: 0.0,
            obstacle_density: 0.0,
            driveway_rate: 0.0,
            street_side: side,
            length_m: 60.0,
            ..WorldSpec::with_seed(1)
        })
        .unwrap()
    }

    #[test]
    fn straight_step_from_origin() {
        let w = straight_world(StreetSide::Right);
        let s0 = RobotState {
            x: 0.0,
            y: 0.0,
            heading: 0.0,
            progress_m: 0.0,
        };
        let s1 = step(&w, &s0, Action::new(0.0));
        assert_eq!((s1.x, s1.y, s1.heading), (0.5, 0.0, 0.0));
        assert!((s1.progress_m - 0.5).abs() < 1e-12);
    }

    #[test]
    fn path_length_is_n_steps() {
        let w = straight_world(StreetSide::Right);
        let mut s = RobotState::on_centerline(&w, 10.0);
        let mut travelled = 0.0;
        for k in 0..40 {
            let next = step(&w, &s, Action::new(((k * 7) % 5) as f64 * 0.2 - 0.4));
            travelled += s.position().distance(next.position());
            s = next;
        }
        assert!((travelled - 40.0 * STEP_LENGTH_M).abs() < 1e-9);
    }

    #[test]
    fn two_max_turns_wrap() {
        let w = straight_world(StreetSide::Right);
        let mut s = RobotState::on_centerline(&w, 10.0);
        s.heading = 3.0;
        let s = step(&w, &step(&w, &s, Action::new(1.0)), Action::new(1.0));
        assert!((s.heading - wrap_angle(3.0 + 2.0 * MAX_HEADING_CHANGE)).abs() < 1e-12);
        assert!(s.heading <= PI && s.heading > -PI);
    }

    #[test]
    fn action_is_clamped() {
        assert_eq!(Action::new(2.0).delta_heading(), MAX_HEADING_CHANGE);
        assert_eq!(Action::new(-2.0).delta_heading(), -MAX_HEADING_CHANGE);
        assert_eq!(Action::new(f64::NAN).delta_heading(), 0.0);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
    }

    #[test]
    fn digits_round_trip() {
        let w = generate_world(&WorldSpec::with_seed(3)).unwrap();
        let o = render_observation(&w, &RobotState::on_centerline(&w, 30.0));
        let digits = o.to_digits();
        assert_eq!(digits.len(), GRID_CELLS);
        assert_eq!(Observation::from_digits(&digits).unwrap(), o);
        assert!(Observation::from_digits("012").is_err());
        assert!(Observation::from_digits(&"7".repeat(GRID_CELLS)).is_err());
        assert_eq!(Observation::from_digits("0123").unwrap().side(), 2);
    }

    #[test]
    fn oracle_clean_on_centerline() {
        let w = straight_world(StreetSide::Left);
        assert_eq!(check_disengagement(&w, &RobotState::on_centerline(&w, 20.0)), None);
    }

    #[test]
    fn oracle_collision_at_obstacle_center() {
        let w = generate_world(&WorldSpec::with_seed(9)).unwrap();
        let o = w.obstacles[0];
        let s = RobotState::at_pose(&w, o.center.x, o.center.y, 0.0);
        assert_eq!(check_disengagement(&w, &s), Some(DisengagementCause::Collision));
    }

    #[test]
    fn oracle_street_and_offmap() {
        let w = straight_world(StreetSide::Right);
        let street = RobotState::at_pose(&w, 20.0, -1.0, 0.0);
        assert_eq!(check_disengagement(&w, &street), Some(DisengagementCause::Street));
        let lawn = RobotState::at_pose(&w, 20.0, 1.0, 0.0);
        assert_eq!(check_disengagement(&w, &lawn), Some(DisengagementCause::Offmap));
    }

    #[test]
    fn margin_disengages_earlier() {
        let w = straight_world(StreetSide::Right);
        let near_edge = RobotState::at_pose(&w, 20.0, -0.7, 0.0);
        assert_eq!(check_disengagement(&w, &near_edge), None);
        let cautious = Oracle { margin_m: 0.1 };
        assert_eq!(cautious.check(&w, &near_edge), Some(DisengagementCause::Street));
    }

    #[test]
    fn reset_requires_disengagement() {
        let w = straight_world(StreetSide::Right);
        let s = RobotState::on_centerline(&w, 20.0);
        assert!(matches!(reset_maneuver(&w, &s), Err(Error::NotDisengaged)));
    }

    #[test]
    fn reset_advances_one_meter() {
        let w = straight_world(StreetSide::Right);
        let s = RobotState::at_pose(&w, 42.0, -1.2, 2.0);
        let r = reset_maneuver(&w, &s).unwrap();
        assert!((r.progress_m - 43.0).abs() < 1e-9);
        assert!((r.x - 43.0).abs() < 1e-9 && r.y.abs() < 1e-12);
        assert_eq!(r.heading, 0.0);
    }
}
