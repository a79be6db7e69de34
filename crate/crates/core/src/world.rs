//! Procedural sidewalk worlds and the geometric queries behind the
//! simulator, the disengagement oracle and the reset maneuver.
//!
//! A world is a tube around a random-walk centerline. Points are classified
//! by projecting onto the centerline: inside the half-width is sidewalk, the
//! band beyond the street-side edge is street, rectangles on the opposite
//! edge are driveways, and everything else is off the map. Obstacles are
//! discs whose centers lie on the sidewalk.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{MAX_HEADING_CHANGE, STEP_LENGTH_M};

/// Length of one random-walk segment of the raw centerline.
pub const RAW_SEGMENT_M: f64 = 1.0;
/// Spacing of the resampled centerline vertices.
pub const CENTERLINE_SPACING_M: f64 = 0.25;
/// Arc spacing used by the feasibility corridor check.
pub const FEASIBILITY_SAMPLE_M: f64 = 0.05;
/// Obstacles and driveways are not placed before this arc length.
pub const CLEAR_START_M: f64 = 5.0;
const PLACEMENT_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Position plus heading (radians, counter-clockwise from +x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreetSide {
    Left,
    Right,
}

impl StreetSide {
    /// Sign of the lateral offset (positive = left of the centerline tangent).
    pub fn sign(self) -> f64 {
        match self {
            StreetSide::Left => 1.0,
            StreetSide::Right => -1.0,
        }
    }
}

fn default_street_width() -> f64 {
    4.0
}
fn default_driveway_depth() -> f64 {
    3.0
}
fn default_obstacle_radius_min() -> f64 {
    0.15
}
fn default_obstacle_radius_max() -> f64 {
    0.3
}
fn default_max_heading() -> f64 {
    PI / 3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub seed: u64,
    pub length_m: f64,
    pub sidewalk_width_m: f64,
    /// Bound on centerline turning, rad per meter.
    pub max_curvature: f64,
    /// Obstacles per 100 m.
    pub obstacle_density: f64,
    /// Driveways per 100 m.
    pub driveway_rate: f64,
    pub driveway_width_m: f64,
    pub street_side: StreetSide,
    pub robot_radius_m: f64,
    pub feasibility_margin_m: f64,
    #[serde(default = "default_street_width")]
    pub street_width_m: f64,
    #[serde(default = "default_driveway_depth")]
    pub driveway_depth_m: f64,
    #[serde(default = "default_obstacle_radius_min")]
    pub obstacle_radius_min_m: f64,
    #[serde(default = "default_obstacle_radius_max")]
    pub obstacle_radius_max_m: f64,
    /// Centerline heading is reflected to stay within +-this bound, which
    /// keeps x strictly increasing along the centerline.
    #[serde(default = "default_max_heading")]
    pub max_heading_rad: f64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            seed: 0,
            length_m: 250.0,
            sidewalk_width_m: 1.5,
            max_curvature: 0.3,
            obstacle_density: 8.0,
            driveway_rate: 4.0,
            driveway_width_m: 2.5,
            street_side: StreetSide::Right,
            robot_radius_m: 0.21,
            feasibility_margin_m: 0.1,
            street_width_m: default_street_width(),
            driveway_depth_m: default_driveway_depth(),
            obstacle_radius_min_m: default_obstacle_radius_min(),
            obstacle_radius_max_m: default_obstacle_radius_max(),
            max_heading_rad: default_max_heading(),
        }
    }
}

impl WorldSpec {
    pub fn with_seed(seed: u64) -> Self {
        WorldSpec {
            seed,
            ..Default::default()
        }
    }

    pub fn half_width(&self) -> f64 {
        0.5 * self.sidewalk_width_m
    }

    /// Radius of the tube around the centerline that must stay obstacle free.
    pub fn clearance_m(&self) -> f64 {
        self.robot_radius_m + self.feasibility_margin_m
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidWorldSpec(msg));
        let finite = [
            self.length_m,
            self.sidewalk_width_m,
            self.max_curvature,
            self.obstacle_density,
            self.driveway_rate,
            self.driveway_width_m,
            self.robot_radius_m,
            self.feasibility_margin_m,
            self.street_width_m,
            self.driveway_depth_m,
            self.obstacle_radius_min_m,
            self.obstacle_radius_max_m,
            self.max_heading_rad,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return fail("non-finite field".into());
        }
        if self.length_m <= 0.0 {
            return fail(format!("length_m must be positive, got {}", self.length_m));
        }
        if self.sidewalk_width_m <= 2.0 * self.clearance_m() {
            return fail(format!(
                "sidewalk_width_m {} must exceed 2*(robot_radius_m + feasibility_margin_m) = {}",
                self.sidewalk_width_m,
                2.0 * self.clearance_m()
            ));
        }
        if self.max_curvature < 0.0 || self.max_curvature * STEP_LENGTH_M >= MAX_HEADING_CHANGE {
            return fail(format!(
                "max_curvature {} must satisfy 0 <= max_curvature * {} < {}",
                self.max_curvature, STEP_LENGTH_M, MAX_HEADING_CHANGE
            ));
        }
        if self.obstacle_density < 0.0 || self.driveway_rate < 0.0 {
            return fail("densities must be non-negative".into());
        }
        if self.robot_radius_m <= 0.0 || self.feasibility_margin_m < 0.0 {
            return fail("robot radius must be positive and margin non-negative".into());
        }
        if self.driveway_width_m <= 0.0 || self.driveway_depth_m <= 0.0 || self.street_width_m <= 0.0 {
            return fail("driveway and street extents must be positive".into());
        }
        if self.obstacle_radius_min_m <= 0.0 || self.obstacle_radius_max_m < self.obstacle_radius_min_m {
            return fail("obstacle radius range must satisfy 0 < min <= max".into());
        }
        if !(self.max_heading_rad > 0.0 && self.max_heading_rad < 0.5 * PI) {
            return fail("max_heading_rad must lie in (0, pi/2)".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerrainClass {
    Sidewalk,
    Street,
    Driveway,
    Obstacle,
    Offmap,
}

impl TerrainClass {
    pub const COUNT: usize = 5;
    pub const ALL: [TerrainClass; 5] = [
        TerrainClass::Sidewalk,
        TerrainClass::Street,
        TerrainClass::Driveway,
        TerrainClass::Obstacle,
        TerrainClass::Offmap,
    ];

    /// Channel index in the one-hot observation, also the storage digit.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: Point,
    pub radius: f64,
}

/// Driveway rectangle in centerline coordinates, plus its world corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Driveway {
    pub s_start: f64,
    pub s_end: f64,
    pub depth_m: f64,
    pub corners: [Point; 4],
}

/// Polyline with cumulative arc length; x is strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct Centerline {
    points: Vec<Point>,
    arcs: Vec<f64>,
}

/// Result of projecting a point onto the centerline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub arc_m: f64,
    pub pose: Pose,
    pub distance: f64,
    /// Signed offset from the centerline, positive to the left of the tangent.
    pub lateral: f64,
    /// True when the point lies before the start or past the end of the centerline.
    pub beyond_end: bool,
}

impl Centerline {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::WorldGeneration("centerline needs at least two vertices".into()));
        }
        let mut arcs = Vec::with_capacity(points.len());
        arcs.push(0.0);
        for w in points.windows(2) {
            if w[1].x <= w[0].x {
                return Err(Error::WorldGeneration("centerline x must be strictly increasing".into()));
            }
            let last = *arcs.last().unwrap();
            arcs.push(last + w[0].distance(w[1]));
        }
        Ok(Centerline { points, arcs })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn arcs(&self) -> &[f64] {
        &self.arcs
    }

    pub fn length(&self) -> f64 {
        *self.arcs.last().unwrap()
    }

    pub fn segment_count(&self) -> usize {
        self.points.len() - 1
    }

    fn segment_heading(&self, seg: usize) -> f64 {
        let a = self.points[seg];
        let b = self.points[seg + 1];
        (b.y - a.y).atan2(b.x - a.x)
    }

    /// Pose on the centerline at arc length `s` (clamped to the ends).
    pub fn pose_at(&self, s: f64) -> Pose {
        let s = s.clamp(0.0, self.length());
        let seg = match self.arcs.partition_point(|&a| a <= s) {
            0 => 0,
            i => (i - 1).min(self.segment_count() - 1),
        };
        let a = self.points[seg];
        let b = self.points[seg + 1];
        let len = self.arcs[seg + 1] - self.arcs[seg];
        let t = if len > 0.0 { (s - self.arcs[seg]) / len } else { 0.0 };
        Pose {
            x: a.x + t * (b.x - a.x),
            y: a.y + t * (b.y - a.y),
            heading: self.segment_heading(seg),
        }
    }

    fn project_onto(&self, seg: usize, p: Point) -> (f64, f64, Point) {
        let a = self.points[seg];
        let b = self.points[seg + 1];
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        let len2 = dx * dx + dy * dy;
        let raw_t = ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2;
        let t = raw_t.clamp(0.0, 1.0);
        let q = Point::new(a.x + t * dx, a.y + t * dy);
        (raw_t, t, q)
    }

    fn projection_from(&self, seg: usize, p: Point) -> Projection {
        let (raw_t, t, q) = self.project_onto(seg, p);
        let a = self.points[seg];
        let b = self.points[seg + 1];
        let len = self.arcs[seg + 1] - self.arcs[seg];
        let heading = self.segment_heading(seg);
        let (dx, dy) = ((b.x - a.x) / len, (b.y - a.y) / len);
        let lateral = dx * (p.y - q.y) - dy * (p.x - q.x);
        let beyond_end =
            (seg == 0 && raw_t < 0.0) || (seg + 1 == self.segment_count() && raw_t > 1.0);
        Projection {
            arc_m: self.arcs[seg] + t * len,
            pose: Pose {
                x: q.x,
                y: q.y,
                heading,
            },
            distance: p.distance(q),
            lateral,
            beyond_end,
        }
    }

    /// Closest centerline point; ties go to the smaller arc length.
    ///
    /// Because x increases strictly along the centerline, only segments whose
    /// x-extent intersects `[p.x - d, p.x + d]` can beat an initial candidate at
    /// distance `d`, so the scan is restricted to that contiguous range.
    pub fn project(&self, p: Point) -> Projection {
        let n = self.segment_count();
        let guess = match self.points.partition_point(|v| v.x <= p.x) {
            0 => 0,
            i => (i - 1).min(n - 1),
        };
        let (_, _, q) = self.project_onto(guess, p);
        let radius = p.distance(q) * (1.0 + 1e-12) + 1e-9;
        let lo_x = p.x - radius;
        let hi_x = p.x + radius;
        // first segment whose end vertex reaches lo_x
        let first = self.points.partition_point(|v| v.x < lo_x).saturating_sub(1).min(n - 1);
        // last segment whose start vertex is within hi_x
        let last = self.points.partition_point(|v| v.x <= hi_x).saturating_sub(1).min(n - 1);
        self.best_in(first..=last, p)
    }

    /// Exhaustive scan over every segment; reference for [`Centerline::project`].
    pub fn project_exhaustive(&self, p: Point) -> Projection {
        self.best_in(0..=self.segment_count() - 1, p)
    }

    fn best_in(&self, range: std::ops::RangeInclusive<usize>, p: Point) -> Projection {
        let mut best_seg = *range.start();
        let mut best_d2 = f64::INFINITY;
        for seg in range {
            let (_, _, q) = self.project_onto(seg, p);
            let d2 = (p.x - q.x).powi(2) + (p.y - q.y).powi(2);
            if d2 < best_d2 {
                best_d2 = d2;
                best_seg = seg;
            }
        }
        self.projection_from(best_seg, p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub spec: WorldSpec,
    pub centerline: Centerline,
    pub obstacles: Vec<Obstacle>,
    pub driveways: Vec<Driveway>,
}

impl World {
    pub fn length(&self) -> f64 {
        self.centerline.length()
    }

    pub fn project(&self, p: Point) -> Projection {
        self.centerline.project(p)
    }

    /// Closest obstacle clearance from `p` to the rim of every obstacle.
    pub fn obstacle_clearance(&self, p: Point) -> f64 {
        self.obstacles
            .iter()
            .map(|o| p.distance(o.center) - o.radius)
            .fold(f64::INFINITY, f64::min)
    }

    fn outward_offset(&self, arc: f64, lateral: f64) -> Point {
        let pose = self.centerline.pose_at(arc);
        Point::new(
            pose.x - lateral * pose.heading.sin(),
            pose.y + lateral * pose.heading.cos(),
        )
    }

    /// Verifies that the tube of radius `clearance_m` around the centerline is
    /// free of obstacles, sampling every [`FEASIBILITY_SAMPLE_M`].
    pub fn check_feasibility(&self) -> std::result::Result<(), String> {
        let clearance = self.spec.clearance_m();
        if self.spec.half_width() < clearance {
            return Err("sidewalk half-width below the clearance radius".into());
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            let gap = self.min_centerline_gap(o);
            if gap < clearance {
                return Err(format!("obstacle {i} leaves only {gap:.4} m of clearance"));
            }
        }
        Ok(())
    }

    fn min_centerline_gap(&self, o: &Obstacle) -> f64 {
        let length = self.length();
        let samples = (length / FEASIBILITY_SAMPLE_M).ceil() as usize;
        (0..=samples)
            .map(|k| {
                let pose = self.centerline.pose_at((k as f64 * FEASIBILITY_SAMPLE_M).min(length));
                pose.position().distance(o.center) - o.radius
            })
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn generate_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centerline = Centerline::new(random_walk_centerline(spec, &mut rng))?;
    let mut world = World {
        spec: spec.clone(),
        centerline,
        obstacles: Vec::new(),
        driveways: Vec::new(),
    };
    let length = world.length();
    let half = spec.half_width();
    let clearance = spec.clearance_m();

    let obstacle_count = (spec.obstacle_density * length / 100.0).round() as usize;
    if obstacle_count > 0 && length <= CLEAR_START_M + 2.0 {
        return Err(Error::WorldGeneration(format!(
            "world of {length:.1} m too short to place obstacles"
        )));
    }
    for _ in 0..obstacle_count {
        for _ in 0..PLACEMENT_ATTEMPTS {
            let s = rng.gen_range(CLEAR_START_M..length - 2.0);
            let lateral = rng.gen_range(-half..half);
            let radius = if spec.obstacle_radius_max_m > spec.obstacle_radius_min_m {
                rng.gen_range(spec.obstacle_radius_min_m..spec.obstacle_radius_max_m)
            } else {
                spec.obstacle_radius_min_m
            };
            let candidate = Obstacle {
                center: world.outward_offset(s, lateral),
                radius,
            };
            if world.project(candidate.center).distance >= half {
                continue;
            }
            if world.min_centerline_gap(&candidate) >= clearance {
                world.obstacles.push(candidate);
                break;
            }
        }
    }

    let driveway_count = (spec.driveway_rate * length / 100.0).round() as usize;
    let away = -spec.street_side.sign();
    for _ in 0..driveway_count {
        if length - spec.driveway_width_m - 2.0 <= CLEAR_START_M {
            break;
        }
        for _ in 0..PLACEMENT_ATTEMPTS {
            let s_start = rng.gen_range(CLEAR_START_M..length - spec.driveway_width_m - 2.0);
            let s_end = s_start + spec.driveway_width_m;
            let overlaps = world
                .driveways
                .iter()
                .any(|d| s_start < d.s_end && d.s_start < s_end);
            if overlaps {
                continue;
            }
            let inner = away * half;
            let outer = away * (half + spec.driveway_depth_m);
            world.driveways.push(Driveway {
                s_start,
                s_end,
                depth_m: spec.driveway_depth_m,
                corners: [
                    world.outward_offset(s_start, inner),
                    world.outward_offset(s_end, inner),
                    world.outward_offset(s_end, outer),
                    world.outward_offset(s_start, outer),
                ],
            });
            break;
        }
    }
    world.driveways.sort_by(|a, b| a.s_start.total_cmp(&b.s_start));

    world
        .check_feasibility()
        .map_err(|msg| Error::WorldGeneration(format!("seed {}: {msg}", spec.seed)))?;
    Ok(world)
}

fn random_walk_centerline(spec: &WorldSpec, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let segments = (spec.length_m / RAW_SEGMENT_M).ceil() as usize;
    let bound = spec.max_heading_rad;
    let mut heading: f64 = 0.0;
    let mut points = vec![Point::new(0.0, 0.0)];
    for k in 0..segments {
        let seg_len = (spec.length_m - k as f64 * RAW_SEGMENT_M).min(RAW_SEGMENT_M);
        if k > 0 {
            let turn = spec.max_curvature * seg_len;
            heading += turn * (2.0 * rng.gen::<f64>() - 1.0);
            if heading > bound {
                heading = 2.0 * bound - heading;
            } else if heading < -bound {
                heading = -2.0 * bound - heading;
            }
        }
        let start = *points.last().unwrap();
        let pieces = (seg_len / CENTERLINE_SPACING_M).ceil().max(1.0) as usize;
        let (dx, dy) = (heading.cos(), heading.sin());
        for j in 1..=pieces {
            let d = seg_len * j as f64 / pieces as f64;
            points.push(Point::new(start.x + d * dx, start.y + d * dy));
        }
    }
    points
}

/// Terrain class at `p`. Priority: obstacle > street > driveway > sidewalk > offmap.
pub fn classify_point(world: &World, p: Point) -> TerrainClass {
    if world
        .obstacles
        .iter()
        .any(|o| p.distance(o.center) <= o.radius)
    {
        return TerrainClass::Obstacle;
    }
    classify_ground(world, &world.project(p))
}

pub(crate) fn classify_ground(world: &World, proj: &Projection) -> TerrainClass {
    if proj.beyond_end {
        return TerrainClass::Offmap;
    }
    let spec = &world.spec;
    let half = spec.half_width();
    let side = proj.lateral * spec.street_side.sign();
    let offset = proj.lateral.abs();
    if side > 0.0 && offset > half && offset <= half + spec.street_width_m {
        return TerrainClass::Street;
    }
    if side < 0.0
        && offset > half
        && world.driveways.iter().any(|d| {
            proj.arc_m >= d.s_start && proj.arc_m <= d.s_end && offset <= half + d.depth_m
        })
    {
        return TerrainClass::Driveway;
    }
    if offset <= half {
        TerrainClass::Sidewalk
    } else {
        TerrainClass::Offmap
    }
}

/// Arc length and pose of the closest centerline point.
pub fn nearest_centerline(world: &World, p: Point) -> (f64, Pose) {
    let proj = world.project(p);
    (proj.arc_m, proj.pose)
}

pub const WORLD_FORMAT: &str = "world.v1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorldDocument {
    format: String,
    spec: WorldSpec,
    centerline: Vec<[f64; 2]>,
    obstacles: Vec<[f64; 3]>,
    driveways: Vec<DrivewayDocument>,
    street: StreetDocument,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DrivewayDocument {
    s_start: f64,
    s_end: f64,
    depth_m: f64,
    corners: [[f64; 2]; 4],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StreetDocument {
    side: StreetSide,
    inner_offset_m: f64,
    width_m: f64,
}

impl World {
    pub fn to_json(&self) -> String {
        let doc = WorldDocument {
            format: WORLD_FORMAT.to_string(),
            spec: self.spec.clone(),
            centerline: self.centerline.points.iter().map(|p| [p.x, p.y]).collect(),
            obstacles: self
                .obstacles
                .iter()
                .map(|o| [o.center.x, o.center.y, o.radius])
                .collect(),
            driveways: self
                .driveways
                .iter()
                .map(|d| DrivewayDocument {
                    s_start: d.s_start,
                    s_end: d.s_end,
                    depth_m: d.depth_m,
                    corners: d.corners.map(|c| [c.x, c.y]),
                })
                .collect(),
            street: StreetDocument {
                side: self.spec.street_side,
                inner_offset_m: self.spec.half_width(),
                width_m: self.spec.street_width_m,
            },
        };
        serde_json::to_string(&doc).expect("world document serializes")
    }

    pub fn from_json(text: &str) -> Result<World> {
        let doc: WorldDocument = serde_json::from_str(text)?;
        if doc.format != WORLD_FORMAT {
            return Err(Error::Version {
                expected: WORLD_FORMAT.into(),
                found: doc.format,
            });
        }
        doc.spec.validate()?;
        let centerline =
            Centerline::new(doc.centerline.iter().map(|&[x, y]| Point::new(x, y)).collect())?;
        Ok(World {
            spec: doc.spec,
            centerline,
            obstacles: doc
                .obstacles
                .iter()
                .map(|&[x, y, r]| Obstacle {
                    center: Point::new(x, y),
                    radius: r,
                })
                .collect(),
            driveways: doc
                .driveways
                .iter()
                .map(|d| Driveway {
                    s_start: d.s_start,
                    s_end: d.s_end,
                    depth_m: d.depth_m,
                    corners: d.corners.map(|[x, y]| Point::new(x, y)),
                })
                .collect(),
        })
    }
}
