//! Fixed-step closed-loop simulation: scenario files, the tick loop,
//! metrics and logs.
//!
//! Tick order: sense, map, mission (when idle), plan or replan, control,
//! actuate, integrate. The true pose only ever moves through
//! [`integrate_odometry`] on the commanded twist.

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::arm::{
    arm_fk, reachable, to_mount_frame, trace_line, ArmJoints, ArmMount, GraspConfig, GraspFsm, GraspPhase, GraspTarget,
    GripperCommand, GripperState, JointTracker,
};
use crate::control::{
    collision_gate, FollowMode, FollowerConfig, GateDecision, PathFollower, PidGains, DEFAULT_STOP_DIST,
};
use crate::error::{Error, Result};
use crate::geometry::{Cell, CellState, GridMap, Point2, Point3, Pose2D, Twist2D, WorldConfig};
use crate::kinematics::{forward_kinematics, fuse_heading, integrate_odometry, inverse_kinematics, WheelSpeeds};
use crate::mission::{
    log_line, mission_step, plan_next, ActionCandidate, MissionEvent, MissionState, Multiset, ObjectKind, Phase,
    Station, StationId,
};
use crate::perception::{
    detection_log_line, footprint_points, locate_object, pca_orientation, simulate_detections, Camera, OrientedObject,
    WorldObject,
};
use crate::planning::{astar, distance_field, traversable, DistanceField, OpenListKind, PlanResult, PlannerParams};
use crate::render::render;
use crate::scalar::{normalize_angle, normalize_axis};
use crate::sensing::{
    simulate_lidar, simulate_range_sensors, LidarScan, OccupancyMapper, RangeReadings, DEFAULT_BEAMS,
    DEFAULT_LIDAR_RANGE, DEFAULT_TOF_RANGE,
};

type Pose = Pose2D<f64>;
type Point = Point2<f64>;

/// Height of the surface objects rest on at a station.
pub const TABLE_HEIGHT: f64 = 0.30;
/// Lidar scans run every this many ticks.
pub const LIDAR_PERIOD: u64 = 5;
/// A single navigation leg is abandoned after this long.
pub const LEG_TIMEOUT: f64 = 180.0;
/// Consecutive collision-gate stops tolerated on one leg.
pub const MAX_GATE_STOPS: u32 = 20;
/// Allowed distance between a station's approach point and its location.
pub const APPROACH_RANGE: (f64, f64) = (0.30, 0.45);
/// Largest distance a detection may be from its station and still count.
const DETECTION_RADIUS: f64 = 0.3;
/// How far the planner looks for a usable start cell when the robot's own
/// cell is too close to an obstacle.
const START_SEARCH_CELLS: i64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoseSource {
    DeadReckoning,
    GroundTruth,
}

impl PoseSource {
    pub fn name(self) -> &'static str {
        match self {
            PoseSource::DeadReckoning => "dead_reckoning",
            PoseSource::GroundTruth => "ground_truth",
        }
    }
}

impl FromStr for PoseSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dead_reckoning" => Ok(PoseSource::DeadReckoning),
            "ground_truth" => Ok(PoseSource::GroundTruth),
            other => Err(Error::Scenario(format!("unknown pose source '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LogLevel {
    Quiet,
    Info,
    Trace,
}

impl LogLevel {
    /// Level from the value of `SIM_LOG_LEVEL`; unset means `Info`.
    pub fn from_env_value(v: Option<&str>) -> Result<Self> {
        match v.map(str::trim) {
            None | Some("") | Some("info") => Ok(LogLevel::Info),
            Some("quiet") => Ok(LogLevel::Quiet),
            Some("trace") => Ok(LogLevel::Trace),
            Some(other) => Err(Error::Scenario(format!("unknown SIM_LOG_LEVEL '{other}'"))),
        }
    }

    pub fn from_env() -> Result<Self> {
        Self::from_env_value(std::env::var("SIM_LOG_LEVEL").ok().as_deref())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationSpec {
    pub id: StationId,
    /// Where objects rest.
    pub location: Point,
    /// Where the robot parks to work on the station.
    pub approach: Point,
    pub present: Multiset,
    pub desired: Multiset,
    /// World yaw of the long axis of objects resting here.
    pub object_yaw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Map file as written in the scenario; see [`Scenario::map_path`].
    pub map: PathBuf,
    /// Directory relative map paths are resolved against. Not serialized.
    pub base_dir: PathBuf,
    pub start: Pose,
    pub dt: f64,
    pub max_sim_time: f64,
    pub seed: u64,
    pub k: f64,
    pub clearance: f64,
    pub open_list: OpenListKind,
    pub capacity: usize,
    pub pose_source: PoseSource,
    /// Std-dev of additive wheel-speed noise, rad/s.
    pub encoder_noise: f64,
    /// Std-dev of additive gyro rate noise, rad/s.
    pub gyro_noise: f64,
    /// Std-dev of detection depth noise, m.
    pub detection_noise: f64,
    pub gains_xy: PidGains<f64>,
    pub gains_theta: PidGains<f64>,
    /// Axis-aligned rectangles `[x0, y0, x1, y1]` present in the world but
    /// absent from the robot's prior map.
    pub obstacles: Vec<[f64; 4]>,
    pub stations: Vec<StationSpec>,
}

impl Default for Scenario {
    fn default() -> Self {
        let p = PidGains::position();
        let h = PidGains::heading();
        Self {
            map: PathBuf::from("map.grid"),
            base_dir: PathBuf::new(),
            start: Pose::new(0.0, 0.0, 0.0),
            dt: 0.02,
            max_sim_time: 600.0,
            seed: 0,
            k: crate::planning::DEFAULT_SAFETY_GAIN,
            clearance: crate::planning::DEFAULT_CLEARANCE,
            open_list: OpenListKind::Heap,
            capacity: crate::mission::DEFAULT_CAPACITY,
            pose_source: PoseSource::DeadReckoning,
            encoder_noise: 0.0,
            gyro_noise: 0.0,
            detection_noise: 0.0,
            gains_xy: p,
            gains_theta: h,
            obstacles: Vec::new(),
            stations: Vec::new(),
        }
    }
}

fn scenario_err(line: usize, msg: impl fmt::Display) -> Error {
    Error::Scenario(format!("line {line}: {msg}"))
}

fn parse_num<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| scenario_err(line, format!("bad value '{v}' for {key}")))
}

fn parse_floats<const N: usize>(line: usize, key: &str, v: &str) -> Result<[f64; N]> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(scenario_err(line, format!("{key} needs {N} comma-separated numbers")));
    }
    let mut out = [0.0f64; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = parse_num(line, key, p)?;
        if !o.is_finite() {
            return Err(scenario_err(line, format!("{key} must be finite")));
        }
    }
    Ok(out)
}

fn parse_multiset(line: usize, key: &str, v: &str) -> Result<Multiset> {
    let mut m = Multiset::new();
    if v.trim().is_empty() {
        return Ok(m);
    }
    for tok in v.split(',').map(str::trim) {
        let ok = !tok.is_empty() && tok.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
        if !ok {
            return Err(scenario_err(line, format!("bad object kind '{tok}' in {key}")));
        }
        m.insert(ObjectKind::new(tok));
    }
    Ok(m)
}

/// Replace the three gains, keeping the integral and output limits.
fn gains_from(v: [f64; 3], base: PidGains<f64>) -> PidGains<f64> {
    PidGains {
        kp: v[0],
        ki: v[1],
        kd: v[2],
        ..base
    }
}

fn fmt_multiset(m: &Multiset) -> String {
    let mut items = Vec::new();
    for (k, n) in m.iter() {
        for _ in 0..n {
            items.push(k.0.clone());
        }
    }
    items.join(", ")
}

#[derive(Default)]
struct StationDraft {
    id: StationId,
    line: usize,
    location: Option<Point>,
    approach: Option<Point>,
    present: Multiset,
    desired: Multiset,
    object_yaw: f64,
}

impl StationDraft {
    fn finish(self) -> Result<StationSpec> {
        let missing = |what: &str| scenario_err(self.line, format!("station {} has no {what}", self.id));
        Ok(StationSpec {
            id: self.id,
            location: self.location.ok_or_else(|| missing("location"))?,
            approach: self.approach.ok_or_else(|| missing("approach"))?,
            present: self.present,
            desired: self.desired,
            object_yaw: self.object_yaw,
        })
    }
}

impl Scenario {
    /// Parse the `key = value` format. `#` starts a comment line. A
    /// `station = <id>` line opens a block that `location`, `approach`,
    /// `present`, `desired` and `object_yaw` lines belong to.
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut sc = Scenario {
            base_dir: base_dir.into(),
            ..Scenario::default()
        };
        let mut have_map = false;
        let mut have_start = false;
        let mut draft: Option<StationDraft> = None;
        for (i, raw) in text.lines().enumerate() {
            let ln = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| scenario_err(ln, "expected 'key = value'"))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "station" => {
                    if let Some(d) = draft.take() {
                        sc.stations.push(d.finish()?);
                    }
                    draft = Some(StationDraft {
                        id: parse_num(ln, key, value)?,
                        line: ln,
                        ..StationDraft::default()
                    });
                }
                "location" | "approach" | "present" | "desired" | "object_yaw" => {
                    let d = draft
                        .as_mut()
                        .ok_or_else(|| scenario_err(ln, format!("{key} outside a station block")))?;
                    match key {
                        "location" => {
                            let [x, y] = parse_floats(ln, key, value)?;
                            d.location = Some(Point::new(x, y));
                        }
                        "approach" => {
                            let [x, y] = parse_floats(ln, key, value)?;
                            d.approach = Some(Point::new(x, y));
                        }
                        "present" => d.present = parse_multiset(ln, key, value)?,
                        "desired" => d.desired = parse_multiset(ln, key, value)?,
                        _ => d.object_yaw = parse_floats::<1>(ln, key, value)?[0],
                    }
                }
                "map" => {
                    if value.is_empty() {
                        return Err(scenario_err(ln, "empty map path"));
                    }
                    sc.map = PathBuf::from(value);
                    have_map = true;
                }
                "start" => {
                    let [x, y, t] = parse_floats(ln, key, value)?;
                    sc.start = Pose { x, y, theta: t };
                    have_start = true;
                }
                "dt" => sc.dt = parse_floats::<1>(ln, key, value)?[0],
                "max_sim_time" => sc.max_sim_time = parse_floats::<1>(ln, key, value)?[0],
                "seed" => sc.seed = parse_num(ln, key, value)?,
                "k" => sc.k = parse_floats::<1>(ln, key, value)?[0],
                "clearance" => sc.clearance = parse_floats::<1>(ln, key, value)?[0],
                "open_list" => sc.open_list = value.parse().map_err(|e: Error| scenario_err(ln, e))?,
                "capacity" => sc.capacity = parse_num(ln, key, value)?,
                "pose_source" => sc.pose_source = value.parse().map_err(|e: Error| scenario_err(ln, e))?,
                "encoder_noise" => sc.encoder_noise = parse_floats::<1>(ln, key, value)?[0],
                "gyro_noise" => sc.gyro_noise = parse_floats::<1>(ln, key, value)?[0],
                "detection_noise" => sc.detection_noise = parse_floats::<1>(ln, key, value)?[0],
                "gains_xy" => sc.gains_xy = gains_from(parse_floats(ln, key, value)?, sc.gains_xy),
                "gains_theta" => sc.gains_theta = gains_from(parse_floats(ln, key, value)?, sc.gains_theta),
                "obstacle" => sc.obstacles.push(parse_floats(ln, key, value)?),
                other => return Err(scenario_err(ln, format!("unknown key '{other}'"))),
            }
        }
        if let Some(d) = draft.take() {
            sc.stations.push(d.finish()?);
        }
        if !have_map {
            return Err(Error::Scenario("missing 'map'".into()));
        }
        if !have_start {
            return Err(Error::Scenario("missing 'start'".into()));
        }
        sc.check_params()?;
        Ok(sc)
    }

    /// Read a scenario file; relative map paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new("")))
    }

    /// Canonical text form. Parsing it yields an equal scenario.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let g = |p: &PidGains<f64>| format!("{}, {}, {}", p.kp, p.ki, p.kd);
        let _ = writeln!(s, "map = {}", self.map.display());
        let _ = writeln!(s, "start = {}, {}, {}", self.start.x, self.start.y, self.start.theta);
        let _ = writeln!(s, "dt = {}", self.dt);
        let _ = writeln!(s, "max_sim_time = {}", self.max_sim_time);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "k = {}", self.k);
        let _ = writeln!(s, "clearance = {}", self.clearance);
        let _ = writeln!(s, "open_list = {}", self.open_list);
        let _ = writeln!(s, "capacity = {}", self.capacity);
        let _ = writeln!(s, "pose_source = {}", self.pose_source.name());
        let _ = writeln!(s, "encoder_noise = {}", self.encoder_noise);
        let _ = writeln!(s, "gyro_noise = {}", self.gyro_noise);
        let _ = writeln!(s, "detection_noise = {}", self.detection_noise);
        let _ = writeln!(s, "gains_xy = {}", g(&self.gains_xy));
        let _ = writeln!(s, "gains_theta = {}", g(&self.gains_theta));
        for o in &self.obstacles {
            let _ = writeln!(s, "obstacle = {}, {}, {}, {}", o[0], o[1], o[2], o[3]);
        }
        for st in &self.stations {
            let _ = writeln!(s, "station = {}", st.id);
            let _ = writeln!(s, "location = {}, {}", st.location.x, st.location.y);
            let _ = writeln!(s, "approach = {}, {}", st.approach.x, st.approach.y);
            for (key, m) in [("present", &st.present), ("desired", &st.desired)] {
                let items = fmt_multiset(m);
                if items.is_empty() {
                    let _ = writeln!(s, "{key} =");
                } else {
                    let _ = writeln!(s, "{key} = {items}");
                }
            }
            let _ = writeln!(s, "object_yaw = {}", st.object_yaw);
        }
        s
    }

    pub fn map_path(&self) -> PathBuf {
        self.base_dir.join(&self.map)
    }

    pub fn load_layout(&self) -> Result<GridMap> {
        let path = self.map_path();
        let text = std::fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MapNotFound(path.clone()),
            _ => Error::Io(e),
        })?;
        GridMap::from_text(&text)
    }

    pub fn planner_params(&self) -> PlannerParams {
        PlannerParams {
            k: self.k,
            clearance: self.clearance,
            open_list: self.open_list,
            ..PlannerParams::default()
        }
    }

    fn check_params(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Scenario(m.into()));
        if !(self.dt > 0.0 && self.dt <= 0.1) {
            return bad("dt must lie in (0, 0.1]");
        }
        if !(self.max_sim_time > 0.0 && self.max_sim_time.is_finite()) {
            return bad("max_sim_time must be positive");
        }
        if self.capacity == 0 {
            return bad("capacity must be at least 1");
        }
        if self.k < 0.0 || self.clearance < 0.0 {
            return bad("k and clearance must be non-negative");
        }
        if self.encoder_noise < 0.0 || self.gyro_noise < 0.0 || self.detection_noise < 0.0 {
            return bad("noise levels must be non-negative");
        }
        let mut ids: Vec<StationId> = self.stations.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate station id");
        }
        Ok(())
    }

    /// The world as it really is: the prior layout plus hidden obstacles.
    pub fn world_map(&self, layout: &GridMap) -> GridMap {
        let mut world = layout.clone();
        for &[x0, y0, x1, y1] in &self.obstacles {
            let (lx, hx) = (x0.min(x1), x0.max(x1));
            let (ly, hy) = (y0.min(y1), y0.max(y1));
            for (c, _) in layout.iter_cells() {
                let p = layout.cell_center(c);
                if p.x >= lx && p.x <= hx && p.y >= ly && p.y <= hy {
                    world.set(c, CellState::Occupied);
                }
            }
        }
        world
    }

    /// Checks that need the map: start pose and stations in free space,
    /// approach distances within arm reach, and a reachable target layout.
    pub fn validate(&self, layout: &GridMap) -> Result<()> {
        self.check_params()?;
        let world = self.world_map(layout);
        let free = |p: Point, what: String| -> Result<()> {
            match world.world_to_cell(p) {
                Ok(c) if world.get(c) == CellState::Free => Ok(()),
                Ok(_) => Err(Error::Scenario(format!("{what} is not in free space"))),
                Err(_) => Err(Error::Scenario(format!("{what} is outside the map"))),
            }
        };
        free(self.start.position(), "start".into())?;
        let mut have = std::collections::BTreeMap::<ObjectKind, u32>::new();
        let mut want = have.clone();
        for st in &self.stations {
            free(st.approach, format!("station {} approach", st.id))?;
            world
                .world_to_cell(st.location)
                .map_err(|_| Error::Scenario(format!("station {} location is outside the map", st.id)))?;
            let d = st.approach.distance(&st.location);
            if d < APPROACH_RANGE.0 || d > APPROACH_RANGE.1 {
                return Err(Error::Scenario(format!(
                    "station {} approach is {d:.3} m from its location; allowed {}..{}",
                    st.id, APPROACH_RANGE.0, APPROACH_RANGE.1
                )));
            }
            for (k, n) in st.present.iter() {
                *have.entry(k.clone()).or_default() += n;
            }
            for (k, n) in st.desired.iter() {
                *want.entry(k.clone()).or_default() += n;
            }
        }
        if have != want {
            return Err(Error::Scenario(
                "desired object counts differ from present counts".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    Stalled,
    TimedOut,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::Done => "Done",
            Outcome::Stalled => "Stalled",
            Outcome::TimedOut => "TimedOut",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimMetrics {
    pub tasks_completed: u32,
    pub total_distance: f64,
    pub sim_time: f64,
    pub replans: u32,
    /// Separate episodes of the body touching a wall.
    pub collisions: u32,
    /// Smallest distance from the robot centre to any occupied cell or the
    /// map border.
    pub min_wall_clearance: f64,
    pub max_planar_speed: f64,
    /// Fastest base or wrist joint motion seen, rad/s.
    pub max_revolute_rate: f64,
    pub outcome: Outcome,
}

impl SimMetrics {
    pub fn to_text(&self) -> String {
        format!(
            "tasks_completed={}\ntotal_distance={:.6}\nsim_time={:.2}\nreplans={}\ncollisions={}\nmin_wall_clearance={:.6}\nmax_planar_speed={:.6}\nmax_revolute_rate={:.6}\noutcome={}\n",
            self.tasks_completed,
            self.total_distance,
            self.sim_time,
            self.replans,
            self.collisions,
            self.min_wall_clearance,
            self.max_planar_speed,
            self.max_revolute_rate,
            self.outcome.name()
        )
    }
}

/// One mission decision with everything needed to re-check it.
#[derive(Debug, Clone)]
pub struct Decision {
    pub t: f64,
    /// Mission state just before the decision, with the start cell used.
    pub state: MissionState,
    /// Robot's map when the decision was made.
    pub own_map: GridMap,
    pub params: PlannerParams,
    pub chosen: Option<ActionCandidate>,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub metrics: SimMetrics,
    pub trajectory_csv: String,
    pub mission_log: String,
    pub arm_trace: String,
    pub detection_log: String,
    pub decisions: Vec<Decision>,
    /// True positions, one per tick.
    pub trajectory: Vec<Point>,
    pub last_path: Vec<Cell>,
    pub own_map: GridMap,
    pub final_state: MissionState,
    pub world_objects: Vec<WorldObject>,
    pub held: Option<WorldObject>,
}

impl SimOutput {
    pub fn render(&self) -> String {
        render(&self.own_map, &self.trajectory, &self.last_path)
    }

    /// Write all artifacts into `dir`, creating it if needed.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("trajectory.csv"), &self.trajectory_csv)?;
        std::fs::write(dir.join("mission.log"), &self.mission_log)?;
        std::fs::write(dir.join("arm.log"), &self.arm_trace)?;
        std::fs::write(dir.join("detections.log"), &self.detection_log)?;
        std::fs::write(dir.join("metrics.txt"), self.metrics.to_text())?;
        std::fs::write(dir.join("map.pgm"), self.render())?;
        Ok(())
    }
}

/// Distance from `p` to the nearest non-free cell square or the map border.
pub fn wall_clearance(map: &GridMap, p: Point) -> f64 {
    let res = map.resolution();
    let (w, h) = (map.width() as f64 * res, map.height() as f64 * res);
    let border = p.x.min(p.y).min(w - p.x).min(h - p.y).max(0.0);
    let mut radius = 0.5f64;
    loop {
        let mut best = border;
        let c0 = ((p.x - radius) / res).floor().max(0.0) as usize;
        let c1 = (((p.x + radius) / res).floor().max(0.0) as usize).min(map.width() - 1);
        let r0 = ((p.y - radius) / res).floor().max(0.0) as usize;
        let r1 = (((p.y + radius) / res).floor().max(0.0) as usize).min(map.height() - 1);
        for row in r0..=r1 {
            for col in c0..=c1 {
                if map.get(Cell::new(col, row)) == CellState::Free {
                    continue;
                }
                let (x0, y0) = (col as f64 * res, row as f64 * res);
                let dx = (x0 - p.x).max(p.x - (x0 + res)).max(0.0);
                let dy = (y0 - p.y).max(p.y - (y0 + res)).max(0.0);
                best = best.min(dx.hypot(dy));
            }
        }
        if best <= radius || radius >= w.max(h) {
            return best;
        }
        radius *= 2.0;
    }
}

/// Nearest traversable cell to `cell` within a small window, or `cell`
/// itself when it is already usable. Ties go to row-major order.
pub fn usable_start(map: &GridMap, field: &DistanceField, cell: Cell, clearance: f64) -> Cell {
    if traversable(map, field, cell, clearance) {
        return cell;
    }
    let mut best: Option<(i64, Cell)> = None;
    for dr in -START_SEARCH_CELLS..=START_SEARCH_CELLS {
        for dc in -START_SEARCH_CELLS..=START_SEARCH_CELLS {
            let (c, r) = (cell.col as i64 + dc, cell.row as i64 + dr);
            if !map.contains(c, r) {
                continue;
            }
            let cand = Cell::new(c as usize, r as usize);
            let d2 = dc * dc + dr * dr;
            if traversable(map, field, cand, clearance) && best.is_none_or(|(bd, bc)| (d2, cand) < (bd, bc)) {
                best = Some((d2, cand));
            }
        }
    }
    best.map_or(cell, |(_, c)| c)
}

enum Activity {
    Idle,
    Navigate(Box<Leg>),
    Manipulate(Manip),
}

struct Leg {
    follower: PathFollower<f64>,
    cells: Vec<Cell>,
    started: f64,
    gate_stops: u32,
}

struct Manip {
    pick: bool,
    target: GraspTarget<f64>,
    /// Index into the world objects of the object being picked.
    object: Option<usize>,
}

struct Sim<'a> {
    sc: &'a Scenario,
    world: GridMap,
    mapper: OccupancyMapper,
    field: DistanceField,
    field_dirty: bool,
    cfg: WorldConfig<f64>,
    params: PlannerParams,
    follower_cfg: FollowerConfig<f64>,
    mission: MissionState,
    truth: Pose,
    est: Pose,
    gyro: [f64; 2],
    rng: ChaCha8Rng,
    encoder_noise: Option<Normal<f64>>,
    gyro_noise: Option<Normal<f64>>,
    joints: ArmJoints<f64>,
    tracker: JointTracker<f64>,
    fsm: GraspFsm<f64>,
    gripper: GripperState<WorldObject>,
    camera: Camera,
    mount: ArmMount<f64>,
    objects: Vec<WorldObject>,
    activity: Activity,
    scan: LidarScan,
    replan_pending: bool,
    t: f64,
    tick: u64,
    in_contact: bool,
    metrics: SimMetrics,
    trajectory_csv: String,
    mission_log: String,
    arm_trace: String,
    detection_log: String,
    decisions: Vec<Decision>,
    trajectory: Vec<Point>,
    last_path: Vec<Cell>,
}

/// Load the scenario's map and run it.
pub fn run_sim(sc: &Scenario) -> Result<SimOutput> {
    let layout = sc.load_layout()?;
    run_sim_with_map(sc, layout)
}

/// Run a scenario against an already loaded prior map.
pub fn run_sim_with_map(sc: &Scenario, layout: GridMap) -> Result<SimOutput> {
    sc.validate(&layout)?;
    Sim::new(sc, layout)?.run()
}

fn noise(sigma: f64) -> Option<Normal<f64>> {
    (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma"))
}

impl<'a> Sim<'a> {
    fn new(sc: &'a Scenario, layout: GridMap) -> Result<Self> {
        let world = sc.world_map(&layout);
        let field = distance_field(&layout);
        let start_cell = layout.world_to_cell(sc.start.position())?;
        let stations: Vec<Station> = sc
            .stations
            .iter()
            .map(|s| -> Result<Station> {
                Ok(Station {
                    id: s.id,
                    location: layout.world_to_cell(s.location)?,
                    approach: layout.world_to_cell(s.approach)?,
                    present: s.present.clone(),
                    desired: s.desired.clone(),
                })
            })
            .collect::<Result<_>>()?;
        let mut objects = Vec::new();
        for s in &sc.stations {
            for (k, n) in s.present.iter() {
                for _ in 0..n {
                    objects.push(WorldObject {
                        kind: k.clone(),
                        position: Point3::new(s.location.x, s.location.y, TABLE_HEIGHT),
                        yaw: normalize_axis(s.object_yaw),
                    });
                }
            }
        }
        let grasp = GraspConfig::default();
        let start = Pose::new(sc.start.x, sc.start.y, sc.start.theta);
        let follower_cfg = FollowerConfig {
            gains_xy: sc.gains_xy,
            gains_theta: sc.gains_theta,
            ..FollowerConfig::default()
        };
        let scan = simulate_lidar(&world, &start, DEFAULT_BEAMS, DEFAULT_LIDAR_RANGE)?;
        Ok(Self {
            sc,
            mapper: OccupancyMapper::new(layout),
            field,
            field_dirty: false,
            cfg: WorldConfig::default(),
            params: sc.planner_params(),
            follower_cfg,
            mission: MissionState::new(stations, sc.capacity, start_cell),
            truth: start,
            est: start,
            gyro: [start.theta; 2],
            rng: ChaCha8Rng::seed_from_u64(sc.seed),
            encoder_noise: noise(sc.encoder_noise),
            gyro_noise: noise(sc.gyro_noise),
            joints: ArmJoints::home(),
            tracker: JointTracker::new(grasp.limits),
            fsm: GraspFsm::new(grasp),
            gripper: GripperState::default(),
            camera: Camera::default(),
            mount: ArmMount::default(),
            objects,
            activity: Activity::Idle,
            scan,
            replan_pending: false,
            t: 0.0,
            tick: 0,
            in_contact: false,
            metrics: SimMetrics {
                tasks_completed: 0,
                total_distance: 0.0,
                sim_time: 0.0,
                replans: 0,
                collisions: 0,
                min_wall_clearance: wall_clearance(&world, start.position()),
                max_planar_speed: 0.0,
                max_revolute_rate: 0.0,
                outcome: Outcome::TimedOut,
            },
            world,
            trajectory_csv: String::from("t,x,y,theta,vx,vy,omega\n"),
            mission_log: String::new(),
            arm_trace: String::new(),
            detection_log: String::new(),
            decisions: Vec::new(),
            trajectory: Vec::new(),
            last_path: Vec::new(),
        })
    }

    fn run(mut self) -> Result<SimOutput> {
        let n_ticks = (self.sc.max_sim_time / self.sc.dt - 1e-9).ceil() as u64;
        while self.tick < n_ticks {
            if !self.step()? {
                break;
            }
        }
        self.metrics.sim_time = self.t;
        let held = self.gripper.holding.clone();
        Ok(SimOutput {
            metrics: self.metrics,
            trajectory_csv: self.trajectory_csv,
            mission_log: self.mission_log,
            arm_trace: self.arm_trace,
            detection_log: self.detection_log,
            decisions: self.decisions,
            trajectory: self.trajectory,
            last_path: self.last_path,
            own_map: self.mapper.into_map(),
            final_state: self.mission,
            world_objects: self.objects,
            held,
        })
    }

    fn log_phase(&mut self, action: Option<&ActionCandidate>) {
        let line = log_line(self.t, &self.mission.phase, action);
        self.mission_log.push_str(&line);
        self.mission_log.push('\n');
    }

    fn refresh_field(&mut self) {
        if self.field_dirty {
            self.field = distance_field(self.mapper.map());
            self.field_dirty = false;
        }
    }

    fn own_cell(&self) -> Cell {
        let map = self.mapper.map();
        map.world_to_cell(self.est.position()).unwrap_or_else(|_| {
            let res = map.resolution();
            let c = (self.est.x / res).floor().clamp(0.0, (map.width() - 1) as f64) as usize;
            let r = (self.est.y / res).floor().clamp(0.0, (map.height() - 1) as f64) as usize;
            Cell::new(c, r)
        })
    }

    fn start_cell(&self) -> Cell {
        usable_start(self.mapper.map(), &self.field, self.own_cell(), self.params.clearance)
    }

    fn station(&self, id: StationId) -> &StationSpec {
        self.sc
            .stations
            .iter()
            .find(|s| s.id == id)
            .expect("mission only names known stations")
    }

    /// Give up on the current target and go back to deciding.
    fn abandon(&mut self) {
        self.mission.abandon();
        self.activity = Activity::Idle;
        self.log_phase(None);
    }

    fn step(&mut self) -> Result<bool> {
        // Sense.
        let ranges = simulate_range_sensors(&self.world, &self.truth, DEFAULT_TOF_RANGE).unwrap_or(RangeReadings {
            left: 0.0,
            right: 0.0,
            back: 0.0,
            max_range: DEFAULT_TOF_RANGE,
        });
        // Map.
        if self.tick.is_multiple_of(LIDAR_PERIOD) {
            if let Ok(scan) = simulate_lidar(&self.world, &self.truth, DEFAULT_BEAMS, DEFAULT_LIDAR_RANGE) {
                self.scan = scan;
            }
            let changed = self.mapper.update(&self.est, &self.scan);
            if !changed.is_empty() {
                self.field_dirty = true;
                self.check_path_against(&changed);
            }
        }
        // Mission.
        if matches!(self.activity, Activity::Idle) && !self.decide()? {
            return Ok(false);
        }
        // Plan or replan.
        if self.replan_pending {
            self.replan_pending = false;
            if matches!(self.activity, Activity::Navigate(_)) {
                self.replan()?;
            }
        }
        // Control.
        let cmd = self.control(&ranges)?;
        // Actuate and integrate.
        self.integrate(cmd);
        Ok(true)
    }

    /// Flag a replan when a newly occupied cell comes within clearance of
    /// the current path.
    fn check_path_against(&mut self, changed: &[Cell]) {
        let Activity::Navigate(leg) = &self.activity else {
            return;
        };
        let map = self.mapper.map();
        let res = map.resolution();
        let reach = self.params.clearance + res * 1e-6;
        let hit = changed
            .iter()
            .filter(|&&c| map.get(c) == CellState::Occupied)
            .any(|&c| {
                let p = map.cell_center(c);
                leg.cells.iter().any(|&q| map.cell_center(q).distance(&p) <= reach)
            });
        if hit {
            self.replan_pending = true;
        }
    }

    fn plan_to(&mut self, goal: Point) -> Result<PlanResult> {
        self.refresh_field();
        let map = self.mapper.map();
        let goal_cell = map.world_to_cell(goal)?;
        astar(map, &self.field, self.start_cell(), goal_cell, &self.params)
    }

    fn start_leg(&mut self, station: StationId) -> Result<bool> {
        let st = self.station(station).clone();
        let heading = (st.location.y - st.approach.y).atan2(st.location.x - st.approach.x);
        match self.plan_to(st.approach) {
            Ok(plan) => {
                let mut wps = plan.waypoints.clone();
                if wps.len() > 1 {
                    wps.remove(0);
                }
                match wps.last_mut() {
                    Some(last) => *last = st.approach,
                    None => wps.push(st.approach),
                }
                let gate_stops = match &self.activity {
                    Activity::Navigate(l) => l.gate_stops,
                    _ => 0,
                };
                let started = match &self.activity {
                    Activity::Navigate(l) => l.started,
                    _ => self.t,
                };
                self.last_path = plan.cells.clone();
                self.activity = Activity::Navigate(Box::new(Leg {
                    follower: PathFollower::new(self.follower_cfg, &self.est, wps, heading),
                    cells: plan.cells,
                    started,
                    gate_stops,
                }));
                Ok(true)
            }
            Err(Error::NoPath | Error::InvalidEndpoint(_) | Error::OutOfBounds { .. }) => Ok(false),
            Err(e) => Err(e),
        }
    }

    fn replan(&mut self) -> Result<()> {
        self.metrics.replans += 1;
        mission_step(&mut self.mission, MissionEvent::Replanned)?;
        let Some((station, _)) = self.mission.phase.target() else {
            return Ok(());
        };
        if !self.start_leg(station)? {
            self.abandon();
        }
        Ok(())
    }

    /// Assess and pick the next action. Returns false when the run is over.
    fn decide(&mut self) -> Result<bool> {
        if self.mission.phase != Phase::Assess {
            return Ok(true);
        }
        self.refresh_field();
        self.mission.robot_cell = self.start_cell();
        let before = self.mission.clone();
        let map = self.mapper.map();
        let field = &self.field;
        let params = self.params;
        let cost = |from: Cell, to: Cell| astar(map, field, from, to, &params).ok().map(|r| r.total_cost);
        match plan_next(&mut self.mission, cost) {
            Ok(chosen) => {
                self.decisions.push(Decision {
                    t: self.t,
                    state: before,
                    own_map: self.mapper.map().clone(),
                    params,
                    chosen: chosen.clone(),
                });
                self.log_phase(chosen.as_ref());
                let Some(action) = chosen else {
                    self.metrics.outcome = Outcome::Done;
                    return Ok(false);
                };
                if !self.start_leg(action.station)? {
                    self.metrics.replans += 1;
                    self.abandon();
                }
                Ok(true)
            }
            Err(Error::NoFeasibleAction) => {
                self.metrics.outcome = Outcome::Stalled;
                self.mission_log.push_str(&format!(
                    "t={:.2} phase=Assess action=- station=- object=- cost=- stalled\n",
                    self.t
                ));
                Ok(false)
            }
            Err(e) => Err(e),
        }
    }

    fn control(&mut self, ranges: &RangeReadings) -> Result<Twist2D<f64>> {
        let dt = self.sc.dt;
        enum Next {
            Drive,
            Arrive,
            Replan,
            GiveUp,
        }
        let mut cmd = Twist2D::zero();
        let mut stowing = true;
        let next = match &mut self.activity {
            Activity::Idle => Next::Drive,
            Activity::Manipulate(_) => {
                stowing = false;
                Next::Drive
            }
            Activity::Navigate(leg) => {
                let (c, status) = leg.follower.step(&self.est, &self.cfg, dt);
                cmd = c;
                if status.mode == FollowMode::GoalReached {
                    Next::Arrive
                } else if collision_gate(&self.scan, ranges, &cmd, DEFAULT_STOP_DIST) == GateDecision::StopAndReplan {
                    cmd = Twist2D::zero();
                    leg.gate_stops += 1;
                    if leg.gate_stops > MAX_GATE_STOPS {
                        Next::GiveUp
                    } else {
                        Next::Replan
                    }
                } else if self.t - leg.started > LEG_TIMEOUT {
                    cmd = Twist2D::zero();
                    Next::GiveUp
                } else {
                    Next::Drive
                }
            }
        };
        match next {
            Next::Drive | Next::Arrive => {}
            Next::Replan => self.replan()?,
            Next::GiveUp => self.abandon(),
        }
        if matches!(next, Next::Arrive) {
            mission_step(&mut self.mission, MissionEvent::ArrivedAtStation)?;
            self.log_phase(None);
            self.begin_manipulation()?;
            stowing = !matches!(self.activity, Activity::Manipulate(_));
        }
        if stowing {
            let mut home = ArmJoints::home();
            home.wrist_roll = self.joints.wrist_roll;
            let next = self.tracker.step(&self.joints, &home, dt);
            self.move_arm(next);
        } else {
            self.manipulate()?;
        }
        Ok(cmd)
    }

    fn move_arm(&mut self, next: ArmJoints<f64>) {
        let dt = self.sc.dt;
        let rate = [
            normalize_angle(next.theta_base - self.joints.theta_base),
            next.wrist_pitch - self.joints.wrist_pitch,
            next.wrist_roll - self.joints.wrist_roll,
        ]
        .iter()
        .fold(0.0f64, |m, d| m.max(d.abs() / dt));
        self.metrics.max_revolute_rate = self.metrics.max_revolute_rate.max(rate);
        self.joints = next;
    }

    fn begin_manipulation(&mut self) -> Result<()> {
        let (station, kind) = match self.mission.phase.target() {
            Some((s, k)) => (s, k.clone()),
            None => return Ok(()),
        };
        let st = self.station(station).clone();
        self.tracker.reset();
        let picking = matches!(self.mission.phase, Phase::AwaitPick { .. });
        if picking {
            let seed = self.sc.seed ^ self.tick.wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let dets = simulate_detections(
                &self.objects,
                &self.truth,
                &self.camera,
                Some(&self.world),
                self.sc.detection_noise,
                seed,
            );
            let station_local = self.truth.inverse_transform_point(st.location);
            let found = dets
                .iter()
                .filter(|d| d.kind == kind)
                .map(|d| (locate_object(d, &self.camera), d.confidence))
                .map(|(p, c)| (Point::new(p.x, p.y).distance(&station_local), p, c))
                .filter(|(d, _, _)| *d < DETECTION_RADIUS)
                .min_by(|a, b| a.0.total_cmp(&b.0));
            let Some((_, p, conf)) = found else {
                self.abandon();
                return Ok(());
            };
            let p_world = self.truth.transform_point(Point::new(p.x, p.y));
            let idx = self
                .objects
                .iter()
                .enumerate()
                .filter(|(_, o)| o.kind == kind)
                .min_by(|a, b| {
                    let da = Point::new(a.1.position.x, a.1.position.y).distance(&p_world);
                    let db = Point::new(b.1.position.x, b.1.position.y).distance(&p_world);
                    da.total_cmp(&db)
                })
                .map(|(i, _)| i)
                .expect("a detection implies an object of that kind");
            let obj = &self.objects[idx];
            let cloud: Vec<Point> =
                footprint_points(Point::new(obj.position.x, obj.position.y), obj.yaw, 0.12, 0.03, 9, 3)
                    .into_iter()
                    .map(|q| self.truth.inverse_transform_point(q))
                    .collect();
            let Ok(yaw) = pca_orientation(&cloud) else {
                self.abandon();
                return Ok(());
            };
            let seen = OrientedObject {
                kind: kind.clone(),
                position: p,
                yaw,
            };
            self.detection_log.push_str(&detection_log_line(self.t, &seen, conf));
            self.detection_log.push('\n');
            let target = to_mount_frame(&self.mount, Point::new(p.x, p.y), p.z, yaw);
            if !reachable(&target, &self.fsm.cfg.geom, &self.fsm.cfg.limits) {
                self.abandon();
                return Ok(());
            }
            self.fsm.start_pick();
            self.activity = Activity::Manipulate(Manip {
                pick: true,
                target,
                object: Some(idx),
            });
        } else {
            let local = self.est.inverse_transform_point(st.location);
            let target = to_mount_frame(
                &self.mount,
                local,
                TABLE_HEIGHT,
                normalize_axis(st.object_yaw - self.est.theta),
            );
            if !reachable(&target, &self.fsm.cfg.geom, &self.fsm.cfg.limits) {
                self.abandon();
                return Ok(());
            }
            self.fsm.start_place();
            self.activity = Activity::Manipulate(Manip {
                pick: false,
                target,
                object: None,
            });
        }
        Ok(())
    }

    fn manipulate(&mut self) -> Result<()> {
        let Activity::Manipulate(m) = &self.activity else {
            return Ok(());
        };
        let (pick, target, object) = (m.pick, m.target, m.object);
        let dt = self.sc.dt;
        let out = self.fsm.step(&self.joints, &target, dt);
        let next = self.tracker.step(&self.joints, &out.setpoints, dt);
        self.move_arm(next);
        self.arm_trace
            .push_str(&trace_line(self.t, out.phase, &self.joints, &out.errors));
        self.arm_trace.push('\n');
        match out.gripper {
            GripperCommand::Close => {
                let obj = object.map(|i| self.objects.remove(i));
                self.gripper.close_on(obj);
                if let Activity::Manipulate(m) = &mut self.activity {
                    m.object = None;
                }
            }
            GripperCommand::Open => {
                if let Some(mut obj) = self.gripper.release() {
                    let base = ArmMount {
                        pose: self.truth.compose(&self.mount.pose),
                        z: self.mount.z,
                    };
                    let ee = arm_fk(&self.joints, &self.fsm.cfg.geom, &base);
                    obj.position = Point3::new(ee.x, ee.y, ee.z);
                    obj.yaw = normalize_axis(ee.yaw);
                    self.objects.push(obj);
                }
            }
            GripperCommand::None => {}
        }
        match (pick, self.fsm.phase()) {
            (true, GraspPhase::Holding) => {
                mission_step(&mut self.mission, MissionEvent::PickDone)?;
                self.activity = Activity::Idle;
                self.tracker.reset();
                self.log_phase(None);
            }
            (false, GraspPhase::Idle) => {
                mission_step(&mut self.mission, MissionEvent::PlaceDone)?;
                self.metrics.tasks_completed += 1;
                self.activity = Activity::Idle;
                self.tracker.reset();
                self.log_phase(None);
            }
            (true, GraspPhase::Failed) => {
                if let Some(obj) = self.gripper.release() {
                    self.objects.push(obj);
                }
                self.fsm.reset();
                self.tracker.reset();
                self.abandon();
            }
            (false, GraspPhase::Failed) => {
                self.fsm.resume_holding();
                self.tracker.reset();
                self.abandon();
            }
            _ => {}
        }
        Ok(())
    }

    fn integrate(&mut self, cmd: Twist2D<f64>) {
        let dt = self.sc.dt;
        self.metrics.max_planar_speed = self.metrics.max_planar_speed.max(cmd.planar_speed());
        let prev = self.truth.position();
        self.truth = integrate_odometry(&self.truth, &cmd, dt);

        self.est = match self.sc.pose_source {
            PoseSource::GroundTruth => self.truth,
            PoseSource::DeadReckoning => {
                let mut wheels = inverse_kinematics(&cmd, &self.cfg).as_array();
                if let Some(n) = &self.encoder_noise {
                    for w in &mut wheels {
                        *w += n.sample(&mut self.rng);
                    }
                }
                let measured = forward_kinematics(&WheelSpeeds::from_array(wheels), &self.cfg);
                let moved = integrate_odometry(&self.est, &measured, dt);
                for g in &mut self.gyro {
                    let bias = self.gyro_noise.as_ref().map_or(0.0, |n| n.sample(&mut self.rng));
                    *g = normalize_angle(*g + (cmd.omega + bias) * dt);
                }
                let theta = fuse_heading(self.gyro[0], self.gyro[1], 0.5).unwrap_or(moved.theta);
                Pose { theta, ..moved }
            }
        };

        self.tick += 1;
        self.t = self.tick as f64 * dt;
        let pos = self.truth.position();
        self.metrics.total_distance += prev.distance(&pos);
        let clear = wall_clearance(&self.world, pos);
        self.metrics.min_wall_clearance = self.metrics.min_wall_clearance.min(clear);
        let contact = clear < self.cfg.robot_width / 2.0;
        if contact && !self.in_contact {
            self.metrics.collisions += 1;
        }
        self.in_contact = contact;
        self.trajectory.push(pos);
        let _ = writeln!(
            self.trajectory_csv,
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.t, self.truth.x, self.truth.y, self.truth.theta, cmd.vx, cmd.vy, cmd.omega
        );
    }
}
