//! Simulated range sensors over the ground-truth grid and the occupancy
//! mapper that builds the robot's own map from lidar scans.

use std::collections::{BTreeSet, VecDeque};
use std::f64::consts::{FRAC_PI_2, PI, TAU};

use crate::error::{Error, Result};
use crate::geometry::{Cell, CellState, GridMap, Point2, Pose2D};

pub type Pose = Pose2D<f64>;

/// Default lidar geometry.
pub const DEFAULT_BEAMS: usize = 360;
pub const DEFAULT_LIDAR_RANGE: f64 = 6.0;
/// Time-of-flight side/rear sensors.
pub const DEFAULT_TOF_RANGE: f64 = 4.0;

/// Number of consecutive free observations that clear an occupied mark.
pub const CLEAR_AFTER: u8 = 3;

const MIN_RANGE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Beam {
    /// Robot-frame angle in `[0, 2π)`.
    pub angle: f64,
    pub range: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LidarScan {
    pub beams: Vec<Beam>,
    pub max_range: f64,
}

impl LidarScan {
    pub fn is_hit(&self, beam: &Beam) -> bool {
        beam.range < self.max_range
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeReadings {
    pub left: f64,
    pub right: f64,
    pub back: f64,
    pub max_range: f64,
}

impl RangeReadings {
    /// Sensor robot-frame angles paired with readings.
    pub fn with_angles(&self) -> [(f64, f64); 3] {
        [(FRAC_PI_2, self.left), (-FRAC_PI_2, self.right), (PI, self.back)]
    }
}

/// Exact grid traversal of a ray. Yields each visited cell together with the
/// distance (meters) at which the ray enters it; the origin cell is entered
/// at 0. At an exact corner crossing both side cells are reported before the
/// diagonal one.
pub struct RayWalker<'a> {
    map: &'a GridMap,
    col: i64,
    row: i64,
    step_col: i64,
    step_row: i64,
    t_max_x: f64,
    t_max_y: f64,
    t_delta_x: f64,
    t_delta_y: f64,
    max_t: f64,
    queue: VecDeque<(i64, i64, f64)>,
    done: bool,
}

impl<'a> RayWalker<'a> {
    pub fn new(map: &'a GridMap, origin: Point2<f64>, heading: f64, length: f64) -> Self {
        let res = map.resolution();
        let ox = origin.x / res;
        let oy = origin.y / res;
        let (dy, dx) = heading.sin_cos();
        let col = ox.floor() as i64;
        let row = oy.floor() as i64;
        let axis = |o: f64, cell: i64, d: f64| -> (i64, f64, f64) {
            if d > 0.0 {
                (1, ((cell + 1) as f64 - o) / d, 1.0 / d)
            } else if d < 0.0 {
                (-1, (o - cell as f64) / -d, -1.0 / d)
            } else {
                (0, f64::INFINITY, f64::INFINITY)
            }
        };
        let (step_col, t_max_x, t_delta_x) = axis(ox, col, dx);
        let (step_row, t_max_y, t_delta_y) = axis(oy, row, dy);
        let mut queue = VecDeque::new();
        queue.push_back((col, row, 0.0));
        Self {
            map,
            col,
            row,
            step_col,
            step_row,
            t_max_x,
            t_max_y,
            t_delta_x,
            t_delta_y,
            max_t: length / res,
            queue,
            done: !map.contains(col, row),
        }
    }

    fn advance(&mut self) {
        let t;
        if self.t_max_x < self.t_max_y {
            t = self.t_max_x;
            self.t_max_x += self.t_delta_x;
            self.col += self.step_col;
        } else if self.t_max_y < self.t_max_x {
            t = self.t_max_y;
            self.t_max_y += self.t_delta_y;
            self.row += self.step_row;
        } else {
            t = self.t_max_x;
            if t.is_finite() && t <= self.max_t {
                self.queue.push_back((self.col + self.step_col, self.row, t));
                self.queue.push_back((self.col, self.row + self.step_row, t));
            }
            self.t_max_x += self.t_delta_x;
            self.t_max_y += self.t_delta_y;
            self.col += self.step_col;
            self.row += self.step_row;
        }
        if !t.is_finite() || t > self.max_t || !self.map.contains(self.col, self.row) {
            self.done = true;
        } else {
            self.queue.push_back((self.col, self.row, t));
        }
    }
}

impl Iterator for RayWalker<'_> {
    /// `(cell, entry distance in meters)`. Ends when the ray leaves the map
    /// or exceeds its length.
    type Item = (Cell, f64);

    fn next(&mut self) -> Option<Self::Item> {
        let res = self.map.resolution();
        loop {
            if let Some((c, r, t)) = self.queue.pop_front() {
                if self.map.contains(c, r) {
                    return Some((Cell::new(c as usize, r as usize), t * res));
                }
                continue;
            }
            if self.done {
                return None;
            }
            self.advance();
        }
    }
}

/// Distance along a ray to the first occupied cell boundary, clamped to
/// `max_range`. Leaving the map counts as no return.
pub fn cast_ray(map: &GridMap, origin: Point2<f64>, heading: f64, max_range: f64) -> f64 {
    RayWalker::new(map, origin, heading, max_range)
        .find(|&(cell, _)| map.get(cell) == CellState::Occupied)
        .map_or(max_range, |(_, t)| t.clamp(MIN_RANGE, max_range))
}

fn check_pose(world: &GridMap, pose: &Pose) -> Result<()> {
    match world.world_to_cell(pose.position()) {
        Ok(c) if world.get(c) == CellState::Occupied => Err(Error::PoseInObstacle),
        Ok(_) => Ok(()),
        Err(e) => Err(e),
    }
}

pub fn simulate_lidar(world: &GridMap, pose: &Pose, n_beams: usize, max_range: f64) -> Result<LidarScan> {
    assert!(n_beams >= 4, "lidar needs at least 4 beams");
    check_pose(world, pose)?;
    let step = TAU / n_beams as f64;
    let origin = pose.position();
    let beams = (0..n_beams)
        .map(|i| {
            let angle = i as f64 * step;
            Beam {
                angle,
                range: cast_ray(world, origin, pose.theta + angle, max_range),
            }
        })
        .collect();
    Ok(LidarScan { beams, max_range })
}

pub fn simulate_range_sensors(world: &GridMap, pose: &Pose, max_range: f64) -> Result<RangeReadings> {
    check_pose(world, pose)?;
    let origin = pose.position();
    let ray = |a: f64| cast_ray(world, origin, pose.theta + a, max_range);
    Ok(RangeReadings {
        left: ray(FRAC_PI_2),
        right: ray(-FRAC_PI_2),
        back: ray(PI),
        max_range,
    })
}

/// The robot's own map plus per-cell clearing counters.
#[derive(Debug, Clone)]
pub struct OccupancyMapper {
    map: GridMap,
    free_streak: Vec<u8>,
}

impl OccupancyMapper {
    pub fn new(map: GridMap) -> Self {
        let n = map.len();
        Self {
            map,
            free_streak: vec![0; n],
        }
    }

    pub fn unknown(width: usize, height: usize, resolution: f64) -> Self {
        Self::new(GridMap::new(width, height, resolution, CellState::Unknown))
    }

    pub fn map(&self) -> &GridMap {
        &self.map
    }

    pub fn into_map(self) -> GridMap {
        self.map
    }

    /// Integrate one scan taken from `pose`. Returns the cells whose state
    /// changed.
    pub fn update(&mut self, pose: &Pose, scan: &LidarScan) -> Vec<Cell> {
        let res = self.map.resolution();
        let eps = 1e-6 * res;
        let origin = pose.position();
        let mut free = BTreeSet::new();
        let mut occupied = BTreeSet::new();
        for beam in &scan.beams {
            let heading = pose.theta + beam.angle;
            let hit = scan.is_hit(beam);
            for (cell, t_enter) in RayWalker::new(&self.map, origin, heading, beam.range + eps) {
                if t_enter < beam.range - eps {
                    free.insert(cell);
                } else {
                    if hit {
                        occupied.insert(cell);
                    }
                    break;
                }
            }
        }
        let mut changed = Vec::new();
        for &cell in &occupied {
            let i = self.map.index(cell);
            self.free_streak[i] = 0;
            if self.map.get(cell) != CellState::Occupied {
                self.map.set(cell, CellState::Occupied);
                changed.push(cell);
            }
        }
        for &cell in free.difference(&occupied) {
            let i = self.map.index(cell);
            match self.map.get(cell) {
                CellState::Occupied => {
                    self.free_streak[i] += 1;
                    if self.free_streak[i] >= CLEAR_AFTER {
                        self.free_streak[i] = 0;
                        self.map.set(cell, CellState::Free);
                        changed.push(cell);
                    }
                }
                CellState::Unknown => {
                    self.map.set(cell, CellState::Free);
                    changed.push(cell);
                }
                CellState::Free => {}
            }
        }
        changed.sort();
        changed
    }
}

/// Functional form of [`OccupancyMapper::update`] for callers that keep the
/// map as a plain value (no clearing hysteresis carried across calls).
pub fn update_occupancy(own_map: &GridMap, pose: &Pose, scan: &LidarScan) -> GridMap {
    let mut m = OccupancyMapper::new(own_map.clone());
    m.update(pose, scan);
    m.into_map()
}
