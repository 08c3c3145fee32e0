//! Geometric primitives, the occupancy grid and its text format.

use std::fmt::{self, Write as _};

use crate::error::{Error, Result};
use crate::scalar::{normalize_angle, Real};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Real> Point2<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn norm(&self) -> T {
        self.x.hypot(self.y)
    }

    pub fn distance(&self, other: &Self) -> T {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn rotated(&self, theta: T) -> Self {
        let (s, c) = theta.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl<T: Real> core::ops::Sub for Point2<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl<T: Real> core::ops::Add for Point2<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.x + rhs.x, self.y + rhs.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Point3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }
}

/// Planar pose in the global frame. `theta` is kept in `(-π, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose2D<T> {
    pub x: T,
    pub y: T,
    pub theta: T,
}

impl<T: Real> Pose2D<T> {
    pub fn new(x: T, y: T, theta: T) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn position(&self) -> Point2<T> {
        Point2::new(self.x, self.y)
    }

    /// Map a point from this pose's local frame into the global frame.
    pub fn transform_point(&self, p_local: Point2<T>) -> Point2<T> {
        local_to_global(self, p_local)
    }

    /// Map a global point into this pose's local frame.
    pub fn inverse_transform_point(&self, p_global: Point2<T>) -> Point2<T> {
        (p_global - self.position()).rotated(-self.theta)
    }

    /// `self ∘ other`: `other` is expressed in the frame of `self`.
    pub fn compose(&self, other: &Self) -> Self {
        let p = self.transform_point(other.position());
        Self::new(p.x, p.y, self.theta + other.theta)
    }
}

pub fn local_to_global<T: Real>(pose: &Pose2D<T>, p_local: Point2<T>) -> Point2<T> {
    p_local.rotated(pose.theta) + pose.position()
}

/// Body-frame velocity: forward, left, counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist2D<T> {
    pub vx: T,
    pub vy: T,
    pub omega: T,
}

impl<T: Real> Twist2D<T> {
    pub fn new(vx: T, vy: T, omega: T) -> Self {
        Self { vx, vy, omega }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn planar_speed(&self) -> T {
        self.vx.hypot(self.vy)
    }

    pub fn is_finite(&self) -> bool {
        self.vx.is_finite() && self.vy.is_finite() && self.omega.is_finite()
    }
}

/// Physical parameters of the base.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldConfig<T> {
    pub robot_length: T,
    pub robot_width: T,
    pub max_velocity: T,
    pub wheel_radius: T,
    /// Half wheelbase along x.
    pub lx: T,
    /// Half track along y.
    pub ly: T,
    pub payload: T,
}

impl<T: Real> Default for WorldConfig<T> {
    fn default() -> Self {
        Self {
            robot_length: T::lit(0.60),
            robot_width: T::lit(0.42),
            max_velocity: T::lit(0.20),
            wheel_radius: T::lit(0.05),
            lx: T::lit(0.20),
            ly: T::lit(0.15),
            payload: T::lit(0.5),
        }
    }
}

impl<T: Real> WorldConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: T| v > T::zero() && v.is_finite();
        if pos(self.max_velocity) && pos(self.wheel_radius) && pos(self.lx) && pos(self.ly) {
            Ok(())
        } else {
            Err(Error::Scenario(
                "max_velocity, wheel_radius, lx and ly must be positive".into(),
            ))
        }
    }

    /// Radius of the circle circumscribing the footprint.
    pub fn circumscribed_radius(&self) -> T {
        (self.robot_length / T::lit(2.0)).hypot(self.robot_width / T::lit(2.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellState {
    Free,
    Occupied,
    Unknown,
}

impl CellState {
    pub fn to_char(self) -> char {
        match self {
            CellState::Free => '.',
            CellState::Occupied => '#',
            CellState::Unknown => '?',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            '.' => Some(CellState::Free),
            '#' => Some(CellState::Occupied),
            '?' => Some(CellState::Unknown),
            _ => None,
        }
    }
}

/// Grid index. Ordering is row-major (row, then column).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(col: usize, row: usize) -> Self {
        Self { row, col }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.col, self.row)
    }
}

/// Occupancy grid with its origin at the bottom-left corner; columns grow
/// along +x and rows along +y.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    width: usize,
    height: usize,
    resolution: f64,
    cells: Vec<CellState>,
}

pub const MAP_MAGIC: &str = "P_GRID";

impl GridMap {
    pub fn new(width: usize, height: usize, resolution: f64, fill: CellState) -> Self {
        assert!(
            resolution > 0.0 && resolution.is_finite(),
            "resolution must be positive"
        );
        Self {
            width,
            height,
            resolution,
            cells: vec![fill; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, col: i64, row: i64) -> bool {
        col >= 0 && row >= 0 && (col as usize) < self.width && (row as usize) < self.height
    }

    pub fn index(&self, cell: Cell) -> usize {
        debug_assert!(cell.col < self.width && cell.row < self.height);
        cell.row * self.width + cell.col
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new(index % self.width, index / self.width)
    }

    pub fn get(&self, cell: Cell) -> CellState {
        self.cells[self.index(cell)]
    }

    pub fn try_get(&self, col: i64, row: i64) -> Option<CellState> {
        self.contains(col, row)
            .then(|| self.cells[row as usize * self.width + col as usize])
    }

    pub fn set(&mut self, cell: Cell, state: CellState) {
        let i = self.index(cell);
        self.cells[i] = state;
    }

    pub fn cells(&self) -> &[CellState] {
        &self.cells
    }

    pub fn iter_cells(&self) -> impl Iterator<Item = (Cell, CellState)> + '_ {
        self.cells.iter().enumerate().map(|(i, &s)| (self.cell_at(i), s))
    }

    pub fn cell_center(&self, cell: Cell) -> Point2<f64> {
        Point2::new(
            (cell.col as f64 + 0.5) * self.resolution,
            (cell.row as f64 + 0.5) * self.resolution,
        )
    }

    /// Cell containing a world point, or `OutOfBounds`.
    pub fn world_to_cell(&self, p: Point2<f64>) -> Result<Cell> {
        let col = (p.x / self.resolution).floor();
        let row = (p.y / self.resolution).floor();
        if col.is_finite()
            && row.is_finite()
            && col >= 0.0
            && row >= 0.0
            && col < self.width as f64
            && row < self.height as f64
        {
            Ok(Cell::new(col as usize, row as usize))
        } else {
            Err(Error::OutOfBounds { x: p.x, y: p.y })
        }
    }

    /// Eight-connected neighbours inside the map.
    pub fn neighbors8(&self, cell: Cell) -> impl Iterator<Item = Cell> + '_ {
        const OFFSETS: [(i64, i64); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];
        OFFSETS.iter().filter_map(move |&(dc, dr)| {
            let c = cell.col as i64 + dc;
            let r = cell.row as i64 + dr;
            self.contains(c, r).then(|| Cell::new(c as usize, r as usize))
        })
    }

    /// Parse the `P_GRID` text format.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.split('\n');
        let header = lines.next().unwrap_or("");
        let mut fields = header.split(' ');
        if fields.next() != Some(MAP_MAGIC) {
            return Err(Error::parse(1, 1, format!("expected `{MAP_MAGIC}` header")));
        }
        let mut column = MAP_MAGIC.len() + 2;
        let mut next_field = |name: &str| -> Result<&str> {
            let f = fields
                .next()
                .ok_or_else(|| Error::parse(1, column, format!("missing {name}")))?;
            let at = column;
            column += f.len() + 1;
            if f.is_empty() {
                return Err(Error::parse(1, at, format!("empty {name}")));
            }
            Ok(f)
        };
        let width: usize = next_field("width")?
            .parse()
            .map_err(|_| Error::parse(1, MAP_MAGIC.len() + 2, "bad width"))?;
        let height: usize = next_field("height")?
            .parse()
            .map_err(|_| Error::parse(1, MAP_MAGIC.len() + 2, "bad height"))?;
        let res_str = next_field("resolution")?;
        let resolution: f64 = res_str
            .parse()
            .map_err(|_| Error::parse(1, header.len() - res_str.len() + 1, "bad resolution"))?;
        if fields.next().is_some() {
            return Err(Error::parse(1, header.len(), "trailing header fields"));
        }
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::parse(1, header.len(), "resolution must be positive"));
        }

        let mut map = GridMap::new(width, height, resolution, CellState::Unknown);
        for i in 0..height {
            let line_no = i + 2;
            let line = lines
                .next()
                .ok_or_else(|| Error::parse(line_no, 1, "missing grid row"))?;
            let row = height - 1 - i;
            let mut n = 0;
            for (col, ch) in line.chars().enumerate() {
                if col >= width {
                    return Err(Error::parse(line_no, col + 1, "row longer than width"));
                }
                let state = CellState::from_char(ch)
                    .ok_or_else(|| Error::parse(line_no, col + 1, format!("unexpected character {ch:?}")))?;
                map.set(Cell::new(col, row), state);
                n += 1;
            }
            if n != width {
                return Err(Error::parse(line_no, n + 1, "row shorter than width"));
            }
        }
        // Exactly one optional terminating newline.
        match (lines.next(), lines.next()) {
            (None, _) | (Some(""), None) => Ok(map),
            _ => Err(Error::parse(height + 2, 1, "unexpected trailing content")),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * (self.height + 1) + 32);
        let _ = writeln!(out, "{MAP_MAGIC} {} {} {}", self.width, self.height, self.resolution);
        for row in (0..self.height).rev() {
            for col in 0..self.width {
                out.push(self.get(Cell::new(col, row)).to_char());
            }
            out.push('\n');
        }
        out
    }
}

pub fn load_map(text: &str) -> Result<GridMap> {
    GridMap::from_text(text)
}

pub fn save_map(map: &GridMap) -> String {
    map.to_text()
}
