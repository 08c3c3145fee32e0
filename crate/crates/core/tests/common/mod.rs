#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use warebot_core::{Cell, CellState, GridMap, Point2};

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn warehouse_scenario() -> PathBuf {
    repo_root().join("scenarios/warehouse/mission.scn")
}

/// Independent random map: each cell occupied with probability `density`.
pub fn random_grid(w: usize, h: usize, res: f64, density: f64, rng: &mut ChaCha8Rng) -> GridMap {
    let mut m = GridMap::new(w, h, res, CellState::Free);
    for r in 0..h {
        for c in 0..w {
            if rng.random_bool(density) {
                m.set(Cell::new(c, r), CellState::Occupied);
            }
        }
    }
    m
}

pub fn random_free_cell(m: &GridMap, rng: &mut ChaCha8Rng) -> Option<Cell> {
    let free: Vec<Cell> = m
        .iter_cells()
        .filter(|(_, s)| *s == CellState::Free)
        .map(|(c, _)| c)
        .collect();
    (!free.is_empty()).then(|| free[rng.random_range(0..free.len())])
}

/// Per-cell minimum over every non-free cell of the 8-connected step
/// distance (diagonal steps cost sqrt 2), computed pairwise.
pub fn brute_field(m: &GridMap) -> Vec<f64> {
    let walls: Vec<Cell> = m
        .iter_cells()
        .filter(|(_, s)| *s != CellState::Free)
        .map(|(c, _)| c)
        .collect();
    m.iter_cells()
        .map(|(c, _)| {
            walls
                .iter()
                .map(|w| {
                    let dx = (c.col as f64 - w.col as f64).abs();
                    let dy = (c.row as f64 - w.row as f64).abs();
                    (dx.min(dy) * std::f64::consts::SQRT_2 + (dx - dy).abs()) * m.resolution()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

#[derive(PartialEq)]
struct Item(f64, usize);
impl Eq for Item {}
impl Ord for Item {
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
    }
}
impl PartialOrd for Item {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Plain Dijkstra over the planner's graph: free cells with clearance,
/// 8-connected, no diagonal past a blocked orthogonal, edge cost
/// move + k / d(target). Returns the optimal cost or `None`.
pub fn dijkstra(m: &GridMap, field: &[f64], start: Cell, goal: Cell, k: f64, clearance: f64) -> Option<f64> {
    let (w, h) = (m.width() as i64, m.height() as i64);
    let idx = |c: i64, r: i64| (r * w + c) as usize;
    let ok = |c: i64, r: i64| {
        c >= 0
            && r >= 0
            && c < w
            && r < h
            && m.get(Cell::new(c as usize, r as usize)) == CellState::Free
            && field[idx(c, r)] > clearance
    };
    if !ok(start.col as i64, start.row as i64) || !ok(goal.col as i64, goal.row as i64) {
        return None;
    }
    let mut dist = vec![f64::INFINITY; (w * h) as usize];
    let s = idx(start.col as i64, start.row as i64);
    dist[s] = 0.0;
    let mut pq = BinaryHeap::from([Item(0.0, s)]);
    while let Some(Item(d, i)) = pq.pop() {
        if d > dist[i] {
            continue;
        }
        let (c, r) = ((i as i64) % w, (i as i64) / w);
        if c == goal.col as i64 && r == goal.row as i64 {
            return Some(d);
        }
        for dr in -1..=1i64 {
            for dc in -1..=1i64 {
                if (dc, dr) == (0, 0) || !ok(c + dc, r + dr) {
                    continue;
                }
                let diag = dc != 0 && dr != 0;
                if diag && !(ok(c + dc, r) && ok(c, r + dr)) {
                    continue;
                }
                let j = idx(c + dc, r + dr);
                let mv = if diag { std::f64::consts::SQRT_2 } else { 1.0 } * m.resolution();
                let nd = d + mv + if k == 0.0 { 0.0 } else { k / field[j] };
                if nd < dist[j] {
                    dist[j] = nd;
                    pq.push(Item(nd, j));
                }
            }
        }
    }
    None
}

/// Distance to the first occupied cell along a ray, by marching in steps
/// of `res / 20`. Leaving the map counts as no return.
pub fn march(m: &GridMap, origin: Point2<f64>, heading: f64, max_range: f64) -> f64 {
    let step = m.resolution() / 20.0;
    let (s, c) = heading.sin_cos();
    let mut t = 0.0;
    while t <= max_range {
        let p = Point2::new(origin.x + t * c, origin.y + t * s);
        match m.world_to_cell(p) {
            Ok(cell) if m.get(cell) == CellState::Occupied => return t,
            Ok(_) => {}
            Err(_) => return max_range,
        }
        t += step;
    }
    max_range
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
