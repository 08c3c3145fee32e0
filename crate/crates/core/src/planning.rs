//! Wall-distance field and A* search with a safety surcharge.
//!
//! A node's priority is `J = G + H + S`, where `H` is the Euclidean
//! cell-center distance to the goal and `S = K / d` penalises cells close to
//! walls. In the default [`SafetyMode::Accumulated`] mode the surcharge for
//! entering a cell is folded into the edge cost, so `G` already carries it
//! and `S` is zero at pop time.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::geometry::{Cell, CellState, GridMap, Point2};
use crate::sensing::RayWalker;

pub const DEFAULT_SAFETY_GAIN: f64 = 0.05;
/// Circumscribed radius of the 0.60 m x 0.42 m footprint.
pub const DEFAULT_CLEARANCE: f64 = 0.366;

/// Per-cell center-to-center distance (meters) to the nearest blocking cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    width: usize,
    height: usize,
    resolution: f64,
    d: Vec<f64>,
}

impl DistanceField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn get(&self, cell: Cell) -> f64 {
        self.d[cell.row * self.width + cell.col]
    }

    pub fn values(&self) -> &[f64] {
        &self.d
    }

    /// Distance at a world point, `None` outside the grid.
    pub fn at_point(&self, p: Point2<f64>) -> Option<f64> {
        let c = (p.x / self.resolution).floor();
        let r = (p.y / self.resolution).floor();
        (c >= 0.0 && r >= 0.0 && c < self.width as f64 && r < self.height as f64)
            .then(|| self.d[r as usize * self.width + c as usize])
    }
}

#[derive(Clone, Copy, PartialEq)]
struct FieldEntry {
    d: f64,
    idx: usize,
}

impl Eq for FieldEntry {}

impl Ord for FieldEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.d.total_cmp(&self.d).then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for FieldEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Brushfire from every occupied or unknown cell over 8-connectivity with
/// step costs `{1, √2}·resolution`.
pub fn distance_field(map: &GridMap) -> DistanceField {
    let res = map.resolution();
    let mut d = vec![f64::INFINITY; map.len()];
    let mut heap = BinaryHeap::new();
    for (i, &s) in map.cells().iter().enumerate() {
        if s != CellState::Free {
            d[i] = 0.0;
            heap.push(FieldEntry { d: 0.0, idx: i });
        }
    }
    while let Some(FieldEntry { d: di, idx }) = heap.pop() {
        if di > d[idx] {
            continue;
        }
        let cell = map.cell_at(idx);
        for n in map.neighbors8(cell) {
            let step = if n.col != cell.col && n.row != cell.row {
                std::f64::consts::SQRT_2 * res
            } else {
                res
            };
            let j = map.index(n);
            let nd = di + step;
            if nd < d[j] {
                d[j] = nd;
                heap.push(FieldEntry { d: nd, idx: j });
            }
        }
    }
    DistanceField {
        width: map.width(),
        height: map.height(),
        resolution: res,
        d,
    }
}

/// `K / d`. Undefined on a wall.
pub fn safety_cost(d: f64, k: f64) -> Result<f64> {
    if d <= 0.0 {
        return Err(Error::WallContact);
    }
    if k == 0.0 {
        return Ok(0.0);
    }
    Ok(k / d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpenListKind {
    Heap,
    Linear,
}

impl OpenListKind {
    pub fn name(self) -> &'static str {
        match self {
            OpenListKind::Heap => "heap",
            OpenListKind::Linear => "linear",
        }
    }
}

impl fmt::Display for OpenListKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for OpenListKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "heap" => Ok(OpenListKind::Heap),
            "linear" => Ok(OpenListKind::Linear),
            other => Err(Error::Scenario(format!("unknown open list `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SafetyMode {
    /// Surcharge added to every edge entering a cell.
    Accumulated,
    /// Surcharge of the node itself only, added at priority time.
    NodeLocal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerParams {
    pub k: f64,
    pub clearance: f64,
    pub open_list: OpenListKind,
    pub safety_mode: SafetyMode,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            k: DEFAULT_SAFETY_GAIN,
            clearance: DEFAULT_CLEARANCE,
            open_list: OpenListKind::Heap,
            safety_mode: SafetyMode::Accumulated,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanNode {
    pub cell: Cell,
    pub g: f64,
    pub h: f64,
    pub s: f64,
    pub parent: Option<Cell>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub cells: Vec<Cell>,
    pub nodes: Vec<PlanNode>,
    pub total_cost: f64,
    pub expanded: usize,
    pub waypoints: Vec<Point2<f64>>,
}

impl PlanResult {
    /// Sum of move costs along the path, without the safety surcharge.
    pub fn path_length(&self, resolution: f64) -> f64 {
        path_length(&self.cells, resolution)
    }
}

pub fn path_length(cells: &[Cell], resolution: f64) -> f64 {
    cells.windows(2).map(|w| move_cost(w[0], w[1], resolution)).sum()
}

fn move_cost(a: Cell, b: Cell, res: f64) -> f64 {
    if a.col != b.col && a.row != b.row {
        std::f64::consts::SQRT_2 * res
    } else {
        res
    }
}

/// Whether the planner may occupy `cell`.
pub fn traversable(map: &GridMap, field: &DistanceField, cell: Cell, clearance: f64) -> bool {
    map.get(cell) == CellState::Free && field.get(cell) > clearance
}

/// Neighbours reachable in one move, honouring the no-corner-cutting rule.
pub fn successors<'a>(
    map: &'a GridMap,
    field: &'a DistanceField,
    cell: Cell,
    clearance: f64,
) -> impl Iterator<Item = Cell> + 'a {
    map.neighbors8(cell).filter(move |&n| {
        if !traversable(map, field, n, clearance) {
            return false;
        }
        if n.col != cell.col && n.row != cell.row {
            traversable(map, field, Cell::new(n.col, cell.row), clearance)
                && traversable(map, field, Cell::new(cell.col, n.row), clearance)
        } else {
            true
        }
    })
}

/// Open-list entry. Smaller key pops first: lower J, then lower h, then
/// row-major cell order.
#[derive(Clone, Copy, Debug)]
struct OpenEntry {
    f: f64,
    h: f64,
    idx: usize,
    g: f64,
}

impl OpenEntry {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.f
            .total_cmp(&other.f)
            .then_with(|| self.h.total_cmp(&other.h))
            .then_with(|| self.idx.cmp(&other.idx))
    }
}

impl PartialEq for OpenEntry {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Equal
    }
}

impl Eq for OpenEntry {}

impl Ord for OpenEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.key_cmp(self)
    }
}

impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

trait OpenList {
    fn push(&mut self, e: OpenEntry);
    fn pop(&mut self) -> Option<OpenEntry>;
}

#[derive(Default)]
struct HeapOpen(BinaryHeap<OpenEntry>);

impl OpenList for HeapOpen {
    fn push(&mut self, e: OpenEntry) {
        self.0.push(e);
    }

    fn pop(&mut self) -> Option<OpenEntry> {
        self.0.pop()
    }
}

/// Unsorted vector scanned for the minimum on every pop.
#[derive(Default)]
struct LinearOpen(Vec<OpenEntry>);

impl OpenList for LinearOpen {
    fn push(&mut self, e: OpenEntry) {
        self.0.push(e);
    }

    fn pop(&mut self) -> Option<OpenEntry> {
        let (best, _) = self.0.iter().enumerate().min_by(|a, b| a.1.key_cmp(b.1))?;
        Some(self.0.swap_remove(best))
    }
}

pub fn astar(
    map: &GridMap,
    field: &DistanceField,
    start: Cell,
    goal: Cell,
    params: &PlannerParams,
) -> Result<PlanResult> {
    match params.open_list {
        OpenListKind::Heap => astar_with(map, field, start, goal, params, HeapOpen::default()),
        OpenListKind::Linear => astar_with(map, field, start, goal, params, LinearOpen::default()),
    }
}

fn check_endpoint(map: &GridMap, field: &DistanceField, cell: Cell, clearance: f64, what: &str) -> Result<()> {
    if cell.col >= map.width() || cell.row >= map.height() {
        return Err(Error::InvalidEndpoint(format!("{what} {cell} outside map")));
    }
    if map.get(cell) != CellState::Free {
        return Err(Error::InvalidEndpoint(format!("{what} {cell} is not free")));
    }
    if field.get(cell) <= clearance {
        return Err(Error::InvalidEndpoint(format!(
            "{what} {cell} is within clearance of a wall"
        )));
    }
    Ok(())
}

fn astar_with<O: OpenList>(
    map: &GridMap,
    field: &DistanceField,
    start: Cell,
    goal: Cell,
    params: &PlannerParams,
    mut open: O,
) -> Result<PlanResult> {
    assert_eq!(
        (map.width(), map.height()),
        (field.width(), field.height()),
        "field does not match map"
    );
    check_endpoint(map, field, start, params.clearance, "start")?;
    check_endpoint(map, field, goal, params.clearance, "goal")?;

    let res = map.resolution();
    let goal_c = map.cell_center(goal);
    let heuristic = |c: Cell| map.cell_center(c).distance(&goal_c);
    let surcharge = |c: Cell| safety_cost(field.get(c), params.k).unwrap_or(f64::INFINITY);
    let node_local = params.safety_mode == SafetyMode::NodeLocal;

    let n = map.len();
    let mut g = vec![f64::INFINITY; n];
    let mut parent: Vec<Option<usize>> = vec![None; n];
    let mut closed = vec![false; n];
    let si = map.index(start);
    let gi = map.index(goal);
    g[si] = 0.0;
    let h0 = heuristic(start);
    let s0 = if node_local { surcharge(start) } else { 0.0 };
    open.push(OpenEntry {
        f: h0 + s0,
        h: h0,
        idx: si,
        g: 0.0,
    });
    let mut expanded = 0usize;

    while let Some(e) = open.pop() {
        if closed[e.idx] || e.g > g[e.idx] {
            continue;
        }
        closed[e.idx] = true;
        expanded += 1;
        if e.idx == gi {
            break;
        }
        let cell = map.cell_at(e.idx);
        for nb in successors(map, field, cell, params.clearance) {
            let j = map.index(nb);
            if closed[j] {
                continue;
            }
            let mut step = move_cost(cell, nb, res);
            if !node_local {
                step += surcharge(nb);
            }
            let ng = g[e.idx] + step;
            if ng < g[j] {
                g[j] = ng;
                parent[j] = Some(e.idx);
                let h = heuristic(nb);
                let s = if node_local { surcharge(nb) } else { 0.0 };
                open.push(OpenEntry {
                    f: ng + h + s,
                    h,
                    idx: j,
                    g: ng,
                });
            }
        }
    }

    if !closed[gi] {
        return Err(Error::NoPath);
    }
    let mut idxs = vec![gi];
    while let Some(p) = parent[*idxs.last().unwrap()] {
        idxs.push(p);
    }
    idxs.reverse();
    let cells: Vec<Cell> = idxs.iter().map(|&i| map.cell_at(i)).collect();
    let nodes = idxs
        .iter()
        .map(|&i| {
            let c = map.cell_at(i);
            PlanNode {
                cell: c,
                g: g[i],
                h: if i == gi { 0.0 } else { heuristic(c) },
                s: if node_local { surcharge(c) } else { 0.0 },
                parent: parent[i].map(|p| map.cell_at(p)),
            }
        })
        .collect::<Vec<_>>();
    let last = nodes.last().expect("path has a goal node");
    let total_cost = last.g + last.s;
    let waypoints = simplify_path(&cells, map, field, params.clearance);
    Ok(PlanResult {
        cells,
        nodes,
        total_cost,
        expanded,
        waypoints,
    })
}

/// Whether every cell the straight segment `a → b` passes through is
/// traversable. Grid corners touched exactly count both side cells.
pub fn segment_clear(map: &GridMap, field: &DistanceField, a: Point2<f64>, b: Point2<f64>, clearance: f64) -> bool {
    let d = b - a;
    let ends_ok = [a, b].iter().all(|&p| {
        map.world_to_cell(p)
            .is_ok_and(|c| traversable(map, field, c, clearance))
    });
    ends_ok && RayWalker::new(map, a, d.y.atan2(d.x), d.norm()).all(|(c, _)| traversable(map, field, c, clearance))
}

/// Greedy line-of-sight shortcutting of a cell path into waypoints at cell
/// centers.
pub fn simplify_path(cells: &[Cell], map: &GridMap, field: &DistanceField, clearance: f64) -> Vec<Point2<f64>> {
    let Some(&first) = cells.first() else {
        return Vec::new();
    };
    let centers: Vec<_> = cells.iter().map(|&c| map.cell_center(c)).collect();
    let mut out = vec![map.cell_center(first)];
    let mut anchor = 0;
    while anchor + 1 < centers.len() {
        let mut next = anchor + 1;
        for j in (anchor + 2..centers.len()).rev() {
            if segment_clear(map, field, centers[anchor], centers[j], clearance) {
                next = j;
                break;
            }
        }
        out.push(centers[next]);
        anchor = next;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub variant: OpenListKind,
    pub width: usize,
    pub height: usize,
    pub trial: usize,
    pub cost: f64,
    pub expanded: usize,
    pub micros: u128,
}

impl fmt::Display for BenchRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "variant={} map={}x{} trial={} cost={:.6} expanded={} micros={}",
            self.variant, self.width, self.height, self.trial, self.cost, self.expanded, self.micros
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchReport {
    pub records: Vec<BenchRecord>,
}

impl BenchReport {
    fn micros(&self, v: OpenListKind) -> Vec<u128> {
        let mut t: Vec<_> = self
            .records
            .iter()
            .filter(|r| r.variant == v)
            .map(|r| r.micros)
            .collect();
        t.sort_unstable();
        t
    }

    pub fn median_micros(&self, v: OpenListKind) -> Option<f64> {
        let t = self.micros(v);
        if t.is_empty() {
            return None;
        }
        let m = t.len() / 2;
        Some(if t.len() % 2 == 1 {
            t[m] as f64
        } else {
            (t[m - 1] + t[m]) as f64 / 2.0
        })
    }

    /// Median linear time over median heap time.
    pub fn speedup(&self) -> Option<f64> {
        Some(self.median_micros(OpenListKind::Linear)? / self.median_micros(OpenListKind::Heap)?.max(1.0))
    }

    pub fn to_text(&self) -> String {
        self.records.iter().map(|r| format!("{r}\n")).collect()
    }
}

/// One benchmark instance: a map plus endpoints.
#[derive(Debug, Clone)]
pub struct BenchCase {
    pub map: GridMap,
    pub start: Cell,
    pub goal: Cell,
}

/// Runs both open-list variants on every case, serially, and checks they
/// agree exactly on cost and expansions. Unsolvable cases are skipped.
pub fn compare_open_lists(cases: &[BenchCase], params: &PlannerParams) -> Result<BenchReport> {
    let mut report = BenchReport::default();
    for (trial, case) in cases.iter().enumerate() {
        let field = distance_field(&case.map);
        let mut results = Vec::with_capacity(2);
        for variant in [OpenListKind::Heap, OpenListKind::Linear] {
            let p = PlannerParams {
                open_list: variant,
                ..*params
            };
            let t0 = Instant::now();
            let r = astar(&case.map, &field, case.start, case.goal, &p);
            let micros = t0.elapsed().as_micros();
            match r {
                Ok(plan) => {
                    report.records.push(BenchRecord {
                        variant,
                        width: case.map.width(),
                        height: case.map.height(),
                        trial,
                        cost: plan.total_cost,
                        expanded: plan.expanded,
                        micros,
                    });
                    results.push(plan);
                }
                Err(Error::NoPath) => break,
                Err(e) => return Err(e),
            }
        }
        if let [a, b] = results.as_slice() {
            assert_eq!(a.total_cost, b.total_cost, "open-list variants disagree on cost");
            assert_eq!(a.expanded, b.expanded, "open-list variants disagree on expansions");
        } else if results.len() == 1 {
            report.records.pop();
        }
    }
    Ok(report)
}

/// Random grid where each cell is occupied with probability `density`,
/// keeping the 3x3 blocks at the two far corners free.
pub fn random_map(width: usize, height: usize, resolution: f64, density: f64, seed: u64) -> GridMap {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut m = GridMap::new(width, height, resolution, CellState::Free);
    for row in 0..height {
        for col in 0..width {
            let corner = (col < 3 && row < 3) || (col + 3 >= width && row + 3 >= height);
            if !corner && rng.random_bool(density) {
                m.set(Cell::new(col, row), CellState::Occupied);
            }
        }
    }
    m
}

/// Up to `trials` solvable square random maps of side `size`, corner to
/// corner. Unsolvable draws are skipped; at most `10 * trials` are tried.
pub fn bench_cases(size: usize, trials: usize, density: f64, seed: u64) -> Vec<BenchCase> {
    let params = PlannerParams {
        k: 0.0,
        clearance: 0.0,
        ..PlannerParams::default()
    };
    let mut out = Vec::with_capacity(trials);
    for i in 0..10 * trials as u64 {
        if out.len() == trials {
            break;
        }
        let case = BenchCase {
            map: random_map(size, size, 1.0, density, seed.wrapping_add(i)),
            start: Cell::new(0, 0),
            goal: Cell::new(size - 1, size - 1),
        };
        if astar(&case.map, &distance_field(&case.map), case.start, case.goal, &params).is_ok() {
            out.push(case);
        }
    }
    out
}
