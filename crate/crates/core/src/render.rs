//! ASCII portable graymap rendering of a grid with path and trajectory overlays.

use crate::geometry::{Cell, CellState, GridMap, Point2};

pub const OCCUPIED: u8 = 0;
pub const UNKNOWN: u8 = 128;
pub const FREE: u8 = 255;
pub const TRAJECTORY: u8 = 64;
pub const PATH: u8 = 192;

/// Gray levels per cell, row-major from row 0. Trajectory samples win over
/// path cells, which win over the base map.
pub fn gray_levels(map: &GridMap, trajectory: &[Point2<f64>], path: &[Cell]) -> Vec<u8> {
    let mut px: Vec<u8> = map
        .cells()
        .iter()
        .map(|c| match c {
            CellState::Occupied => OCCUPIED,
            CellState::Unknown => UNKNOWN,
            CellState::Free => FREE,
        })
        .collect();
    for &c in path {
        if c.col < map.width() && c.row < map.height() {
            px[map.index(c)] = PATH;
        }
    }
    for &p in trajectory {
        if let Ok(c) = map.world_to_cell(p) {
            px[map.index(c)] = TRAJECTORY;
        }
    }
    px
}

/// `P2\n<w> <h>\n255\n` followed by the rows, highest row first, values
/// separated by single spaces and rows by newlines.
pub fn render(map: &GridMap, trajectory: &[Point2<f64>], path: &[Cell]) -> String {
    let px = gray_levels(map, trajectory, path);
    let (w, h) = (map.width(), map.height());
    let rows: Vec<String> = (0..h)
        .rev()
        .map(|r| {
            px[r * w..(r + 1) * w]
                .iter()
                .map(u8::to_string)
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    format!("P2\n{w} {h}\n255\n{}", rows.join("\n"))
}
