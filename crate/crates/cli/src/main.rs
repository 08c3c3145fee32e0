use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use warebot_core::planning::{astar, bench_cases, compare_open_lists, distance_field, OpenListKind, PlannerParams};
use warebot_core::render::render;
use warebot_core::sim::{run_sim, LogLevel, Scenario};
use warebot_core::{Cell, Error, GridMap, Result};

#[derive(Parser, Debug)]
#[command(name = "warebot", version, about = "Warehouse robot planner and simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Plan a path between two cells and render it.
    Plan {
        #[arg(long)]
        map: PathBuf,
        /// Start cell as COL,ROW.
        #[arg(long, value_parser = parse_cell)]
        start: Cell,
        /// Goal cell as COL,ROW.
        #[arg(long, value_parser = parse_cell)]
        goal: Cell,
        /// Safety gain K.
        #[arg(long, default_value_t = warebot_core::planning::DEFAULT_SAFETY_GAIN)]
        k: f64,
        #[arg(long, default_value = "heap")]
        open_list: OpenListKind,
        /// Required distance from walls, meters.
        #[arg(long, default_value_t = warebot_core::planning::DEFAULT_CLEARANCE)]
        clearance: f64,
        /// Where to write the rendered plan.
        #[arg(long, default_value = "plan.pgm")]
        out: PathBuf,
    },
    /// Run a scenario file.
    Sim {
        #[arg(long)]
        scenario: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for trajectory, logs, metrics and the rendered map.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time the heap and linear open lists on random maps.
    Bench {
        /// Comma-separated square map sizes.
        #[arg(long, value_delimiter = ',', default_value = "100,250,500")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Fraction of occupied cells.
        #[arg(long, default_value_t = 0.2)]
        density: f64,
        #[arg(long, default_value_t = warebot_core::planning::DEFAULT_SAFETY_GAIN)]
        k: f64,
    },
    /// Render a map file as a portable graymap.
    MapRender {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_cell(s: &str) -> std::result::Result<Cell, String> {
    let (c, r) = s.split_once(',').ok_or("expected COL,ROW")?;
    let c = c.trim().parse().map_err(|_| format!("bad column '{c}'"))?;
    let r = r.trim().parse().map_err(|_| format!("bad row '{r}'"))?;
    Ok(Cell::new(c, r))
}

fn load_map(path: &Path) -> Result<GridMap> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MapNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    GridMap::from_text(&text)
}

fn plan(map: &Path, start: Cell, goal: Cell, params: PlannerParams, out: &Path) -> Result<String> {
    let map = load_map(map)?;
    let field = distance_field(&map);
    let plan = astar(&map, &field, start, goal, &params)?;
    let mut s = String::new();
    let _ = writeln!(s, "cost={:.6}", plan.total_cost);
    let _ = writeln!(s, "expanded={}", plan.expanded);
    let _ = writeln!(s, "length={:.6}", plan.path_length(map.resolution()));
    let cells: Vec<String> = plan.cells.iter().map(Cell::to_string).collect();
    let _ = writeln!(s, "cells={}", cells.join(" "));
    let wps: Vec<String> = plan
        .waypoints
        .iter()
        .map(|p| format!("({:.3},{:.3})", p.x, p.y))
        .collect();
    let _ = writeln!(s, "waypoints={}", wps.join(" "));
    for n in &plan.nodes {
        let _ = writeln!(s, "node {} g={:.6} h={:.6} s={:.6}", n.cell, n.g, n.h, n.s);
    }
    std::fs::write(out, render(&map, &[], &plan.cells))?;
    Ok(s)
}

fn sim(scenario: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<String> {
    let level = LogLevel::from_env()?;
    let mut sc = Scenario::load(scenario).map_err(|e| match e {
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
            Error::Scenario(format!("scenario not found {}", scenario.display()))
        }
        other => other,
    })?;
    if let Some(seed) = seed {
        sc.seed = seed;
    }
    let result = run_sim(&sc)?;
    if let Some(dir) = out {
        result.write_to(dir)?;
    }
    let mut s = String::new();
    if level >= LogLevel::Info {
        s.push_str(&result.mission_log);
    }
    if level >= LogLevel::Trace {
        s.push_str(&result.detection_log);
        s.push_str(&result.arm_trace);
    }
    if level >= LogLevel::Info {
        s.push_str(&result.metrics.to_text());
    }
    Ok(s)
}

fn bench(sizes: &[usize], trials: usize, seed: u64, density: f64, k: f64) -> Result<String> {
    if trials == 0 || sizes.iter().any(|&n| n < 2) || !(0.0..1.0).contains(&density) {
        return Err(Error::Scenario(
            "bench needs trials >= 1, sizes >= 2 and density in [0, 1)".into(),
        ));
    }
    let params = PlannerParams {
        k,
        clearance: 0.0,
        ..PlannerParams::default()
    };
    let mut s = String::new();
    for &n in sizes {
        let cases = bench_cases(n, trials, density, seed);
        let report = compare_open_lists(&cases, &params)?;
        s.push_str(&report.to_text());
        let med = |v| report.median_micros(v).map_or("-".to_string(), |m| format!("{m:.1}"));
        let ratio = report.speedup().map_or("-".to_string(), |r| format!("{r:.3}"));
        let _ = writeln!(
            s,
            "summary map={n}x{n} solved={} heap_median_micros={} linear_median_micros={} linear_over_heap={ratio}",
            report.records.len() / 2,
            med(OpenListKind::Heap),
            med(OpenListKind::Linear)
        );
    }
    Ok(s)
}

fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Plan {
            map,
            start,
            goal,
            k,
            open_list,
            clearance,
            out,
        } => {
            let params = PlannerParams {
                k,
                clearance,
                open_list,
                ..PlannerParams::default()
            };
            plan(&map, start, goal, params, &out)
        }
        Command::Sim { scenario, seed, out } => sim(&scenario, seed, out.as_deref()),
        Command::Bench {
            sizes,
            trials,
            seed,
            density,
            k,
        } => bench(&sizes, trials, seed, density, k),
        Command::MapRender { map, out } => {
            let m = load_map(&map)?;
            std::fs::write(&out, render(&m, &[], &[]))?;
            Ok(String::new())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
