mod common;

use std::f64::consts::TAU;
use std::path::Path;

use warebot_core::control::{FollowMode, FollowerConfig, PathFollower};
use warebot_core::kinematics::integrate_odometry;
use warebot_core::sim::{run_sim, Outcome, Scenario};
use warebot_core::{Cell, CellState, GridMap, Point, Pose, Twist, WorldConfig};

use common::warehouse_scenario;

#[test]
fn follower_finishes_two_metre_segment() {
    let cfg = WorldConfig::default();
    let start = Pose::new(0.5, 0.5, 0.0);
    let goal = Point::new(2.5, 0.5);
    let mut follower = PathFollower::new(FollowerConfig::default(), &start, vec![start.position(), goal], 0.0);
    let (mut pose, dt) = (start, 0.02);
    let mut t = 0.0;
    while t < 60.0 {
        let (cmd, status) = follower.step(&pose, &cfg, dt);
        if status.mode == FollowMode::GoalReached {
            break;
        }
        assert!(cmd.planar_speed() <= cfg.max_velocity + 1e-12);
        pose = integrate_odometry(&pose, &cmd, dt);
        t += dt;
    }
    assert!(t < 60.0, "took {t} s");
    // 2 m at 0.2 m/s cannot take less than 10 s.
    assert!(t >= 10.0 - 1e-9, "finished impossibly fast: {t} s");
    assert!(pose.position().distance(&goal) <= 0.05, "ended at {pose:?}");
}

fn parse_row(line: &str) -> (f64, Pose, Twist) {
    let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
    (
        v[0],
        Pose {
            x: v[1],
            y: v[2],
            theta: v[3],
        },
        Twist::new(v[4], v[5], v[6]),
    )
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

#[test]
fn trajectory_rows_follow_the_motion_model() {
    let sc = Scenario::load(&warehouse_scenario()).unwrap();
    let out = run_sim(&sc).unwrap();
    let rows: Vec<_> = out.trajectory_csv.lines().skip(1).map(parse_row).collect();
    assert!(!rows.is_empty());

    // Rows are printed to 6 decimals, so each replayed step carries the
    // rounding of the previous row.
    let tol = 2e-6;
    let mut prev = sc.start;
    let mut path = 0.0;
    for (i, &(t, pose, cmd)) in rows.iter().enumerate() {
        assert!((t - (i + 1) as f64 * sc.dt).abs() < 1e-6);
        let expect = integrate_odometry(&prev, &cmd, sc.dt);
        assert!(
            (expect.x - pose.x).abs() < tol
                && (expect.y - pose.y).abs() < tol
                && angle_gap(expect.theta, pose.theta) < tol,
            "row {i}: {pose:?} vs replayed {expect:?}"
        );
        path += prev.position().distance(&pose.position());
        prev = pose;
    }

    let m = &out.metrics;
    let crow = sc.start.position().distance(&prev.position());
    assert!(m.total_distance >= crow);
    assert!((m.total_distance - path).abs() < 1e-3, "{} vs {path}", m.total_distance);
    assert!((m.sim_time - rows.len() as f64 * sc.dt).abs() < 1e-9);
}

fn write_room(dir: &Path) {
    let (w, h) = (80, 60);
    let mut m = GridMap::new(w, h, 0.05, CellState::Free);
    for c in 0..w {
        m.set(Cell::new(c, 0), CellState::Occupied);
        m.set(Cell::new(c, h - 1), CellState::Occupied);
    }
    for r in 0..h {
        m.set(Cell::new(0, r), CellState::Occupied);
        m.set(Cell::new(w - 1, r), CellState::Occupied);
    }
    std::fs::write(dir.join("room.grid"), m.to_text()).unwrap();
}

/// A 4 m x 3 m room with one bolt to carry from the east wall to the north
/// west corner. `extra` lines are appended to the global section.
fn room_scenario(dir: &Path, extra: &str) -> Scenario {
    write_room(dir);
    let text = format!(
        "map = room.grid\nstart = 0.6, 1.0, 0\ndt = 0.02\nmax_sim_time = 300\nseed = 3\n{extra}\
         station = 1\nlocation = 3.6, 1.0\napproach = 3.2, 1.0\npresent = bolt\ndesired =\nobject_yaw = 0.4\n\
         station = 2\nlocation = 0.6, 2.55\napproach = 0.6, 2.15\npresent =\ndesired = bolt\nobject_yaw = -0.2\n"
    );
    Scenario::parse(&text, dir).unwrap()
}

#[test]
fn single_transfer_completes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_sim(&room_scenario(dir.path(), "")).unwrap();
    let m = &out.metrics;
    assert_eq!(m.outcome, Outcome::Done, "{}", out.mission_log);
    assert_eq!(m.tasks_completed, 1);
    assert_eq!(m.replans, 0);
    assert_eq!(m.collisions, 0);
    assert!(m.max_planar_speed <= 0.2);
    // Straight lines between the nominal stops bound the distance driven.
    // A stop is a cell center (within 0.036 m of the nominal point) reached
    // to within the 0.05 m capture radius, so each stop may sit 0.086 m off;
    // the first stop counts twice.
    let legs =
        Point::new(0.6, 1.0).distance(&Point::new(3.2, 1.0)) + Point::new(3.2, 1.0).distance(&Point::new(0.6, 2.15));
    let slack = 3.0 * (0.036 + 0.05);
    assert!(m.total_distance >= legs - slack, "{} < {legs}", m.total_distance);
}

#[test]
fn hidden_obstacle_forces_a_replan() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_sim(&room_scenario(dir.path(), "obstacle = 1.8, 0.4, 2.2, 1.6\n")).unwrap();
    let m = &out.metrics;
    assert_eq!(m.outcome, Outcome::Done, "{}", out.mission_log);
    assert!(m.replans >= 1, "no replan recorded");
    assert_eq!(m.collisions, 0);
    // The robot never drove through the block.
    for p in &out.trajectory {
        assert!(
            !(p.x > 1.8 && p.x < 2.2 && p.y > 0.4 && p.y < 1.6),
            "inside obstacle at {p:?}"
        );
    }
    assert!(
        out.own_map.get(Cell::new(40, 20)) == CellState::Occupied
            || out.own_map.get(Cell::new(36, 20)) == CellState::Occupied
    );
}

#[test]
fn seeds_control_noise() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc = room_scenario(
        dir.path(),
        "encoder_noise = 0.02\ngyro_noise = 0.01\ndetection_noise = 0.002\n",
    );
    sc.max_sim_time = 20.0;
    let a = run_sim(&sc).unwrap();
    let b = run_sim(&sc).unwrap();
    assert_eq!(a.trajectory_csv, b.trajectory_csv);
    assert_eq!(a.mission_log, b.mission_log);
    sc.seed += 1;
    let c = run_sim(&sc).unwrap();
    assert_ne!(a.trajectory_csv, c.trajectory_csv);
}

#[test]
fn time_limit_stops_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc = room_scenario(dir.path(), "");
    sc.max_sim_time = 5.0;
    let out = run_sim(&sc).unwrap();
    assert_eq!(out.metrics.outcome, Outcome::TimedOut);
    assert!((out.metrics.sim_time - 5.0).abs() < 1e-9);
    assert_eq!(out.metrics.tasks_completed, 0);
}

#[test]
fn outputs_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_sim(&room_scenario(dir.path(), "")).unwrap();
    let target = dir.path().join("out");
    std::fs::create_dir_all(&target).unwrap();
    out.write_to(&target).unwrap();
    for f in [
        "trajectory.csv",
        "mission.log",
        "arm.log",
        "detections.log",
        "metrics.txt",
        "map.pgm",
    ] {
        assert!(target.join(f).exists(), "{f} missing");
    }
    let pgm = std::fs::read_to_string(target.join("map.pgm")).unwrap();
    assert!(pgm.starts_with("P2\n80 60\n255\n"));
    assert_eq!(
        std::fs::read_to_string(target.join("metrics.txt")).unwrap(),
        out.metrics.to_text()
    );
}
