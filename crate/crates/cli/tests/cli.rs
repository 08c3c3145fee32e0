use std::path::Path;
use std::process::{Command, Output};

fn warebot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_warebot"))
        .args(args)
        .env_remove("SIM_LOG_LEVEL")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn empty_map(dir: &Path, w: usize, h: usize) -> String {
    let mut text = format!("P_GRID {w} {h} 1.0\n");
    for _ in 0..h {
        text.push_str(&".".repeat(w));
        text.push('\n');
    }
    let path = dir.join("empty.grid");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn warehouse() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios/warehouse/mission.scn")
        .to_str()
        .unwrap()
        .to_owned()
}

#[test]
fn plan_on_empty_map() {
    let dir = tempfile::tempdir().unwrap();
    let map = empty_map(dir.path(), 5, 5);
    let out = dir.path().join("plan.pgm");
    let o = warebot(&[
        "plan",
        "--map",
        &map,
        "--start",
        "0,0",
        "--goal",
        "4,4",
        "--k",
        "0",
        "--clearance",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("cost=5.656854\n"), "{text}");
    assert!(text.contains("\nexpanded=5\n"), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("node ")).count(), 5);
    let pgm = std::fs::read_to_string(out).unwrap();
    assert!(pgm.starts_with("P2\n5 5\n255\n"));
    // Path cells on the diagonal, highest row first.
    assert_eq!(pgm.lines().nth(3).unwrap(), "255 255 255 255 192");
    assert_eq!(pgm.lines().last().unwrap(), "192 255 255 255 255");
}

#[test]
fn plan_heap_and_linear_agree() {
    let dir = tempfile::tempdir().unwrap();
    let map = empty_map(dir.path(), 9, 7);
    let out = dir.path().join("p.pgm");
    let run = |kind: &str| {
        let o = warebot(&[
            "plan",
            "--map",
            &map,
            "--start",
            "1,1",
            "--goal",
            "7,5",
            "--clearance",
            "0",
            "--open-list",
            kind,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o)
    };
    assert_eq!(run("heap"), run("linear"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = warebot(&["plan", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_map_reports_path() {
    let o = warebot(&["map-render", "--map", "/no/such/dir/x.grid", "--out", "/tmp/unused.pgm"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr(&o).trim_end(), "error: map not found /no/such/dir/x.grid");
}

#[test]
fn sim_with_missing_map_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let scn = std::fs::read_to_string(warehouse()).unwrap();
    let path = dir.path().join("m.scn");
    std::fs::write(&path, scn.replace("map = map.grid", "map = gone.grid")).unwrap();
    let o = warebot(&["sim", "--scenario", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let expected = format!("error: map not found {}", dir.path().join("gone.grid").display());
    assert_eq!(stderr(&o).trim_end(), expected);
}

#[test]
fn invalid_endpoint_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let map = empty_map(dir.path(), 3, 3);
    let o = warebot(&[
        "plan",
        "--map",
        &map,
        "--start",
        "0,0",
        "--goal",
        "9,9",
        "--out",
        "/tmp/unused.pgm",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: "));
}

#[test]
fn map_render_writes_graymap() {
    let dir = tempfile::tempdir().unwrap();
    let map = dir.path().join("m.grid");
    std::fs::write(&map, "P_GRID 3 2 0.5\n?..\n..#\n").unwrap();
    let out = dir.path().join("m.pgm");
    let o = warebot(&[
        "map-render",
        "--map",
        map.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read_to_string(out).unwrap(),
        "P2\n3 2\n255\n128 255 255\n255 255 0"
    );
}

#[test]
fn sim_writes_outputs_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let o = warebot(&["sim", "--scenario", &warehouse(), "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("outcome=Done"), "{text}");
    assert!(text.contains("phase=GoFetch"), "{text}");
    for f in [
        "trajectory.csv",
        "mission.log",
        "arm.log",
        "detections.log",
        "metrics.txt",
        "map.pgm",
    ] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let metrics = std::fs::read_to_string(dir.path().join("metrics.txt")).unwrap();
    assert!(text.ends_with(&metrics));
}

#[test]
fn quiet_log_level_prints_nothing() {
    let o = Command::new(env!("CARGO_BIN_EXE_warebot"))
        .args(["sim", "--scenario", &warehouse()])
        .env("SIM_LOG_LEVEL", "quiet")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
}

#[test]
fn bench_prints_summary() {
    let o = warebot(&["bench", "--sizes", "30", "--trials", "3", "--seed", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let summary = text
        .lines()
        .find(|l| l.starts_with("summary map=30x30"))
        .expect("summary line");
    assert!(summary.contains("solved=3"), "{summary}");
    assert!(summary.contains("linear_over_heap="));
}
