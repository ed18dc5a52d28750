use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_uasplan"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"))
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("uasplan-cli-{}-{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// Case 2a with edits applied line by line, without its wayset.
fn edited_case2a(dir: &Path, edit: impl Fn(&str) -> String) -> PathBuf {
    let text = std::fs::read_to_string(scenario("case2a")).unwrap();
    let mut out = String::new();
    let mut skip = false;
    for line in text.lines() {
        if line.starts_with('[') {
            skip = line == "[wayset]";
        }
        if !skip {
            out.push_str(&edit(line));
            out.push('\n');
        }
    }
    let path = dir.join("edited.toml");
    std::fs::write(&path, out).unwrap();
    path
}

#[test]
fn plan_writes_all_outputs() {
    let dir = scratch("plan");
    let out =
        bin().arg("plan").arg(scenario("case2a")).arg("--out").arg(&dir).args(["--threads", "1"]).output().unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["trajectory.csv", "solver_stats.txt", "plan.svg", "partition.txt"] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    let csv = std::fs::read_to_string(dir.join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(
        header,
        [
            "k",
            "t_s",
            "xi_m",
            "eta_m",
            "xidot_mps",
            "etadot_mps",
            "soc",
            "pb_w",
            "xiddot",
            "etaddot",
            "pbdot",
            "region_idx",
            "region_cost",
            "v_mps",
            "theta_rad",
            "omega_radps"
        ]
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 16);
    assert!(rows.iter().all(|r| r.len() == header.len()));
    let soc_n: f64 = rows.last().unwrap()[6].parse().unwrap();
    assert!((0.9 - 1e-6..=1.0 + 1e-6).contains(&soc_n));
    let stats = std::fs::read_to_string(dir.join("solver_stats.txt")).unwrap();
    assert!(stats.contains("status: optimal"));
    let svg = std::fs::read_to_string(dir.join("plan.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<polyline"));
}

#[test]
fn partition_reports_valid_cells() {
    let dir = scratch("partition");
    let out = bin().arg("partition").arg(scenario("case1")).arg("--out").arg(&dir).output().unwrap();
    assert_eq!(code(&out), 0);
    let report = std::fs::read_to_string(dir.join("partition.txt")).unwrap();
    assert!(report.contains("valid: true"), "{report}");
    assert!(dir.join("partition.svg").is_file());
}

#[test]
fn goal_inside_obstacle_is_rejected() {
    let dir = scratch("obstacle");
    let path = edited_case2a(&dir, |l| if l == "xi = 16.0" { "xi = 8.0".into() } else { l.into() });
    let out = bin().arg("plan").arg(&path).arg("--out").arg(dir.join("out")).output().unwrap();
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("not in the traversable map"));
}

#[test]
fn unreachable_wayset_is_infeasible() {
    let dir = scratch("infeasible");
    let text = std::fs::read_to_string(scenario("case2a")).unwrap().replace("horizon = 15", "horizon = 4");
    let path = dir.join("short.toml");
    std::fs::write(&path, text).unwrap();
    let out = bin().arg("plan").arg(&path).arg("--out").arg(dir.join("out")).output().unwrap();
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    let stats = std::fs::read_to_string(dir.join("out/solver_stats.txt")).unwrap();
    assert!(stats.contains("status: failed"));
}

#[test]
fn invalid_inputs_exit_with_one() {
    let dir = scratch("invalid");
    let missing = bin().arg("plan").arg(dir.join("nope.toml")).arg("--out").arg(&dir).output().unwrap();
    assert_eq!(code(&missing), 1);

    let bad = edited_case2a(&dir, |l| if l.starts_with("dt =") { "dt = -1.0".into() } else { l.into() });
    let out = bin().arg("plan").arg(&bad).arg("--out").arg(&dir).output().unwrap();
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("vehicle.dt"));

    let unknown =
        edited_case2a(&dir, |l| if l.starts_with("dt =") { format!("{l}\nwingspan = 2.0") } else { l.into() });
    let out = bin().arg("plan").arg(&unknown).arg("--out").arg(&dir).output().unwrap();
    assert_eq!(code(&out), 1);

    let out =
        bin().arg("plan").arg(scenario("case2a")).arg("--out").arg(&dir).args(["--eps-abs", "0"]).output().unwrap();
    assert_eq!(code(&out), 1);
}

#[test]
fn benchmark_reports_median() {
    let out =
        bin().arg("benchmark").arg(scenario("case2a")).args(["--repeats", "1", "--threads", "1"]).output().unwrap();
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("median"));
}
