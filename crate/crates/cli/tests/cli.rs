use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lqr-online"))
}

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn edited(name: &str, edit: impl FnOnce(&mut Value)) -> tempfile::NamedTempFile {
    let mut v: Value = read_json(&bundled(name));
    edit(&mut v);
    let f = tempfile::NamedTempFile::new().unwrap();
    std::fs::write(f.path(), v.to_string()).unwrap();
    f
}

#[test]
fn run_writes_self_describing_summary() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("run", &bundled("test1.json"), dir.path(), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = read_json(&dir.path().join("summary.json"));
    assert_eq!(s["schema_version"], "online-lqr/1");
    assert_eq!(s["config"]["steps_per_round"], 2);
    assert_eq!(s["config"]["sigma"].as_f64().unwrap(), 1f64.sqrt());
    assert_eq!(s["config"]["prior"]["covariance"], serde_json::json!([[2.0, 0.0], [0.0, 2.0]]));
    assert_eq!(s["covariance_trace"].as_array().unwrap().len(), 25);
    assert!(s["online_cost"].as_f64().unwrap() > s["reference_cost"].as_f64().unwrap());
    assert!(s["block_layout"].as_str().unwrap().contains("blocks of p steps"));
}

#[test]
fn format_selects_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run("run", &bundled("test1.json"), dir.path(), &["--format", "csv"]).status.success());
    let mut names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["beliefs.csv", "summary.json", "trajectories.csv"]);
    let csv = std::fs::read_to_string(dir.path().join("trajectories.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "side,t,x_1,x_2,u_1");
    assert_eq!(csv.lines().count(), 1 + 2 * 51);
}

#[test]
fn resolved_config_reproduces_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(run("run", &bundled("test2.json"), a.path(), &[]).status.success());
    let resolved = read_json(&a.path().join("summary.json"))["config"].clone();
    let f = tempfile::NamedTempFile::new().unwrap();
    std::fs::write(f.path(), resolved.to_string()).unwrap();
    let o = run("run", f.path(), b.path(), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["summary.json", "trajectories.csv", "beliefs.json", "trajectories.json"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
}

#[test]
fn s_not_multiple_of_p_exits_2() {
    let f = edited("test1.json", |v| {
        v["scheme_order"] = 2.into();
        v["steps_per_round"] = 3.into();
    });
    let dir = tempfile::tempdir().unwrap();
    let o = run("run", f.path(), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("S not multiple of p"), "{}", stderr(&o));
}

#[test]
fn unknown_key_exits_2() {
    let f = edited("test1.json", |v| {
        v["gamma"] = 1.into();
    });
    let dir = tempfile::tempdir().unwrap();
    let o = run("run", f.path(), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gamma"), "{}", stderr(&o));
}

#[test]
fn bad_matrix_shape_names_field() {
    let f = edited("test1.json", |v| {
        v["q"] = serde_json::json!([[1.0, 0.0]]);
    });
    let dir = tempfile::tempdir().unwrap();
    let o = run("run", f.path(), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`q`"), "{}", stderr(&o));
}

#[test]
fn missing_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("run", &dir.path().join("nope.json"), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
}

fn adversarial(v: &mut Value) {
    v["prior"] = serde_json::json!({
        "mean_matrix": [[-200.0, 0.0], [0.0, -200.0]],
        "covariance": [[1e-12, 0.0], [0.0, 1e-12]]
    });
}

#[test]
fn divergence_exits_3_with_round() {
    let f = edited("test1.json", adversarial);
    let dir = tempfile::tempdir().unwrap();
    let o = run("run", f.path(), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("round 1"), "{}", stderr(&o));
}

#[test]
fn sweep_flags_diverged_cell_and_keeps_rest() {
    let f = edited("table1a.json", adversarial);
    let dir = tempfile::tempdir().unwrap();
    let o = run("sweep", f.path(), dir.path(), &["--parallel", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = read_json(&dir.path().join("summary.json"));
    let rows = s["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0]["status"], "failed");
    assert_eq!(rows[0]["failed_round"], 1);
    assert_eq!(rows[1]["status"], "ok");
    let csv = std::fs::read_to_string(dir.path().join("table.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().contains(",failed,"));
}

#[test]
fn sweep_with_no_successful_cell_fails() {
    let f = edited("table1a.json", |v| {
        v["dt_list"] = serde_json::json!([0.3, 0.15]);
    });
    let dir = tempfile::tempdir().unwrap();
    let o = run("sweep", f.path(), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn refinement_sweep_has_twelve_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("sweep", &bundled("table1b.json"), dir.path(), &["--format", "csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("table.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("dt,p,steps_per_round,sigma,status"));
    assert_eq!(lines.count(), 12);
}

#[test]
fn parallel_and_sequential_sweeps_agree() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(run("sweep", &bundled("table1a.json"), a.path(), &["--parallel", "1"]).status.success());
    assert!(run("sweep", &bundled("table1a.json"), b.path(), &["--parallel", "0"]).status.success());
    for name in ["summary.json", "table.csv"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
    }
}

#[test]
fn single_cell_sweep_matches_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(run("run", &bundled("test1.json"), a.path(), &[]).status.success());
    assert!(run("sweep", &bundled("test1.json"), b.path(), &[]).status.success());
    let summary = read_json(&a.path().join("summary.json"));
    let sweep = read_json(&b.path().join("summary.json"));
    assert_eq!(summary["online_cost"], sweep["rows"][0]["online_cost"]);
    assert_eq!(summary["reference_cost"], sweep["rows"][0]["reference_cost"]);
    assert_eq!(summary["final_a_error"], sweep["rows"][0]["a_error"]);
}

#[test]
fn selftest_passes_and_mutations_fail() {
    let o = bin().arg("selftest").output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 8);

    let o = bin().args(["selftest", "--inject-stencil-perturbation", "1e-3"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL stencil_exactness"));

    let o = bin().args(["selftest", "--inject-asymmetric-riccati"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL riccati_symmetry"));
}

#[test]
fn parallel_flag_is_binary() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("sweep", &bundled("table1a.json"), dir.path(), &["--parallel", "2"]);
    assert_eq!(o.status.code(), Some(2));
}
