//! End-to-end runs of the `netsir` binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use netsir::model::simulate;
use netsir::output::read_csv;
use netsir::scenario::{europe, load_scenario};

const BIN: &str = env!("CARGO_BIN_EXE_netsir");

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn netsir(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("NETSIR_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn run_into(scenario: &Path, out: &Path) -> Output {
    netsir(&["run", "--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap(), "--gnuplot-script"])
}

#[test]
fn reruns_are_byte_identical() {
    for name in ["europe.toml", "scalar_toy.toml"] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let path = scenario_path(name);
        let first = run_into(&path, a.path());
        assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
        assert!(run_into(&path, b.path()).status.success());
        let (fa, fb) = (files(a.path()), files(b.path()));
        assert!(fa.contains_key("report.txt") && fa.contains_key("plot.gp"));
        assert_eq!(fa, fb, "{name}");
    }
}

#[test]
fn trajectory_csv_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let out = netsir(&["simulate", "--out", dir.path().to_str().unwrap(), "--horizon", "120"]);
    assert!(out.status.success());
    let s = europe();
    let traj = simulate(&s.model, &s.initial, 120).unwrap();
    let n = s.model.nodes();
    for k in 0..s.model.viruses() {
        let table = read_csv(&dir.path().join(format!("trajectory_{}.csv", k + 1))).unwrap();
        assert_eq!(table.header, ["t", "node", "s", "x", "r"]);
        assert_eq!(table.rows.len(), 121 * n);
        let xs = table.floats("x").unwrap().unwrap();
        let ss = table.floats("s").unwrap().unwrap();
        for (row, (x, s_)) in xs.iter().zip(&ss).enumerate() {
            let (t, i) = (row / n, row % n);
            assert_eq!(x.unwrap(), traj.states[t].x[k][i]);
            assert_eq!(s_.unwrap(), traj.states[t].s[i]);
            assert_eq!(table.rows[row][1], s.model.labels()[i]);
        }
    }
}

#[test]
fn invalid_scenarios_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario_path("scalar_toy.toml")).unwrap();

    let bad_c = dir.path().join("bad_c.toml");
    std::fs::write(&bad_c, text.replacen("c = [1.0]", "c = [1.5]", 1)).unwrap();
    assert_ne!(std::fs::read_to_string(&bad_c).unwrap(), text, "fixture edit applied");
    let out = netsir(&["simulate", "--scenario", bad_c.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Assumption 4"), "{err}");

    let unknown = dir.path().join("unknown.toml");
    std::fs::write(&unknown, format!("{text}\n[extra]\nfoo = 1\n")).unwrap();
    let out = netsir(&["simulate", "--scenario", unknown.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    assert_eq!(netsir(&["no-such-command"]).status.code(), Some(1));
}

#[test]
fn out_flag_overrides_environment() {
    let (env_dir, flag_dir) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let status = Command::new(BIN)
        .args(["simulate", "--horizon", "5"])
        .env("NETSIR_OUT_DIR", env_dir.path())
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    assert!(env_dir.path().join("trajectory_1.csv").exists());

    let status = Command::new(BIN)
        .args(["simulate", "--horizon", "5", "--out", flag_dir.path().to_str().unwrap()])
        .env("NETSIR_OUT_DIR", env_dir.path().join("unused"))
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    assert!(flag_dir.path().join("trajectory_1.csv").exists());
    assert!(!env_dir.path().join("unused").exists());
}

#[test]
fn dump_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["europe.toml", "scalar_toy.toml"] {
        let dumped = dir.path().join(name);
        let src = scenario_path(name);
        let out = netsir(&["dump-config", "--scenario", src.to_str().unwrap(), "--output", dumped.to_str().unwrap()]);
        assert!(out.status.success());
        let original = load_scenario(&src).unwrap();
        let reloaded = load_scenario(&dumped).unwrap();
        assert_eq!(original.config, reloaded.config);
    }
    let stdout = netsir(&["dump-config"]);
    assert!(stdout.status.success());
    assert!(String::from_utf8_lossy(&stdout.stdout).contains("[[model.virus]]"));
}

#[test]
fn eta_sweep_flag_writes_outcomes() {
    let dir = tempfile::tempdir().unwrap();
    let out = netsir(&["observe", "--out", dir.path().to_str().unwrap(), "--eta-sweep", "0:1:3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = read_csv(&dir.path().join("eta_sweep.csv")).unwrap();
    assert_eq!(table.header, ["eta", "outcome", "t"]);
    let etas: Vec<f64> = table.floats("eta").unwrap().unwrap().into_iter().flatten().collect();
    assert_eq!(etas, [0.0, 1.0, 2.0, 3.0]);
    assert_eq!(table.rows[1][1], "converged");
    assert_eq!(table.rows[3][1], "diverged");
    assert!(dir.path().join("observer_error.csv").exists());
    assert!(dir.path().join("lstar_1.csv").exists());
}
