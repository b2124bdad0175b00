use std::fs;
use std::path::Path;
use std::process::Command;

use distobs::mas::{ModelFile, StateCouplingFile};
use distobs::sim::{self, ScenarioConfig};
use serde_json::Value;
use tempfile::TempDir;

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn distobs(args: &[&str]) -> Outcome {
    let out = Command::new(env!("CARGO_BIN_EXE_distobs")).args(args).output().expect("binary runs");
    Outcome {
        code: out.status.code().expect("exit code"),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn write_model(dir: &Path, name: &str, model: &ModelFile) -> String {
    write(dir, name, &serde_json::to_string_pretty(model).unwrap())
}

fn write_scenario(dir: &Path, name: &str, cfg: &ScenarioConfig) -> String {
    write(dir, name, &cfg.to_json())
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn short(id: &str, t_end: f64) -> ScenarioConfig {
    let mut cfg = sim::builtin(id).unwrap();
    cfg.t_end = t_end;
    cfg
}

#[test]
fn check_three_agent_model_passes() {
    let dir = TempDir::new().unwrap();
    let p = write_model(dir.path(), "m.json", &sim::three_agent_model());
    let o = distobs(&["check", &p]);
    assert_eq!(o.code, 0, "{}{}", o.stdout, o.stderr);
    assert!(!o.stdout.contains("FAIL"));
    assert_eq!(o.stdout.matches("PASS").count(), 5);
}

#[test]
fn check_lists_dynamics_cycle() {
    let dir = TempDir::new().unwrap();
    let mut model = sim::three_agent_model();
    // A_12 closes a cycle with the existing A_21.
    model.state_couplings.push(StateCouplingFile { i: 1, j: 2, a_ij: vec![vec![0.1], vec![0.0]] });
    let p = write_model(dir.path(), "m.json", &model);
    let o = distobs(&["check", &p]);
    assert_eq!(o.code, 2, "{}{}", o.stdout, o.stderr);
    let line = o.stdout.lines().find(|l| l.contains("dynamics graph acyclic")).unwrap();
    assert!(line.starts_with("FAIL"), "{line}");
    assert!(line.contains("cycle through agents"), "{line}");
    assert!(line.contains('1') && line.contains('2'), "{line}");
}

#[test]
fn check_reports_unobservable_agent_and_disconnection() {
    let dir = TempDir::new().unwrap();
    let mut model = sim::three_agent_model();
    model.agents[0].c = vec![vec![0.0, 0.0]];
    model.gc = vec![distobs::mas::EdgeSpec::Plain(1, 2), distobs::mas::EdgeSpec::Plain(2, 3)];
    let p = write_model(dir.path(), "m.json", &model);
    let o = distobs(&["check", &p]);
    assert_eq!(o.code, 2);
    assert!(o.stdout.contains("FAIL  every (A_ii, C_ii) observable: unobservable agents [1]"), "{}", o.stdout);
    assert!(o.stdout.contains("FAIL  communication graph strongly connected: agents [2, 3] cannot reach agent 1"), "{}", o.stdout);
}

#[test]
fn check_localization_scenario_passes_all_conditions() {
    let dir = TempDir::new().unwrap();
    let p = write_scenario(dir.path(), "s.json", &sim::builtin("5B-known").unwrap());
    let o = distobs(&["check", &p]);
    assert_eq!(o.code, 0, "{}", o.stdout);
    assert!(o.stdout.contains("PASS  sensing graph with origin connected"));
    assert!(o.stdout.contains("PASS  no source besides the origin"));
    assert!(!o.stdout.contains("FAIL"));
}

#[test]
fn check_sensing_file_reports_sources() {
    let dir = TempDir::new().unwrap();
    let p = write(dir.path(), "g.json", r#"{"agents": 3, "anchors": [1], "relative_edges": [[1, 2], [3, 2]]}"#);
    let o = distobs(&["check", &p]);
    assert_eq!(o.code, 2);
    assert!(o.stdout.contains("FAIL  no source besides the origin: agents [3] hold no measurement"), "{}", o.stdout);
}

#[test]
fn parse_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    let p = write(dir.path(), "bad.json", "{ not json");
    assert_eq!(distobs(&["check", &p]).code, 1);
    assert_eq!(distobs(&["check", "/definitely/missing.json"]).code, 1);
    assert_eq!(distobs(&["run", "/definitely/missing.json"]).code, 1);
    assert_eq!(distobs(&["frobnicate"]).code, 1);
    assert_eq!(distobs(&["reproduce", "5C"]).code, 1);
    assert_eq!(distobs(&["--help"]).code, 0);
}

#[test]
fn gains_directed_policy_prints_bound() {
    let dir = TempDir::new().unwrap();
    let p = write_model(dir.path(), "m.json", &sim::homogeneous_chain_model());
    let out = dir.path().join("g");
    let o = distobs(&["gains", &p, "--policy", "auto-directed", "--m-bar", "4", "--out", out.to_str().unwrap()]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(o.stdout.contains("bound                574.1"), "{}", o.stdout);
    let doc = read_json(&out.join("gains.json"));
    assert_eq!(doc["gains"]["mu"], 575.0);
    assert_eq!(doc["gains"]["F"].as_array().unwrap().len(), 3);
}

#[test]
fn gains_undirected_policy_gives_23() {
    let dir = TempDir::new().unwrap();
    let p = write_model(dir.path(), "m.json", &sim::homogeneous_chain_model());
    let out = dir.path().join("g");
    let o = distobs(&["gains", &p, "--policy", "auto-undirected", "--m-bar", "3", "--out", out.to_str().unwrap()]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(o.stdout.contains("rho_max              1.200000"));
    assert_eq!(read_json(&out.join("gains.json"))["gains"]["mu"], 23.0);
}

#[test]
fn gains_explicit_policy_echoes_mu() {
    let dir = TempDir::new().unwrap();
    let p = write_scenario(dir.path(), "s.json", &sim::builtin("5A-basic").unwrap());
    let out = dir.path().join("g");
    let o = distobs(&["gains", &p, "--out", out.to_str().unwrap()]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let doc = read_json(&out.join("gains.json"));
    assert_eq!(doc["gains"]["mu"], 10.0);
    assert_eq!(doc["gains"]["F"][1], serde_json::json!([[3.0]]));
    let o = distobs(&["gains", &p, "--policy", "explicit", "--mu", "7.5", "--out", out.to_str().unwrap()]);
    assert_eq!(o.code, 0);
    assert_eq!(read_json(&out.join("gains.json"))["gains"]["mu"], 7.5);
}

#[test]
fn gains_on_disconnected_communication_exit_two() {
    let dir = TempDir::new().unwrap();
    let mut model = sim::homogeneous_chain_model();
    model.gc = vec![distobs::mas::EdgeSpec::Plain(1, 2), distobs::mas::EdgeSpec::Plain(2, 3)];
    let p = write_model(dir.path(), "m.json", &model);
    let o = distobs(&["gains", &p, "--policy", "auto-directed", "--m-bar", "4"]);
    assert_eq!(o.code, 2, "{}{}", o.stdout, o.stderr);
}

#[test]
fn run_writes_artifacts_and_converges() {
    let dir = TempDir::new().unwrap();
    let p = write_scenario(dir.path(), "s.json", &sim::builtin("5A-basic").unwrap());
    let out = dir.path().join("o");
    let o = distobs(&["run", &p, "--out", out.to_str().unwrap()]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    for f in ["5A-basic.csv", "5A-basic.json", "5A-basic.config.json", "plot_5A-basic.py"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let meta = read_json(&out.join("5A-basic.json"));
    assert!(meta["summary"]["final_norm"].as_f64().unwrap() < 1e-3);
}

/// Parses a trace CSV into its header and numeric rows (empty cells as NaN).
fn load_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(|c| if c.is_empty() { f64::NAN } else { c.parse().unwrap() }).collect())
        .collect();
    (header, rows)
}

fn assert_trace_revalidates(out: &Path, stem: &str) {
    let (header, rows) = load_csv(&out.join(format!("{stem}.csv")));
    let meta = read_json(&out.join(format!("{stem}.json")));
    let err_cols: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("err[") || h.starts_with("ebar["))
        .map(|(k, _)| k)
        .collect();
    let e_col = header.iter().position(|h| h == "E_norm").unwrap();
    let recomputed: Vec<f64> = rows
        .iter()
        .map(|r| err_cols.iter().map(|&k| r[k]).filter(|v| !v.is_nan()).map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
    for (r, e) in rows.iter().zip(&recomputed) {
        assert!(rel(*e, r[e_col]) < 1e-9 || (*e - r[e_col]).abs() < 1e-300);
    }
    let summary = &meta["summary"];
    let sup = recomputed.iter().copied().fold(0.0, f64::max);
    assert!(rel(sup, summary["sup_norm"].as_f64().unwrap()) < 1e-9);
    assert!(rel(*recomputed.last().unwrap(), summary["final_norm"].as_f64().unwrap()) < 1e-9);
    for pair in summary["pairs"].as_array().unwrap() {
        let name = format!("err[{}][{}]", pair["estimator"], pair["target"]);
        let k = header.iter().position(|h| *h == name).unwrap();
        let series: Vec<f64> = rows.iter().map(|r| r[k]).filter(|v| !v.is_nan()).collect();
        let psup = series.iter().copied().fold(0.0, f64::max);
        let plast = *series.last().unwrap();
        assert!(rel(psup, pair["sup"].as_f64().unwrap()) < 1e-9 || psup == 0.0, "{name}");
        assert!(rel(plast, pair["last"].as_f64().unwrap()) < 1e-9 || plast == 0.0, "{name}");
    }
    assert_eq!(meta["samples"].as_u64().unwrap() as usize, rows.len());
}

#[test]
fn csv_reload_matches_metadata_summary() {
    let dir = TempDir::new().unwrap();
    let p = write_scenario(dir.path(), "s.json", &short("5A-noise", 5.0));
    let out = dir.path().join("o");
    assert_eq!(distobs(&["run", &p, "--out", out.to_str().unwrap()]).code, 0);
    assert_trace_revalidates(&out, "5A-noise");
}

#[test]
fn csv_reload_with_events_matches_metadata_summary() {
    let dir = TempDir::new().unwrap();
    let mut cfg = short("5A-join", 16.0);
    cfg.dt = 1e-3;
    cfg.subsample = 10;
    let p = write_scenario(dir.path(), "s.json", &cfg);
    let out = dir.path().join("o");
    assert_eq!(distobs(&["run", &p, "--out", out.to_str().unwrap()]).code, 0);
    assert_trace_revalidates(&out, "5A-join");
    let (header, rows) = load_csv(&out.join("5A-join.csv"));
    let k = header.iter().position(|h| h == "x[4][1]").unwrap();
    assert!(rows[0][k].is_nan(), "agent 4 absent before joining");
    assert!(!rows.last().unwrap()[k].is_nan());
}

#[test]
fn seed_override_changes_only_noisy_traces() {
    let dir = TempDir::new().unwrap();
    let csv = |id: &str, seed: &str| {
        let p = write_scenario(dir.path(), &format!("{id}.json"), &short(id, 2.0));
        let out = dir.path().join(format!("{id}-{seed}"));
        let o = distobs(&["run", &p, "--seed", seed, "--out", out.to_str().unwrap()]);
        assert_eq!(o.code, 0, "{}", o.stderr);
        fs::read_to_string(out.join(format!("{id}.csv"))).unwrap()
    };
    assert_ne!(csv("5A-noise", "1"), csv("5A-noise", "2"));
    assert_eq!(csv("5A-basic", "1"), csv("5A-basic", "2"));
}

#[test]
fn divergence_exits_three() {
    let dir = TempDir::new().unwrap();
    let p = write_scenario(dir.path(), "s.json", &short("5A-basic", 2.0));
    let o = distobs(&["run", &p, "--mu", "1e6", "--dt", "0.01"]);
    assert_eq!(o.code, 3, "{}{}", o.stdout, o.stderr);
    assert!(o.stderr.contains("non-finite"), "{}", o.stderr);
}

#[test]
fn reproduce_basic_passes_and_bundle_reruns_identically() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("bundle");
    let o = distobs(&["reproduce", "5A-basic", "--out", out.to_str().unwrap()]);
    assert_eq!(o.code, 0, "{}{}", o.stdout, o.stderr);
    assert!(!o.stdout.contains("FAIL"));
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["passed"], true);
    let again = dir.path().join("again");
    let cfg = out.join("5A-basic.config.json");
    assert_eq!(distobs(&["run", cfg.to_str().unwrap(), "--out", again.to_str().unwrap()]).code, 0);
    for f in ["5A-basic.csv", "plot_5A-basic.py", "5A-basic.config.json"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn reproduce_localization_known_input_converges() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("b");
    let o = distobs(&["reproduce", "5B-known", "--out", out.to_str().unwrap()]);
    assert_eq!(o.code, 0, "{}{}", o.stdout, o.stderr);
    let meta = read_json(&out.join("5B-known.json"));
    let x0 = &meta["config"]["x0"];
    assert_eq!(x0[0], serde_json::json!([5.0, 7.0]));
    assert_eq!(x0[5], serde_json::json!([10.0, 7.0]));
}

#[test]
fn reproduce_localization_unknown_input_emits_overlay() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("b");
    let o = distobs(&["reproduce", "5B-unknown", "--out", out.to_str().unwrap()]);
    assert_eq!(o.code, 0, "{}{}", o.stdout, o.stderr);
    let script = fs::read_to_string(out.join("plot_5B-unknown.py")).unwrap();
    assert!(script.contains("x[3][1]") && script.contains("trajectory_3"));
}

#[test]
fn reproduce_failing_check_exits_nonzero() {
    let dir = TempDir::new().unwrap();
    // Too short to converge below the final-error threshold.
    let o = distobs(&["reproduce", "5A-basic", "--t-end", "1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.code, 4, "{}", o.stdout);
    assert!(o.stdout.contains("FAIL"));
}

#[test]
fn dagc_on_localization_graph_anchors_agent_two() {
    let dir = TempDir::new().unwrap();
    let p = write(dir.path(), "g.json", &serde_json::to_string(&sim::localization_sensing()).unwrap());
    let out = dir.path().join("d");
    let o = distobs(&["dagc", &p, "--out", out.to_str().unwrap()]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let doc = read_json(&out.join("dagc.json"));
    assert_eq!(doc["acyclic"], true);
    assert_eq!(doc["layers"], serde_json::json!([1, 0, 1, 2, 3, 2]));
    // Three rounds spread the layers, a fourth confirms nothing changes.
    assert_eq!(doc["layer_rounds"], 4);
    assert_eq!(doc["sensing"]["relative_edges"].as_array().unwrap().len(), 6);
    assert_eq!(doc["sensing"]["anchors"], serde_json::json!([2]));
}

#[test]
fn dagc_disconnected_input_exits_two() {
    let dir = TempDir::new().unwrap();
    let p = write(dir.path(), "g.json", r#"{"agents": 4, "anchors": [1], "relative_edges": [[1, 2], [3, 4]]}"#);
    let o = distobs(&["dagc", &p, "--out", dir.path().join("d").to_str().unwrap()]);
    assert_eq!(o.code, 2);
    assert!(o.stderr.contains("cannot be assigned a layer"), "{}", o.stderr);
}

#[test]
fn dagc_pinned_ids_are_deterministic() {
    let dir = TempDir::new().unwrap();
    let p = write(
        dir.path(),
        "g.json",
        r#"{"agents": 4, "anchors": [1], "relative_edges": [[1, 2], [2, 3], [3, 4], [4, 2]],
            "ids": {"1": 9, "2": 5, "3": 5, "4": 1}}"#,
    );
    let run = |seed: &str| {
        let out = dir.path().join(format!("d{seed}"));
        assert_eq!(distobs(&["dagc", &p, "--seed", seed, "--out", out.to_str().unwrap()]).code, 0);
        fs::read(out.join("dagc.json")).unwrap()
    };
    assert_eq!(run("1"), run("2"));
}
