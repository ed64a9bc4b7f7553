use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mapclust::io::{read_trace, ResultFile, TRACE_HEADER};
use tempfile::TempDir;

fn mapclust(args: &[&str], paths: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mapclust"));
    cmd.args(args);
    for (flag, p) in paths {
        cmd.arg(flag).arg(p);
    }
    cmd.output().unwrap()
}

fn write(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const MIN_SIZE_ONE: &str = r#"[{"type": "min_size", "k": 1, "l": 1}, {"type": "min_size", "k": 2, "l": 1}]"#;

#[test]
fn oracle_on_two_points_splits_them() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "d.csv", "x\n-1\n1\n");
    let cons = write(&dir, "c.json", MIN_SIZE_ONE);
    let out = dir.path().join("r.json");
    let o = mapclust(&["oracle", "--k", "2", "--sigma", "1"], &[("--data", &data), ("--constraints", &cons), ("--out", &out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = ResultFile::read(&out).unwrap();
    assert_eq!(r.status, "optimal");
    assert!((r.objective_ubd.unwrap() - 1.386294).abs() < 1e-6);
    let mut a = r.assignment.clone();
    a.sort();
    assert_eq!(a, vec![1, 2]);
}

#[test]
fn solve_writes_result_trace_and_model() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "d.csv", "id,x,label\na,-1.1,1\nb,-0.9,\nc,1.0,2\nd,1.2,\ne,0.1,\n");
    let (out, trace, dump) = (dir.path().join("r.json"), dir.path().join("t.csv"), dir.path().join("m.txt"));
    let o = mapclust(
        &["solve", "--k", "2", "--sigma", "0.5", "--epsilon", "1e-6"],
        &[("--data", &data), ("--out", &out), ("--trace", &trace), ("--dump-model", &dump)],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let r = ResultFile::read(&out).unwrap();
    assert_eq!(r.status, "optimal_within_eps");
    assert!(r.gap.unwrap() <= 1e-6);
    assert!(r.glbd.unwrap() <= r.objective_ubd.unwrap() + 1e-9);
    assert_eq!(r.assignment.len(), 5);
    assert!(r.objective_offset.is_some());
    assert_eq!(r.config["sigma"], 0.5);

    let text = std::fs::read_to_string(&trace).unwrap();
    assert_eq!(text.lines().next(), Some(TRACE_HEADER));
    let rows = read_trace(text.as_bytes()).unwrap();
    assert!(!rows.is_empty());
    for w in rows.windows(2) {
        assert!(w[1].t > w[0].t && w[1].ubd <= w[0].ubd && w[1].glbd >= w[0].glbd);
    }
    assert!(std::fs::read_to_string(&dump).unwrap().starts_with("MIQP n=5 K=2 d=1"));
}

#[test]
fn solve_agrees_with_oracle_and_heuristics_do_not_beat_it() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "d.csv", "x\n-2.0\n-1.7\n-2.2\n0.1\n0.3\n2.1\n1.8\n2.4\n");
    let obj = |cmd: &str, extra: &[&str]| {
        let out = dir.path().join(format!("{cmd}.json"));
        let mut args = vec![cmd, "--k", "3", "--sigma", "0.5", "--seed", "3"];
        args.extend_from_slice(extra);
        let o = mapclust(&args, &[("--data", &data), ("--out", &out)]);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
        ResultFile::read(&out).unwrap().objective_ubd.unwrap()
    };
    let best = obj("oracle", &[]);
    assert!((obj("solve", &["--epsilon", "1e-7", "--strategy", "most-integral"]) - best).abs() < 1e-6);
    for (cmd, extra) in [("em", &[][..]), ("em-multi", &["--restarts", "5"][..]), ("sa", &["--steps", "2000"][..])] {
        assert!(obj(cmd, extra) >= best - 1e-9, "{cmd}");
    }
}

#[test]
fn conflicting_constraints_exit_with_infeasible() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "d.csv", "x\n0\n1\n2\n");
    let cons = write(
        &dir,
        "c.json",
        r#"[{"type": "must_link", "i": 1, "j": 2}, {"type": "cannot_link", "i": 1, "j": 2}]"#,
    );
    let out = dir.path().join("r.json");
    let o = mapclust(&["solve", "--k", "2", "--sigma", "1"], &[("--data", &data), ("--constraints", &cons), ("--out", &out)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert_eq!(ResultFile::read(&out).unwrap().status, "infeasible");
}

#[test]
fn config_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "d.csv", "x\n0\n1\n");
    let missing = dir.path().join("nope.csv");
    let cases: Vec<(Vec<&str>, Vec<(&str, &Path)>)> = vec![
        (vec!["solve", "--k", "2", "--sigma", "1"], vec![("--data", &missing)]),
        (vec!["solve", "--k", "2"], vec![("--data", &data)]),
        (vec!["solve", "--k", "2", "--sigma", "1", "--epsilon", "0"], vec![("--data", &data)]),
        (vec!["solve", "--k", "0", "--sigma", "1"], vec![("--data", &data)]),
        (vec!["solve", "--k", "2", "--sigma", "1", "--pi-min", "1.5"], vec![("--data", &data)]),
    ];
    for (args, paths) in cases {
        let o = mapclust(&args, &paths);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
        assert!(stderr(&o).starts_with("error:"));
    }
}

#[test]
fn node_limit_without_incumbent_exits_with_three() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "d.csv", "x\n0\n1\n2\n3\n");
    let out = dir.path().join("r.json");
    let cfg = write(&dir, "cfg.json", r#"{"k": 2, "sigma": 1.0, "node_limit": 0, "restarts": 0}"#);
    let o = mapclust(&["solve"], &[("--config", &cfg), ("--data", &data), ("--out", &out)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let r = ResultFile::read(&out).unwrap();
    assert_eq!(r.status, "no_incumbent");
    assert!(r.assignment.is_empty());
}

#[test]
fn flags_override_the_config_file() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "d.csv", "x\n-1\n1\n");
    let cfg = write(&dir, "cfg.json", r#"{"k": 2, "sigma": 3.0, "seed": 5, "epsilon": 0.01}"#);
    let out = dir.path().join("r.json");
    let o = mapclust(&["em", "--sigma", "1", "--seed", "9"], &[("--config", &cfg), ("--data", &data), ("--out", &out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = ResultFile::read(&out).unwrap();
    assert_eq!(r.seed, 9);
    assert_eq!(r.config["sigma"], 1.0);
    assert_eq!(r.config["epsilon"], 0.01);
    assert_eq!(r.config["k"], 2);

    let bad = write(&dir, "bad.json", r#"{"k": 2, "sigma": 1.0, "colour": "red"}"#);
    let o = mapclust(&["em"], &[("--config", &bad), ("--data", &data)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_cells_are_reported() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "d.csv", "x,y\n1,2\n,3\n4,\n");
    let o = mapclust(&["em", "--k", "1", "--sigma", "1"], &[("--data", &data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("2 blank feature cells"));
}

#[test]
fn labelled_rows_give_precision_and_fixings() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "d.csv", "x,label\n-1.2,1\n-0.8,1\n0.9,2\n1.1,2\n0.0,\n3.0,\n");
    let out = dir.path().join("r.json");
    let o = mapclust(
        &["solve", "--k", "2", "--precision", "avg-labels", "--fix-labels"],
        &[("--data", &data), ("--out", &out)],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let r = ResultFile::read(&out).unwrap();
    assert_eq!(&r.assignment[..4], &[1, 1, 2, 2]);
}

#[test]
fn precision_file_matches_sigma() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "d.csv", "x\n-1\n-0.5\n1\n1.5\n");
    // σ = 0.5 is P = 1/σ² = 4.
    let prec = write(&dir, "p.json", "[[4.0]]");
    let run = |extra: &[&str], paths: &[(&str, &Path)]| {
        let out = dir.path().join("r.json");
        let mut args = vec!["oracle", "--k", "2"];
        args.extend_from_slice(extra);
        let mut all = vec![("--data", data.as_path()), ("--out", out.as_path())];
        all.extend_from_slice(paths);
        assert!(mapclust(&args, &all).status.success());
        ResultFile::read(&out).unwrap().objective_ubd.unwrap()
    };
    let a = run(&["--sigma", "0.5"], &[]);
    let b = run(&[], &[("--precision-file", &prec)]);
    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
}

#[test]
fn prep_then_metrics() {
    let dir = TempDir::new().unwrap();
    let iris = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/iris.csv");
    let csv = dir.path().join("iris1d.csv");
    let o = mapclust(&["prep", "--subset", "4"], &[("--iris", &iris), ("--out", &csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 13);

    let (est, truth, metrics) = (dir.path().join("e.json"), dir.path().join("t.json"), dir.path().join("m.json"));
    assert!(mapclust(&["solve", "--k", "3", "--sigma", "0.4"], &[("--data", &csv), ("--out", &est)]).status.success());
    assert!(mapclust(&["em", "--k", "3", "--sigma", "0.4"], &[("--data", &csv), ("--out", &truth)]).status.success());
    let o = mapclust(&["metrics"], &[("--result", &est), ("--truth", &truth), ("--out", &metrics)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&metrics).unwrap()).unwrap();
    for key in ["pi_sup", "mu_l2", "z_mean_sup"] {
        assert!(m[key].as_f64().unwrap() >= 0.0, "{key}");
    }

    let o = mapclust(&["metrics"], &[("--result", &est), ("--truth", &est)]);
    let m: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(m["pi_sup"], 0.0);
    assert_eq!(m["mu_l2"], 0.0);
    assert_eq!(m["z_mean_sup"], 0.0);
}
