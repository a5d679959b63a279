use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn jointpg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jointpg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn sweep_writes_one_csv_per_combination() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = jointpg(&[
        "run",
        "--env",
        "wireless",
        "--N",
        "1,4,16,64",
        "--seed",
        "0,1,2,3,4,5,6,7,8,9",
        "--K",
        "3",
        "--H",
        "20",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let runs = fs::read_dir(&out)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .starts_with("run_env-wireless_N")
        })
        .count();
    assert_eq!(runs, 40);
    assert!(out.join("run_env-wireless_N16_seed7.csv").exists());

    let summary = fs::read_to_string(out.join("summary_env-wireless.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(
        lines.next(),
        Some("episode,N,mean_objective,std_objective,num_seeds")
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3 * 4);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[0], (i / 4).to_string());
        assert_eq!(row[1], ["1", "4", "16", "64"][i % 4]);
        assert_eq!(row[4], "10");
    }

    let run = fs::read_to_string(out.join("run_env-wireless_N1_seed0.csv")).unwrap();
    assert_eq!(
        run.lines().next(),
        Some("episode,objective,J_0,J_1,J_2,J_3,grad_norm,clamped,ms")
    );
    assert_eq!(run.lines().count(), 4);
}

#[test]
fn empty_sweep_is_a_single_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(
        dir.path(),
        "c.json",
        &format!(
            r#"{{"env": {{"kind": "synthetic"}}, "trainer": {{"episodes": 4, "n1": 6, "n2": 6, "seed": 2}},
              "sweep": {{}}, "output": {:?}}}"#,
            out
        ),
    );
    let o = jointpg(&["run", &cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csvs: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("run_"))
        .collect();
    assert_eq!(csvs, vec!["run_env-synthetic_N6_seed2.csv".to_string()]);
}

#[test]
fn flag_overrides_reach_the_echo() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = jointpg(&[
        "run",
        "--env",
        "queuing",
        "--K",
        "2",
        "--H",
        "30",
        "--N",
        "3",
        "--lr",
        "0.02",
        "--optimizer",
        "constant",
        "--utility",
        "alpha_fair",
        "--gamma",
        "0.95",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let echo: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    let t = &echo["trainer"];
    assert_eq!(t["episodes"], 2);
    assert_eq!(t["horizon"], 30);
    assert_eq!(t["n1"], 3);
    assert_eq!(t["gamma"], 0.95);
    assert_eq!(t["step_rule"]["optimizer"], "constant");
    assert_eq!(t["step_rule"]["eta"], 0.02);
    assert_eq!(t["utility"]["kind"], "alpha_fair_inverse");
    assert_eq!(t["utility"]["scale"], 30.0);
}

#[test]
fn invalid_config_exits_2_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.json",
        "{\n  \"env\": {\"kind\": \"wireless\"},\n  \"trainer\": {\n    \"episodes\": 3,\n    \"learning_rate\": 1\n  }\n}\n",
    );
    let o = jointpg(&["run", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("line 5"), "{err}");
    assert!(err.contains("learning_rate"), "{err}");

    let cfg = write_config(
        dir.path(),
        "bad2.json",
        "{\n  \"env\": {\"kind\": \"synthetic\"},\n  \"trainer\": {\"n1\": 0}\n}\n",
    );
    let o = jointpg(&["run", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    assert_eq!(jointpg(&["run", "--env", "mars"]).status.code(), Some(2));
    assert_eq!(jointpg(&["run"]).status.code(), Some(2));
}

#[test]
fn overflow_exits_3_and_keeps_partial_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(
        dir.path(),
        "c.json",
        &format!(
            r#"{{"env": {{"kind": "synthetic"}},
              "trainer": {{"episodes": 3, "utility": {{"kind": "weighted_sum", "weights": [1.7e308, 1.7e308]}}}},
              "output": {out:?}}}"#
        ),
    );
    let o = jointpg(&["run", &cfg]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite gradient"));
    let log = fs::read_to_string(out.join("run_env-synthetic_N64_seed0.csv")).unwrap();
    assert_eq!(log.lines().count(), 1);
}

#[test]
fn diagnose_without_model_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = jointpg(&[
        "diagnose",
        "--env",
        "queuing",
        "--gamma",
        "0.9",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no tabular model"), "{}", stderr(&o));
}

#[test]
fn diagnose_synthetic_defaults_pass() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("diag");
    let o = jointpg(&[
        "diagnose",
        "--env",
        "synthetic",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let bias = fs::read_to_string(out.join("bias.csv")).unwrap();
    assert_eq!(bias.lines().count(), 1 + 3 * 4);
    assert!(bias.lines().skip(1).all(|l| l.ends_with(",1")));
    let trunc = fs::read_to_string(out.join("truncation.csv")).unwrap();
    assert_eq!(trunc.lines().count(), 4);
    for name in ["variance.csv", "estimator.csv", "config.json"] {
        assert!(out.join(name).exists(), "{name}");
    }
}

#[test]
fn diagnose_weighted_sum_has_zero_term_i() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("diag");
    let cfg = write_config(
        dir.path(),
        "ws.json",
        &format!(
            r#"{{"env": {{"kind": "synthetic"}},
              "trainer": {{"utility": {{"kind": "weighted_sum", "weights": [1.0, 0.5]}}}},
              "diagnostics": {{"bias_reps": 2000, "variance_samples": 1000, "estimator_n": 2000}},
              "output": {out:?}}}"#
        ),
    );
    let o = jointpg(&["diagnose", &cfg]);
    assert!(
        matches!(o.status.code(), Some(0) | Some(4)),
        "{}",
        stderr(&o)
    );
    let bias = fs::read_to_string(out.join("bias.csv")).unwrap();
    let header: Vec<&str> = bias.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "term_i").unwrap();
    for line in bias.lines().skip(1) {
        let term_i: f64 = line.split(',').nth(col).unwrap().parse().unwrap();
        assert_eq!(term_i, 0.0);
    }
}

#[test]
fn failed_bound_exits_4() {
    // 2% relative error cannot be met with 50 trajectories per batch
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "tight.json",
        &format!(
            r#"{{"env": {{"kind": "synthetic"}},
              "diagnostics": {{"bias_reps": 200, "variance_samples": 100, "estimator_n": 50,
                              "estimator_reps": 1, "estimator_tol": 0.02}},
              "output": {:?}}}"#,
            dir.path().join("d")
        ),
    );
    assert_eq!(jointpg(&["diagnose", &cfg]).status.code(), Some(4));
}
