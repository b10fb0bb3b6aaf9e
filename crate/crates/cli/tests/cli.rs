use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use relfeat_core::rdb::save_database;
use relfeat_core::synth::{planted_count_spec, planted_signal};
use serde_json::{json, Value};
use tempfile::TempDir;

fn relfeat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relfeat"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("spawn relfeat")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn planted(users: usize) -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    let ds = planted_signal(users, 11);
    let manifest = save_database(&ds.db, &ds.task, dir.path().join("data")).unwrap();
    (dir, manifest)
}

fn field(out: &str, key: &str) -> String {
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}: ")))
        .unwrap_or_else(|| panic!("no {key} in {out}"))
        .to_string()
}

fn write_json(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn two_tables(dir: &Path) -> PathBuf {
    fs::write(dir.join("users.csv"), "user_id,signup,split,label\n1,2020-01-01,train,0\n2,2020-01-02,val,1\n").unwrap();
    fs::write(dir.join("visits.csv"), "visit_id,user_id,ts,ad\n10,1,2019-12-01,7\n11,1,2019-12-02,9\n12,2,2019-12-03,7\n").unwrap();
    let manifest = json!({
        "tables": [
            {"name": "users", "path": "users.csv", "primary_key": "user_id",
             "columns": [{"name": "user_id", "type": "integer"}, {"name": "signup", "type": "timestamp"},
                         {"name": "split", "type": "categorical"}, {"name": "label", "type": "integer"}]},
            {"name": "visits", "path": "visits.csv", "primary_key": "visit_id", "time_column": "ts",
             "columns": [{"name": "visit_id", "type": "integer"}, {"name": "user_id", "type": "integer"},
                         {"name": "ts", "type": "timestamp"}, {"name": "ad", "type": "categorical"}]}
        ],
        "foreign_keys": [{"child_table": "visits", "child_column": "user_id",
                          "parent_table": "users", "parent_column": "user_id"}],
        "task": {"description": "Predict whether a user clicks.", "target_table": "users",
                 "label_column": "label", "seed_time_column": "signup", "split_column": "split"}
    });
    write_json(dir, "manifest.json", &manifest)
}

#[test]
fn describe_lists_tables_and_respects_subset() {
    let dir = TempDir::new().unwrap();
    let manifest = two_tables(dir.path());
    let o = relfeat(&["describe", "--manifest", s(&manifest)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("Table users") && text.contains("Table visits"), "{text}");
    assert!(text.contains("ad: categorical"), "{text}");

    let subset = write_json(dir.path(), "subset.json", &json!({"users": ["user_id", "signup", "split", "label"]}));
    let o = relfeat(&["describe", "--manifest", s(&manifest), "--subset", s(&subset)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!stdout(&o).contains("Table visits"), "{}", stdout(&o));

    let partial = write_json(dir.path(), "partial.json", &json!({"users": ["user_id"]}));
    let o = relfeat(&["describe", "--manifest", s(&manifest), "--subset", s(&partial)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn data_errors_exit_2_and_usage_errors_exit_1() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"tables\": 3}").unwrap();
    assert_eq!(relfeat(&["describe", "--manifest", s(&bad)]).status.code(), Some(2));
    assert_eq!(relfeat(&["describe", "--manifest", s(&dir.path().join("missing.json"))]).status.code(), Some(2));
    assert_eq!(relfeat(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(relfeat(&["describe"]).status.code(), Some(1));
    let manifest = two_tables(dir.path());
    let o = relfeat(&["run", "--manifest", s(&manifest), "--out-dir", s(&dir.path().join("r")), "--backend", "scripted"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let o = relfeat(&["run", "--manifest", s(&manifest), "--out-dir", s(&dir.path().join("r")), "--model", "m"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(relfeat(&["--help"]).status.success());
    assert!(relfeat(&["--version"]).status.success());
}

#[test]
fn api_key_is_not_a_flag() {
    let o = relfeat(&["run", "--manifest", "m.json", "--out-dir", "o", "--api-key", "secret"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn exec_feature_summaries() {
    let dir = TempDir::new().unwrap();
    let manifest = two_tables(dir.path());
    let distinct = write_json(dir.path(), "distinct.json", &json!({
        "name": "distinct_ads", "agg": "count_distinct", "column": "ad",
        "path": [{"direction": "to_children", "fk": {"child_table": "visits", "child_column": "user_id",
                  "parent_table": "users", "parent_column": "user_id"}}]
    }));
    let o = relfeat(&["exec-feature", "--manifest", s(&manifest), "--spec", s(&distinct)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(field(&out, "rows"), "2");
    assert_eq!(field(&out, "non_null"), "2");
    // user 1 saw ads {7, 9}, user 2 saw {7}
    assert_eq!(field(&out, "mean"), "1.500000");
    assert_eq!(field(&out, "max"), "2.000000");

    let unknown = write_json(dir.path(), "unknown.json", &json!({
        "name": "bad", "agg": "mean", "column": "nope",
        "path": [{"direction": "to_children", "fk": {"child_table": "visits", "child_column": "user_id",
                  "parent_table": "users", "parent_column": "user_id"}}]
    }));
    let o = relfeat(&["exec-feature", "--manifest", s(&manifest), "--spec", s(&unknown)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("invalid spec bad"), "{}", stderr(&o));
}

#[test]
fn exec_feature_planted_count_and_empty_join() {
    let (dir, manifest) = planted(120);
    let spec = write_json(dir.path(), "count.json", &planted_count_spec().to_json());
    let o = relfeat(&["exec-feature", "--manifest", s(&manifest), "--spec", s(&spec)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(field(&out, "rows"), "120");
    assert_eq!(field(&out, "non_null"), "120");

    let mut empty = planted_count_spec().to_json();
    empty["name"] = json!("mean_amount_before_epoch");
    empty["agg"] = json!("mean");
    empty["column"] = json!("amount");
    empty["filter"] = json!({"column": "amount", "op": "lt", "literal": -1.0e12});
    let spec = write_json(dir.path(), "empty.json", &empty);
    let o = relfeat(&["exec-feature", "--manifest", s(&manifest), "--spec", s(&spec)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(field(&out, "non_null"), "0");
    assert_eq!(field(&out, "mean"), "null");
}

#[test]
fn baseline_and_evaluate() {
    let (dir, manifest) = planted(500);
    let o = relfeat(&["baseline", "--manifest", s(&manifest)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let base = stdout(&o);
    let val: f64 = field(&base, "val_auroc").parse().unwrap();
    assert!((0.35..=0.65).contains(&val), "{base}");

    let none = write_json(dir.path(), "none.json", &json!([]));
    let o = relfeat(&["evaluate", "--manifest", s(&manifest), "--features", s(&none)]);
    assert_eq!(stdout(&o), base);

    let one = write_json(dir.path(), "one.json", &json!([planted_count_spec().to_json()]));
    let o = relfeat(&["evaluate", "--manifest", s(&manifest), "--features", s(&one)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let test: f64 = field(&stdout(&o), "test_auroc").parse().unwrap();
    assert!(test >= 0.95, "{}", stdout(&o));
}

#[test]
fn heuristic_run_with_flags() {
    let (dir, manifest) = planted(500);
    let out = dir.path().join("run");
    let o = relfeat(&[
        "run", "--manifest", s(&manifest), "--out-dir", s(&out), "--backend", "heuristic",
        "--seed", "4", "--instances", "5", "--max-iters", "3", "--ablate", "no-feedback",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = stdout(&o);
    let accepted: usize = summary
        .split_whitespace()
        .find_map(|w| w.strip_prefix("accepted="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(accepted >= 1, "{summary}");

    let cfg: Value = serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["ablations"]["disable_feedback"], json!(true));
    assert_eq!(cfg["instances"], json!(5));
    assert_eq!(cfg["seed"], json!(4));
    let gen1 = fs::read_dir(out.join("transcripts"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("iter01_generate_"))
        .count();
    assert_eq!(gen1, 5);
    assert!(out.join("enriched_target.csv").exists());
}

fn scripted_fixture(dir: &Path, with_generation: bool) -> PathBuf {
    let mut responses = json!({
        "*/schema": json!({"tables": {"users": ["user_id", "age", "region"],
                                      "events": ["event_id", "user_id", "event_time", "kind", "amount"]}}).to_string(),
        "iter01/filter": json!({"selected": ["event_count"]}).to_string(),
    });
    if with_generation {
        responses["iter01/generate/0"] = json!(format!("```json\n[{}]\n```", planted_count_spec().to_json_string()));
        responses["*/generate"] = json!("[]");
    }
    write_json(dir, "fixture.json", &json!({ "responses": responses }))
}

#[test]
fn scripted_run_converges_and_replays() {
    let (dir, manifest) = planted(500);
    let fixture = scripted_fixture(dir.path(), true);
    let first = dir.path().join("first");
    let o = relfeat(&[
        "run", "--manifest", s(&manifest), "--out-dir", s(&first), "--backend", "scripted",
        "--fixture", s(&fixture), "--seed", "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("status=converged iterations=2 accepted=1"), "{}", stdout(&o));
    assert_eq!(fs::read_to_string(first.join("status")).unwrap(), "converged\n");

    let second = dir.path().join("second");
    let o = relfeat(&[
        "run", "--manifest", s(&manifest), "--out-dir", s(&second), "--backend", "replay",
        "--transcripts", s(&first.join("transcripts")), "--seed", "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["accepted_features.json", "metrics.json"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f}");
    }

    let o = relfeat(&["evaluate", "--manifest", s(&manifest), "--features", s(&first.join("accepted_features.json"))]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn backend_failure_aborts_with_exit_3() {
    let (dir, manifest) = planted(300);
    let fixture = scripted_fixture(dir.path(), false);
    let out = dir.path().join("run");
    let o = relfeat(&[
        "run", "--manifest", s(&manifest), "--out-dir", s(&out), "--backend", "scripted",
        "--fixture", s(&fixture),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stdout(&o).contains("status=aborted"), "{}", stdout(&o));
    assert_eq!(fs::read_to_string(out.join("status")).unwrap(), "aborted\n");
}

#[test]
fn synth_writes_a_loadable_dataset() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("avito");
    let o = relfeat(&["synth", "--kind", "avito", "--users", "60", "--seed", "3", "--out-dir", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = PathBuf::from(stdout(&o).trim());
    let o = relfeat(&["describe", "--manifest", s(&manifest)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("VisitStream"), "{}", stdout(&o));
}
