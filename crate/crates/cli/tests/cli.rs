use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::process::{Command, Output};

use flowdeck::corpus;
use flowdeck::plan::{Parallelism, PlanMode};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_flowdeck"));
    c.env_remove("FLOWDECK_SEED");
    c
}

fn example(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)
}

fn flowdeck(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn flowdeck")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn semantic_plan_has_one_node_per_actor() {
    let o = flowdeck(&["plan", "wordcount", "--layer", "semantic"]);
    assert_eq!(o.status.code(), Some(0));
    let nodes = stdout(&o).lines().filter(|l| l.trim_start().starts_with('a') && l.contains("[label=") && !l.contains("->")).count();
    let g = corpus::get("wordcount").unwrap().semantic_graph().unwrap();
    assert_eq!(nodes, g.actors.len());
    assert_eq!(nodes, 5);
}

#[test]
fn bsp_plan_has_a_cluster_per_stage() {
    let o = flowdeck(&["plan", "wordcount", "--layer", "parallel", "-p", "4", "--mode", "bsp"]);
    assert_eq!(o.status.code(), Some(0));
    let clusters = stdout(&o).matches("subgraph cluster").count();
    let g = corpus::get("wordcount").unwrap().semantic_graph().unwrap();
    let plan = flowdeck::expand(&g, &Parallelism::uniform(4), PlanMode::Bsp).unwrap();
    let stages: BTreeSet<usize> = plan.actors.iter().filter_map(|a| a.stage).collect();
    assert_eq!(clusters, stages.len());
    assert_eq!(clusters, 2);
}

#[test]
fn unknown_program_and_flags_are_usage_errors() {
    assert_eq!(flowdeck(&["plan", "no-such-program"]).status.code(), Some(2));
    assert_eq!(flowdeck(&["plan", "wordcount", "--bogus"]).status.code(), Some(2));
    assert_eq!(flowdeck(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn run_wordcount_counts_words() {
    let lorem = example("lorem.txt");
    let o = flowdeck(&["run", "wordcount", lorem.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let mut want: BTreeMap<String, i64> = BTreeMap::new();
    for w in std::fs::read_to_string(&lorem).unwrap().split_whitespace() {
        *want.entry(w.to_string()).or_default() += 1;
    }
    let got: BTreeMap<String, i64> = stdout(&o)
        .lines()
        .filter_map(|l| l.split_once('\t'))
        .map(|(k, v)| (k.to_string(), v.parse().unwrap()))
        .collect();
    assert_eq!(got, want);
}

#[test]
fn trace_file_passes_schema_and_invariants() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    let o = flowdeck(&["run", "wordcount", "--trace", trace.to_str().unwrap(), "-w", "2"]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&trace).unwrap();
    assert!(text.lines().count() > 0);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for field in ["seq", "wall_ns", "kind", "actor", "channel", "worker", "stage", "superstep", "tag"] {
            assert!(v.get(field).is_some(), "missing `{field}` in {line}");
        }
    }
    let o = flowdeck(&["validate", trace.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn empty_input_gives_empty_output() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.txt");
    std::fs::write(&empty, "").unwrap();
    let o = flowdeck(&["run", "wordcount", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("== counts (0 records)"));
}

#[test]
fn kernel_failure_exits_one_with_task_id() {
    // key_mod_4 needs integers; text lines make it fail.
    let o = flowdeck(&["run", "map-reduce", example("lorem.txt").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("task ") && err.contains("key_mod_4"), "{err}");
}

#[test]
fn raw_outputs_keep_every_record() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.json");
    let o = flowdeck(&[
        "run",
        "keyed-join",
        &format!("left={}", example("left.csv").display()),
        &format!("right={}", example("right.csv").display()),
        "--config",
        example("bsp-4.json").to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    // a joins twice, b once, c and d not at all.
    assert!(stdout(&o).contains("== joined (3 records)"));
    let raw: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert!(raw.get("joined").is_some());
}

#[test]
fn seed_comes_from_the_environment_by_default() {
    let run = |env: Option<&str>, flag: Option<&str>| {
        let mut c = bin();
        c.args(["run", "map-reduce"]);
        if let Some(e) = env {
            c.env("FLOWDECK_SEED", e);
        }
        if let Some(f) = flag {
            c.args(["--seed", f]);
        }
        let o = c.output().unwrap();
        assert_eq!(o.status.code(), Some(0));
        // Drop the timing line.
        stdout(&o).lines().filter(|l| !l.starts_with("--")).collect::<Vec<_>>().join("\n")
    };
    assert_eq!(run(Some("5"), None), run(None, Some("5")));
    assert_ne!(run(Some("5"), None), run(Some("6"), None));
    assert_eq!(run(Some("6"), Some("5")), run(None, Some("5")));
    let o = bin().args(["run", "map-reduce"]).env("FLOWDECK_SEED", "x").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bundled_wordcount_sweep_is_deterministic() {
    let o = flowdeck(&["sweep", example("wordcount-matrix.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let s = stdout(&o);
    assert!(s.contains("deterministic    bag=true order=true"), "{s}");
    assert!(!s.contains("witness:"));
}

#[test]
fn from_any_sweep_reports_order_nondeterminism() {
    let o = flowdeck(&["sweep", example("from-any-matrix.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let s = stdout(&o);
    assert!(s.contains("bag=true order=false"), "{s}");
    assert!(s.contains("witness: order differs"));
}

#[test]
fn malformed_matrix_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.json");
    std::fs::write(&m, r#"{"program": "wordcount", "workers": []"#).unwrap();
    assert_eq!(flowdeck(&["sweep", m.to_str().unwrap()]).status.code(), Some(2));
    std::fs::write(&m, r#"{"program": "wordcount", "workers": [], "dispatch": ["on_demand"], "seeds": [1]}"#).unwrap();
    assert_eq!(flowdeck(&["sweep", m.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn validate_recognises_each_file_kind() {
    for (file, needle) in [
        ("wordcount.json", "5 actors"),
        ("merge-topology.json", "program `merge`"),
        ("bsp-4.json", "run configuration ok"),
        ("wordcount-matrix.json", "36 cells"),
    ] {
        let o = flowdeck(&["validate", example(file).to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{file}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains(needle), "{file}: {}", stdout(&o));
    }
}

#[test]
fn bad_program_json_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p.json");
    std::fs::write(&p, "{\n  \"name\": \"x\",\n  \"ops\": [,]\n}\n").unwrap();
    let o = flowdeck(&["plan", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn json_program_runs_like_the_builtin() {
    let lorem = example("lorem.txt");
    let a = flowdeck(&["run", example("wordcount.json").to_str().unwrap(), lorem.to_str().unwrap()]);
    let b = flowdeck(&["run", "wordcount", lorem.to_str().unwrap()]);
    let body = |o: &Output| stdout(o).lines().filter(|l| !l.starts_with("--")).map(String::from).collect::<Vec<_>>();
    assert_eq!(body(&a), body(&b));
}
