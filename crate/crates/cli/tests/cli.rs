use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn kge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kge")).args(args).output().expect("kge runs")
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn read_json(p: PathBuf) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn build_prototypes_writes_loadable_json_and_both_distance_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("p");
    let o = kge(&["build-prototypes", "--graph", &fixture("graph.tsv"), "--classes", "cat,dog,car", "--dim", "4", "--out", &s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let p = kge_core::prototypes::PrototypeSet::load(out.join("prototypes.json")).unwrap();
    assert_eq!(p.classes(), ["cat", "dog", "car"]);
    assert_eq!(p.dim(), 4);
    for m in ["cosine", "manhattan"] {
        let csv = std::fs::read_to_string(out.join(format!("distances_{m}.csv"))).unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("class,cat,dog,car"));
    }
}

#[test]
fn dimension_above_node_count_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = kge(&["build-prototypes", "--graph", &fixture("graph.tsv"), "--classes", "cat", "--dim", "500", "--out", &s(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
}

#[test]
fn missing_input_and_bad_flags_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = kge(&["evaluate", "--dets", "/nonexistent.jsonl", "--gts", &fixture("gts.jsonl"), "--out", &s(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(kge(&["build-prototypes", "--dim", "3"]).status.code(), Some(2));
}

#[test]
fn evaluate_perfect_detections_gives_ap_one() {
    let tmp = tempfile::tempdir().unwrap();
    let o = kge(&[
        "evaluate",
        "--dets",
        &fixture("perfect_dets.jsonl"),
        "--gts",
        &fixture("gts.jsonl"),
        "--categories",
        &fixture("categories.json"),
        "--out",
        &s(tmp.path()),
    ]);
    assert!(o.status.success());
    let r = read_json(tmp.path().join("ap_report.json"));
    assert_eq!(r["ap"], 1.0);
    assert_eq!(r["ap_cat"], 1.0);
    assert!(tmp.path().join("confusion.csv").is_file());
}

#[test]
fn evaluate_reports_category_split() {
    let tmp = tempfile::tempdir().unwrap();
    let o = kge(&[
        "evaluate",
        "--dets",
        &fixture("mixed_dets.jsonl"),
        "--gts",
        &fixture("gts.jsonl"),
        "--categories",
        &fixture("categories.json"),
        "--out",
        &s(tmp.path()),
    ]);
    assert!(o.status.success());
    let c = read_json(tmp.path().join("category_confusion.json"));
    // dog->cat, bus->car, chair->table are within-category; table is missed.
    assert_eq!(c["intra"], 3);
    assert_eq!(c["inter"], 0);
    assert_eq!(c["misses"], 1);
}

#[test]
fn compare_identical_matrices_gives_zero_js() {
    let tmp = tempfile::tempdir().unwrap();
    let cm = tmp.path().join("cm.csv");
    std::fs::write(&cm, "class,a,b,c,background\na,5,2,1,0\nb,1,7,3,1\nc,2,2,4,0\n").unwrap();
    let counts = tmp.path().join("counts.json");
    std::fs::write(&counts, r#"{"a": 8, "b": 12, "c": 8}"#).unwrap();
    let out = tmp.path().join("out");
    let o = kge(&["compare-errors", "--confusion-a", &s(&cm), "--confusion-b", &s(&cm), "--gt-counts", &s(&counts), "--out", &s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("js_comparison.csv")).unwrap();
    assert_eq!(csv, "class,js,weight\na,0,8\nb,0,12\nc,0,8\n");
}

#[test]
fn decode_heatmap_finds_planted_pixel() {
    let tmp = tempfile::tempdir().unwrap();
    let protos = tmp.path().join("protos.json");
    std::fs::write(
        &protos,
        r#"{"classes":["x","y"],"dim":3,"matrix":[[1,0,0],[0,1,0]],
            "background_policy":{"implicit":{"threshold":0.55}},"provenance":"random-orthogonal"}"#,
    )
    .unwrap();
    let mut data = Vec::new();
    for i in 0..25 {
        data.extend(if i == 12 { [0.0, 1.0, 0.0] } else { [0.0, 0.0, 1.0] });
    }
    let map = serde_json::json!({"height": 5, "width": 5, "dim": 3, "data": data});
    let map_path = tmp.path().join("map.json");
    std::fs::write(&map_path, map.to_string()).unwrap();
    let out = tmp.path().join("out");
    let o = kge(&["decode-heatmap", "--map", &s(&map_path), "--prototypes", &s(&protos), "--image-id", "4", "--out", &s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lines = std::fs::read_to_string(out.join("detections.jsonl")).unwrap();
    let dets: Vec<serde_json::Value> = lines.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(dets.len(), 1);
    assert_eq!(dets[0]["class"], "y");
    assert_eq!(dets[0]["image_id"], 4);
    assert_eq!(dets[0]["box"], serde_json::json!([2.0, 2.0, 3.0, 3.0]));
}

#[test]
fn gradcheck_default_suite_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = kge(&["gradcheck", "--out", &s(tmp.path())]);
    assert_eq!(o.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().filter(|l| l.ends_with("PASS")).count(), 4, "{stdout}");
    assert!(stdout.contains("max_rel_err="));
    let r = read_json(tmp.path().join("gradcheck.json"));
    assert_eq!(r["seed"], 0);
    for res in r["results"].as_array().unwrap() {
        assert!(res["max_relative_error"].as_f64().unwrap() < 1e-4);
    }
}

#[test]
fn train_head_records_seeds_and_honours_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("t");
    let o = kge(&["train-head", "--config", &fixture("train.json"), "--out", &s(&out), "--steps", "50", "--seed", "11"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = read_json(out.join("run.json"));
    assert_eq!(run["seeds"]["master"], 11);
    assert_eq!(run["config"]["optimizer"]["steps"], 50);
    let report = read_json(out.join("train_report.json"));
    assert_eq!(report["loss_trace"].as_array().unwrap().len(), 50);
    assert!(out.join("head.json").is_file() && out.join("confusion.csv").is_file());
}

#[test]
fn train_head_without_seed_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"prototypes":{"source":"random-orthogonal","classes":["a","b"],"dim":2},
            "dataset":{"samples_per_class":5,"noise":0.1}}"#,
    )
    .unwrap();
    let o = kge(&["train-head", "--config", &s(&cfg), "--out", &s(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn categorize_groups_fixture_taxonomy() {
    let tmp = tempfile::tempdir().unwrap();
    let o = kge(&["categorize", "--taxonomy", &fixture("taxonomy.tsv"), "--classes", "cat,dog,car,bus,chair,table", "--out", &s(tmp.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let produced = read_json(tmp.path().join("categories.json"));
    assert_eq!(produced, read_json(PathBuf::from(fixture("categories.json"))));
}

#[test]
fn reruns_are_byte_identical_and_stay_inside_out() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let args = ["train-head", "--config", &fixture("train.json"), "--out", &s(&out), "--steps", "40"];
    let snapshot = |dir: &Path| -> Vec<(String, Vec<u8>)> {
        let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
            })
            .collect();
        v.sort();
        v
    };
    assert!(kge(&args).status.success());
    let first = snapshot(&out);
    assert!(kge(&args).status.success());
    assert_eq!(first, snapshot(&out));
    let siblings: Vec<_> = std::fs::read_dir(tmp.path()).unwrap().collect();
    assert_eq!(siblings.len(), 1);
}

#[test]
fn thread_cap_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |threads: &str, dir: &str| {
        let out = tmp.path().join(dir);
        let o = Command::new(env!("CARGO_BIN_EXE_kge"))
            .env("KGE_THREADS", threads)
            .args(["evaluate", "--dets", &fixture("mixed_dets.jsonl"), "--gts", &fixture("gts.jsonl"), "--out", &s(&out)])
            .output()
            .unwrap();
        assert!(o.status.success());
        std::fs::read(out.join("ap_report.json")).unwrap()
    };
    assert_eq!(run("1", "a"), run("4", "b"));
}
