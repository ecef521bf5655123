use std::fs;
use std::path::PathBuf;

use mbp_core::harness::{run_experiment, GapReport};

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write_config(dir: &PathBuf, name: &str) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    let cfg = serde_json::json!({
        "instance": configs().join("three_node.json"),
        "policies": [{ "kind": "mbp" }],
        "k": [40],
        "horizon": { "rule": "per_k", "multiple": 200.0 },
        "replications": 2,
        "base_seed": 11,
        "output_csv": format!("{name}.csv"),
        "output_json": format!("{name}.json"),
    });
    let path = dir.join(format!("{name}.cfg.json"));
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn one_cell_two_reps_gives_two_rows() {
    let dir = std::env::temp_dir().join(format!("mbp-exp-{}", std::process::id()));
    let cfg = write_config(&dir, "a");
    let report = run_experiment(&cfg).unwrap();
    let mut rdr = csv::Reader::from_path(dir.join("a.csv")).unwrap();
    assert_eq!(rdr.records().count(), 2);
    let saved: GapReport = serde_json::from_str(&fs::read_to_string(dir.join("a.json")).unwrap()).unwrap();
    assert_eq!(saved.cells.len(), 1);
    assert_eq!(saved.cells[0].replications, 2);
    assert_eq!(report.cells[0].k, 40);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn reruns_are_byte_identical() {
    let dir = std::env::temp_dir().join(format!("mbp-rep-{}", std::process::id()));
    let a = write_config(&dir, "x");
    run_experiment(&a).unwrap();
    let first = (fs::read(dir.join("x.csv")).unwrap(), fs::read(dir.join("x.json")).unwrap());
    run_experiment(&a).unwrap();
    let second = (fs::read(dir.join("x.csv")).unwrap(), fs::read(dir.join("x.json")).unwrap());
    assert_eq!(first, second);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn shipped_configs_parse() {
    for name in ["three_node.json", "buffered_jea.json", "pricing.json"] {
        mbp_core::Instance::from_path(&configs().join(name)).unwrap();
    }
    for name in ["sweep.json", "smoke.json"] {
        mbp_core::harness::Experiment::from_path(&configs().join(name)).unwrap();
    }
}
