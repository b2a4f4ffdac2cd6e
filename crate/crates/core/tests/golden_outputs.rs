//! Byte-level regression fixtures for the report formats. Regenerate with
//! `BLESS=1 cargo test -p fusesim-core --test golden_outputs` after an
//! intended model change, and review the diff.

use std::path::PathBuf;

use fusesim::format::{layer_csv, to_sorted_json};
use fusesim::sim::{compare, simulate_network};
use fusesim::topology::load_topology;
use fusesim::{ArrayConfig, Dataflow};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn check(name: &str, actual: &str) {
    let path = fixture(name);
    if std::env::var_os("BLESS").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap();
    assert!(expected == actual, "{name} differs from fixture");
}

#[test]
fn tiny_network_reports() {
    let net = load_topology(fixture("tiny.csv")).unwrap();
    let cfg = ArrayConfig::default().with_dims(8, 8);
    let os = simulate_network(&net, &cfg).unwrap();
    check("tiny_os_layers.csv", &layer_csv(&os));
    let ws = simulate_network(&net, &cfg.clone().with_dataflow(Dataflow::WeightStationary)).unwrap();
    check("tiny_ws_report.json", &to_sorted_json(&ws));
    check("tiny_compare.json", &to_sorted_json(&compare(&net, &cfg).unwrap()));
}
