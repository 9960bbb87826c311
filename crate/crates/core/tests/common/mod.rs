#![allow(dead_code)]

use std::path::PathBuf;

use envforge::envpool::{EnvPool, PoolConfig};
use envforge::synthesis::EnvBundle;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn bundle(name: &str) -> EnvBundle {
    EnvBundle::load_latest(&fixtures().join("bundles").join(name))
        .unwrap_or_else(|e| panic!("fixture bundle {name}: {e}"))
}

/// Pools in different test binaries run concurrently; give each its own ports.
pub fn pool(max_live: usize, port_lo: u16) -> EnvPool {
    EnvPool::new(PoolConfig { max_live, port_range: (port_lo, port_lo + 199), ..PoolConfig::default() }).unwrap()
}

pub fn traces() -> envforge::trace::TraceSet {
    let f = std::fs::File::open(fixtures().join("traces.jsonl")).unwrap();
    envforge::trace::ingest_traces(std::io::BufReader::new(f)).unwrap().0
}

pub fn tasks() -> Vec<envforge::trace::TaskSpec> {
    std::fs::read_to_string(fixtures().join("tasks.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

pub fn task(id: &str) -> (envforge::trace::TaskSpec, envforge::trace::Trace) {
    let t = tasks().into_iter().find(|t| t.id == id).unwrap();
    (t, traces().get(id).unwrap().clone())
}
