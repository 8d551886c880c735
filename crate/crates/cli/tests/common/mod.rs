//! Shared fixtures for the CLI test suites.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use punctual_core::dist::{ErlangParams, PatchDistribution};
use punctual_core::ingest::straight_route;

pub fn punctual() -> Command {
    Command::new(env!("CARGO_BIN_EXE_punctual"))
}

pub fn run(args: &[&str]) -> Output {
    punctual().args(args).output().expect("binary runs")
}

pub fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Five equal 1 km patches, terminals at both ends, patch 2 affected by
/// the speed limit.
pub fn write_route(dir: &Path) -> PathBuf {
    let route = straight_route("FIX", 5, 1000.0, 400, &[2]);
    let path = dir.join("route.toml");
    std::fs::write(&path, route.to_toml_string()).unwrap();
    path
}

/// Truths for the three journey patches. Means 100/80/100 s over 1 km give
/// average speeds above 20 mph, so the counterfactual bites on patch 2.
pub fn default_truths() -> Vec<PatchDistribution> {
    vec![
        PatchDistribution::Erlang(ErlangParams::new(4, 0.04).unwrap()),
        PatchDistribution::Erlang(ErlangParams::new(6, 0.075).unwrap()),
        PatchDistribution::Erlang(ErlangParams::new(5, 0.05).unwrap()),
    ]
}

pub fn write_truth(dir: &Path, truths: &[PatchDistribution]) -> PathBuf {
    let path = dir.join("truth.json");
    std::fs::write(&path, serde_json::to_string_pretty(truths).unwrap()).unwrap();
    path
}

pub fn write_pipeline_config(dir: &Path, seed: u64) -> PathBuf {
    let text = format!(
        r#"route = "route.toml"
avl = ["avl.csv"]
out_dir = "out"
seed = {seed}

[[windows]]
label = "midday"
start = "09:00:00"
end = "21:00:00"

[fit]
min_samples = 15

[smc]
half_width = 0.01
histogram_runs = 4000
histogram_bin_s = 10.0
max_runs = 200000
"#
    );
    let path = dir.join("pipeline.toml");
    std::fs::write(&path, text).unwrap();
    path
}

/// Generate the standard synthetic trace into `dir/avl.csv`.
pub fn synth_fixture(dir: &Path, journeys: usize, seed: u64) -> PathBuf {
    let route = write_route(dir);
    let truth = write_truth(dir, &default_truths());
    let avl = dir.join("avl.csv");
    run_ok(&[
        "synth",
        "--route",
        route.to_str().unwrap(),
        "--truth",
        truth.to_str().unwrap(),
        "--journeys",
        &journeys.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        avl.to_str().unwrap(),
    ]);
    avl
}

/// Recursively collect (relative path, bytes) for every file under `dir`.
pub fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        entries.sort();
        for path in entries {
            if path.is_dir() {
                walk(base, &path, out);
            } else {
                let rel = path.strip_prefix(base).unwrap().display().to_string();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out
}
