#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

pub fn cptrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cptrack"))
        .args(args)
        .env_remove("CPTRACK_CONFIG")
        .output()
        .expect("spawn cptrack")
}

/// Runs `cptrack` and panics with its stderr unless it succeeds.
pub fn cptrack_ok(args: &[&str]) -> Output {
    let out = cptrack(args);
    assert!(
        out.status.success(),
        "cptrack {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            walk(&path, out);
        } else {
            out.push(path);
        }
    }
}

/// Hash over every relative path and file content under `dir`.
pub fn hash_dir(dir: &Path) -> String {
    let mut files = Vec::new();
    walk(dir, &mut files);
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.strip_prefix(dir).unwrap().to_string_lossy().as_bytes());
        h.update([0]);
        h.update(std::fs::read(&f).unwrap());
        h.update([0]);
    }
    hex::encode(h.finalize())
}

pub fn write_json(path: &Path, value: &serde_json::Value) {
    std::fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
}

/// Three squares moving one patch per frame.
pub fn three_squares(frames: usize) -> serde_json::Value {
    serde_json::json!({
        "name": "squares",
        "height": 32, "width": 32, "dim": 16,
        "frames": frames, "seed": 7, "noise_sigma": 0.05,
        "objects": [
            {"shape": "rect", "size": [5, 5], "start": [5, 4], "velocity": [0, 1]},
            {"shape": "rect", "size": [5, 5], "start": [15, 27], "velocity": [0, -1]},
            {"shape": "rect", "size": [5, 5], "start": [26, 10], "velocity": [0, 1]}
        ]
    })
}

/// Three deforming ellipses drifting in appearance.
pub fn deforming_ellipses(seed: u64) -> serde_json::Value {
    serde_json::json!({
        "name": format!("deform{seed}"),
        "height": 32, "width": 32, "dim": 16,
        "frames": 40, "seed": seed, "noise_sigma": 0.05,
        "objects": [
            {"shape": "ellipse", "size": [7, 7], "start": [8, 8], "velocity": [0.3, 0.7],
             "deformation": 0.8, "deformation_period": 80},
            {"shape": "ellipse", "size": [7, 7], "start": [22, 20], "velocity": [-0.5, 0.4],
             "deformation": 0.8, "deformation_period": 80},
            {"shape": "ellipse", "size": [6, 6], "start": [12, 24], "velocity": [0.6, -0.3],
             "deformation": 0.8, "deformation_period": 80}
        ]
    })
}

/// Writes `spec` and synthesizes it under `root/name`; returns the manifest path.
pub fn synth(root: &Path, name: &str, spec: &serde_json::Value) -> PathBuf {
    let spec_path = root.join(format!("{name}.json"));
    write_json(&spec_path, spec);
    let out = root.join(name);
    cptrack_ok(&[
        "synth",
        "--spec",
        spec_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    out.join("manifest.json")
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
