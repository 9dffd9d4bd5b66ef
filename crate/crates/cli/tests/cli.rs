mod common;

use common::*;

#[test]
fn synth_twice_gives_identical_directories() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "a", &three_squares(6));
    synth(dir.path(), "b", &three_squares(6));
    assert_eq!(hash_dir(&dir.path().join("a")), hash_dir(&dir.path().join("b")));
    assert!(dir.path().join("a/spec.json").exists());
    assert!(!dir.path().join("a/manifest_whole.json").exists());
}

#[test]
fn synth_with_parts_writes_whole_masks() {
    let dir = tempfile::tempdir().unwrap();
    let spec = serde_json::json!({
        "height": 16, "width": 16, "dim": 8, "frames": 3, "seed": 1,
        "objects": [{"shape": "rect", "size": [8, 8], "start": [7.5, 7.5]}],
        "parts": [{"whole": 0, "size": [4, 4], "offset": [0, 0], "epsilon": 0.4843}]
    });
    let manifest = synth(dir.path(), "p", &spec);
    let whole = manifest.with_file_name("manifest_whole.json");
    assert!(whole.exists());
    let out = cptrack_ok(&["inspect", s(&manifest.with_file_name("masks_whole/00000.lmk"))]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("     1       64"), "{text}");
    assert!(!text.contains("     2 "), "{text}");
}

#[test]
fn track_writes_masks_result_and_meta() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "seq", &three_squares(8));
    let run = dir.path().join("run");
    let out = cptrack_ok(&["track", s(&manifest), "--out", s(&run), "--dump-memory"]);
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("squares: 8 frames"), "{stderr}");
    for t in 0..8 {
        assert!(run.join(format!("squares/frames/{t:05}.lmk")).exists());
    }
    assert!(!run.join("squares/frames/00008.lmk").exists());
    assert!(run.join("squares/result.json").exists());
    assert!(run.join("squares/memory.json").exists());
    assert!(run.join("run_meta.json").exists());

    let table = cptrack_ok(&["inspect", s(&run.join("squares/result.json"))]);
    let table = String::from_utf8(table.stdout).unwrap();
    assert!(table.contains("birth") && table.contains("death"), "{table}");
    assert_eq!(
        table.lines().filter(|l| l.trim_end().ends_with(" 8")).count(),
        4,
        "{table}"
    );

    let mem = cptrack_ok(&["inspect", s(&run.join("squares/memory.json"))]);
    assert!(String::from_utf8(mem.stdout).unwrap().starts_with("memory: "));
}

#[test]
fn rerun_from_meta_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "seq", &three_squares(6));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    cptrack_ok(&[
        "track",
        s(&manifest),
        "--out",
        s(&a),
        "--out-limit",
        "4",
        "--k-points",
        "2",
    ]);
    cptrack_ok(&["track", "--from-meta", s(&a.join("run_meta.json")), "--out", s(&b)]);
    assert_eq!(hash_dir(&a), hash_dir(&b));
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("run_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["out_limit"], 4);
    assert_eq!(meta["config"]["k_points"], 2);
}

#[test]
fn missing_manifest_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no_such_manifest.json");
    let out = cptrack(&["track", s(&missing), "--out", s(&dir.path().join("run"))]);
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("no_such_manifest.json"), "{stderr}");
}

#[test]
fn bad_config_reports_file_and_field() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "seq", &three_squares(2));
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "[detect]\ngrid_sid = 4\n").unwrap();
    let out = cptrack(&[
        "track",
        s(&manifest),
        "--out",
        s(&dir.path().join("run")),
        "--config",
        s(&cfg),
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("cfg.toml") && stderr.contains("grid_sid"), "{stderr}");
}

#[test]
fn config_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "seq", &three_squares(2));
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"out_limit": 3}"#).unwrap();
    let run = dir.path().join("run");
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_cptrack"))
        .args(["track", s(&manifest), "--out", s(&run)])
        .env("CPTRACK_CONFIG", &cfg)
        .output()
        .unwrap();
    assert!(out.status.success());
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("run_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["out_limit"], 3);
}

#[test]
fn eval_of_ground_truth_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "seq", &three_squares(5));
    let pred = dir.path().join("pred");
    std::fs::create_dir_all(pred.join("frames")).unwrap();
    for t in 0..5 {
        let name = format!("{t:05}.lmk");
        std::fs::copy(
            dir.path().join("seq/masks").join(&name),
            pred.join("frames").join(&name),
        )
        .unwrap();
    }
    let report = dir.path().join("report.json");
    cptrack_ok(&["eval", "--pred", s(&pred), "--gt", s(&manifest), "--out", s(&report)]);
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["mean_st_iou"], 1.0);
    assert_eq!(r["id_switches"], 0);
    assert_eq!(r["ar_at_n"]["100"], 1.0);
}

#[test]
fn eval_rejects_malformed_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "seq", &three_squares(2));
    let pred = dir.path().join("pred");
    std::fs::create_dir_all(pred.join("frames")).unwrap();
    std::fs::copy(dir.path().join("seq/masks/00000.lmk"), pred.join("frames/00000.lmk")).unwrap();
    std::fs::write(pred.join("frames/00001.lmk"), b"not a mask").unwrap();
    let out = cptrack(&["eval", "--pred", s(&pred), "--gt", s(&manifest)]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("00001.lmk"));

    // A gap in the frame numbering is malformed too.
    std::fs::rename(pred.join("frames/00001.lmk"), pred.join("frames/00002.lmk")).unwrap();
    assert!(!cptrack(&["eval", "--pred", s(&pred), "--gt", s(&manifest)])
        .status
        .success());
}

#[test]
fn disabling_cycle_pairs_changes_output_on_deforming_objects() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "seq", &deforming_ellipses(3));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let init = ["--init", "ground-truth"];
    cptrack_ok(&[&["track", s(&manifest), "--out", s(&a)][..], &init].concat());
    cptrack_ok(
        &[
            &["track", s(&manifest), "--out", s(&b), "--disable-cycle-pairs"][..],
            &init,
        ]
        .concat(),
    );
    assert_ne!(hash_dir(&a.join("deform3")), hash_dir(&b.join("deform3")));
}

#[test]
fn jobs_do_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let m1 = synth(dir.path(), "s1", &three_squares(4));
    let mut other = three_squares(4);
    other["name"] = "other".into();
    other["seed"] = 9.into();
    let m2 = synth(dir.path(), "s2", &other);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    cptrack_ok(&["track", s(&m1), s(&m2), "--out", s(&a)]);
    cptrack_ok(&["track", s(&m1), s(&m2), "--out", s(&b), "--jobs", "2"]);
    assert_eq!(hash_dir(&a), hash_dir(&b));
    assert!(a.join("other/result.json").exists());
}

#[test]
fn duplicate_sequence_names_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), "s1", &three_squares(2));
    let out = cptrack(&["track", s(&m), s(&m), "--out", s(&dir.path().join("run"))]);
    assert!(!out.status.success());
}
