//! Files on disk through tracking and scoring.

use cptrack_core::evalkit::{cycle_consistency, evaluate, generate, ObjectSpec, Shape, SynthSpec};
use cptrack_core::tensor_io::{read_embedding_grid, read_label_mask, ManifestSequence};
use cptrack_core::tracker::{run, run_frames};
use cptrack_core::{Error, InitMode, TrackerConfig};

fn spec(frames: usize, sigma: f64) -> SynthSpec {
    SynthSpec {
        name: "disk".into(),
        height: 20,
        width: 20,
        dim: 12,
        frames,
        seed: 11,
        noise_sigma: sigma,
        objects: vec![
            ObjectSpec {
                shape: Shape::Rect,
                size: [4.0, 4.0],
                start: Some([5.0, 4.0]),
                velocity: [0.0, 1.0],
                deformation: 0.0,
                deformation_period: 20.0,
                appear_at: None,
                vanish_at: None,
            },
            ObjectSpec {
                shape: Shape::Ellipse,
                size: [5.0, 5.0],
                start: Some([14.0, 13.0]),
                velocity: [-0.5, 0.0],
                deformation: 0.0,
                deformation_period: 20.0,
                appear_at: None,
                vanish_at: None,
            },
        ],
        parts: vec![],
    }
}

#[test]
fn written_sequence_reads_back_and_tracks_like_in_memory() {
    let dir = tempfile::tempdir().unwrap();
    let seq = generate(&spec(8, 0.05)).unwrap();
    let manifest = seq.write(dir.path()).unwrap();

    let opened = ManifestSequence::open(&manifest).unwrap();
    assert_eq!(opened.len(), 8);
    assert_eq!(opened.manifest.name, "disk");
    for t in 0..8 {
        assert_eq!(opened.read_frame(t).unwrap(), seq.frames[t]);
        assert_eq!(opened.read_mask(t).unwrap().as_ref(), Some(&seq.labels[t]));
    }
    assert_eq!(
        read_embedding_grid(dir.path().join("frames/00003.egr")).unwrap(),
        seq.frames[3]
    );
    assert_eq!(
        read_label_mask(dir.path().join("masks/00003.lmk")).unwrap(),
        seq.labels[3]
    );

    let config = TrackerConfig::default();
    let from_disk = run(&opened, &config, InitMode::GroundTruth).unwrap();
    let in_memory = run_frames(
        "disk",
        seq.frames.iter().cloned().map(Ok),
        Some(&seq.labels[0]),
        &config,
    )
    .unwrap();
    assert_eq!(from_disk.label_maps, in_memory.label_maps);
    assert_eq!(from_disk.label_maps[0], seq.labels[0]);

    let report = evaluate(&from_disk.label_maps, &seq.labels).unwrap();
    assert_eq!(report.id_switches, 0);
    assert!(report.mean_st_iou > 0.9, "{report:?}");
}

#[test]
fn ground_truth_init_needs_a_first_mask() {
    let dir = tempfile::tempdir().unwrap();
    let seq = generate(&spec(2, 0.0)).unwrap();
    let manifest = seq.write(dir.path()).unwrap();
    let text = std::fs::read_to_string(&manifest).unwrap();
    let mut json: serde_json::Value = serde_json::from_str(&text).unwrap();
    json["frames"][0].as_object_mut().unwrap().remove("mask");
    std::fs::write(&manifest, json.to_string()).unwrap();
    let opened = ManifestSequence::open(&manifest).unwrap();
    let err = run(&opened, &TrackerConfig::default(), InitMode::GroundTruth).unwrap_err();
    assert!(matches!(err, Error::Manifest { .. }), "{err}");
    // Detection needs no mask.
    assert!(run(&opened, &TrackerConfig::default(), InitMode::Detect).is_ok());
}

#[test]
fn missing_frame_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let seq = generate(&spec(3, 0.0)).unwrap();
    let manifest = seq.write(dir.path()).unwrap();
    std::fs::remove_file(dir.path().join("frames/00001.egr")).unwrap();
    let err = ManifestSequence::open(&manifest).unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err}");
}

#[test]
fn noise_free_forward_backward_agree() {
    let seq = generate(&spec(10, 0.0)).unwrap();
    // Re-detection would admit the unlabeled background as a new object.
    let config = TrackerConfig {
        redetect_interval: 0,
        ..TrackerConfig::default()
    };
    let fwd = run_frames("f", seq.frames.iter().cloned().map(Ok), Some(&seq.labels[0]), &config).unwrap();
    let report = cycle_consistency(&seq.frames, &fwd.label_maps, &config).unwrap();
    assert!(
        report.lost_forward.is_empty() && report.born_forward.is_empty(),
        "{report:?}"
    );
    assert_eq!(report.per_object.len(), 2);
    assert!(report.iou.unwrap() >= 0.95, "{report:?}");
}
