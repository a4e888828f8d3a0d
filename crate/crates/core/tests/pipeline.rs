mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use common::{config, fixtures, mock, story_path};
use taleforge_core::hmap::Hmap;
use taleforge_core::pipeline::run_pipeline;

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn worker_count_does_not_change_the_output() {
    let tmp = tempfile::tempdir().unwrap();
    let mut outs = Vec::new();
    for workers in [1, 3] {
        let mut cfg = config("run.toml");
        cfg.workers = workers;
        cfg.out = tmp.path().join(format!("w{workers}"));
        let summary = run_pipeline(&cfg, &story_path("three_frames.json"), &fixtures(), &mock()).unwrap();
        assert_eq!(summary.panels.len(), 3);
        assert!(summary.failures.is_empty());
        outs.push(snapshot(&cfg.out));
    }
    assert_eq!(outs[0], outs[1]);
    for k in 1..=3 {
        for suffix in [".ppm", ".layout.txt", ".maskset.json", ".zfg.hmap", ".zbg.hmap", ".bubbles.json", ".report.json"] {
            assert!(outs[0].contains_key(&format!("frame_{k}{suffix}")), "frame_{k}{suffix} missing");
        }
    }
    assert!(outs[0].contains_key("manifest.json"));
    assert!(outs[0].contains_key("story.expanded.json"));
}

#[test]
fn a_failed_frame_leaves_the_others_alone() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config("run_strict.toml");
    cfg.out = tmp.path().to_path_buf();
    let summary = run_pipeline(&cfg, &story_path("crowded.json"), &fixtures(), &mock()).unwrap();

    let frames: Vec<usize> = summary.panels.iter().map(|p| p.frame).collect();
    assert_eq!(frames, [1, 3]);
    assert_eq!(summary.failures.len(), 1);
    let (k, msg) = &summary.failures[0];
    assert_eq!(*k, 2);
    assert!(msg.contains("TooManyBoxes") || msg.contains("at most"), "{msg}");
    assert!(tmp.path().join("frame_2.error.txt").exists());
    assert!(!tmp.path().join("frame_2.ppm").exists());

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&summary.manifest).unwrap()).unwrap();
    let status: Vec<&str> = manifest["frames"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["status"].as_str().unwrap())
        .collect();
    assert_eq!(status, ["ok", "failed", "ok"]);
    assert_eq!(manifest["seed"], 7);
}

#[test]
fn the_manifest_records_the_config_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config("run.toml");
    cfg.out = tmp.path().to_path_buf();
    let summary = run_pipeline(&cfg, &story_path("three_frames.json"), &fixtures(), &mock()).unwrap();
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&summary.manifest).unwrap()).unwrap();
    assert_eq!(manifest["config_hash"], cfg.hash());
    assert_eq!(manifest["story_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn supplied_head_maps_move_the_bubbles() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config("run.toml");
    cfg.out = tmp.path().join("plain");
    run_pipeline(&cfg, &story_path("three_frames.json"), &fixtures(), &mock()).unwrap();
    let plain = fs::read_to_string(cfg.out.join("frame_1.bubbles.json")).unwrap();

    // A peak in the top-left corner for both speakers of frame 1.
    let maps = tmp.path().join("maps");
    fs::create_dir(&maps).unwrap();
    for id in ["mira", "pip"] {
        let mut data = vec![0.0f32; 16 * 16];
        data[16 + 1] = 1.0;
        Hmap::new(16, 16, 1, data).save(&maps.join(format!("frame_1_{id}.hmap"))).unwrap();
    }
    cfg.heatmaps = Some(maps);
    cfg.out = tmp.path().join("maps_out");
    run_pipeline(&cfg, &story_path("three_frames.json"), &fixtures(), &mock()).unwrap();
    let moved = fs::read_to_string(cfg.out.join("frame_1.bubbles.json")).unwrap();
    assert_ne!(plain, moved);
    let bubbles: serde_json::Value = serde_json::from_str(&moved).unwrap();
    let head = &bubbles["bubbles"][0]["head"];
    let (w, h) = (32 * cfg.upscale as i64, 32 * cfg.upscale as i64);
    assert!(head[0].as_i64().unwrap() < w / 4 && head[1].as_i64().unwrap() < h / 4, "{head}");
}
