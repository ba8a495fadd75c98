use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::{UnitQuaternion, Vector3};
use splatslide::geo::parse_images_txt;
use splatslide::ply::{payload_offset, read_ply_file, write_ply_file};
use splatslide::{Gaussian, Scene};
use splatslide_cli::scenario::{slope_smoke, write_config};
use splatslide_cli::stages::{StageStatus, SCENE_FILE};
use splatslide_cli::{cmd_run, PipelineConfig, RunOptions};

fn splatslide(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splatslide"))
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .expect("binary runs")
}

fn smoke(dir: &Path) -> (PipelineConfig, PathBuf) {
    let cfg = slope_smoke(dir).unwrap();
    let path = dir.join("pipeline.json");
    write_config(&cfg, &path).unwrap();
    (cfg, path)
}

fn frames(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "ppm"))
        .collect();
    v.sort();
    v
}

#[test]
fn smoke_run_is_idempotent_and_leaves_inputs_alone() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, path) = smoke(dir.path());
    let before = std::fs::read(&cfg.paths.ply).unwrap();

    let reports = cmd_run(&cfg, RunOptions::default()).unwrap();
    assert!(reports.iter().all(|r| r.status == StageStatus::Ran));
    let fill = read_ply_file(cfg.paths.output_dir.join("fill").join(SCENE_FILE)).unwrap();
    assert!((1500..3000).contains(&fill.len()), "{} particles", fill.len());
    let rendered = frames(&cfg.paths.output_dir.join("render"));
    assert_eq!(rendered.len(), 5);
    assert!(rendered[0].ends_with("frame_000000.ppm"));

    let again = cmd_run(&cfg, RunOptions::default()).unwrap();
    assert!(again.iter().all(|r| r.status == StageStatus::Skipped));
    let out = splatslide(&path, &["run"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("skipping"));

    let forced = cmd_run(&cfg, RunOptions { force: true, threads: 1 }).unwrap();
    assert!(forced.iter().all(|r| r.status == StageStatus::Ran));
    assert_eq!(std::fs::read(&cfg.paths.ply).unwrap(), before);
}

#[test]
fn changed_config_reruns_downstream_only() {
    let dir = tempfile::tempdir().unwrap();
    let (mut cfg, _) = smoke(dir.path());
    cfg.sim.config.n_steps = 10;
    cmd_run(&cfg, RunOptions::default()).unwrap();
    cfg.render.options.background = [0.0; 3];
    let status: Vec<_> = cmd_run(&cfg, RunOptions::default()).unwrap().iter().map(|r| (r.stage, r.status)).collect();
    assert_eq!(
        status,
        vec![
            ("regularize", StageStatus::Skipped),
            ("fill", StageStatus::Skipped),
            ("simulate", StageStatus::Skipped),
            ("render", StageStatus::Ran)
        ]
    );
}

#[test]
fn missing_ply_exits_2_before_any_stage() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, path) = smoke(dir.path());
    std::fs::remove_file(&cfg.paths.ply).unwrap();
    let out = splatslide(&path, &["run"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("paths.ply"));
    assert!(!cfg.paths.output_dir.exists());
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pipeline.json");
    std::fs::write(&path, "{\"paths\": 3}").unwrap();
    assert_eq!(splatslide(&path, &["run"]).status.code(), Some(2));
    assert_eq!(splatslide(&dir.path().join("absent.json"), &["run"]).status.code(), Some(2));
    let (_, good) = smoke(dir.path());
    assert_eq!(splatslide(&good, &["run", "--threads", "0"]).status.code(), Some(2));
}

fn with_poses(dir: &Path, csv: &str) -> PathBuf {
    let (mut cfg, path) = smoke(dir);
    let poses = dir.join("poses.csv");
    std::fs::write(&poses, csv).unwrap();
    cfg.paths.poses = Some(poses);
    write_config(&cfg, &path).unwrap();
    path
}

const HEADER: &str = "image_name,latitude,longitude,altitude,yaw,pitch,roll\n";

#[test]
fn ingest_poses_writes_colmap_records() {
    let dir = tempfile::tempdir().unwrap();
    let csv = format!(
        "{HEADER}a.jpg,22.30,114.17,120,0,-90,0\nb.jpg,22.3001,114.17,121,90,-90,0\nc.jpg,22.30,114.1701,119.5,180,-60,0\n"
    );
    let path = with_poses(dir.path(), &csv);
    let out = splatslide(&path, &["ingest-poses"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let poses_dir = dir.path().join("out").join("poses");
    let cams = parse_images_txt(&std::fs::read_to_string(poses_dir.join("images.txt")).unwrap()).unwrap();
    assert_eq!(cams.iter().map(|c| c.image_id).collect::<Vec<_>>(), vec![1, 2, 3]);
    assert!(cams[0].center().norm() < 1e-9);
    let origin: serde_json::Value = serde_json::from_slice(&std::fs::read(poses_dir.join("origin.json")).unwrap()).unwrap();
    assert_eq!(origin["latitude"], 22.30);
}

#[test]
fn ingest_poses_empty_and_malformed() {
    let dir = tempfile::tempdir().unwrap();
    let path = with_poses(dir.path(), HEADER);
    assert_eq!(splatslide(&path, &["ingest-poses"]).status.code(), Some(0));
    let text = std::fs::read_to_string(dir.path().join("out/poses/images.txt")).unwrap();
    assert!(parse_images_txt(&text).unwrap().is_empty());

    let dir = tempfile::tempdir().unwrap();
    let path = with_poses(dir.path(), &format!("{HEADER}a.jpg,22.3,114.1,10,0,0,0\nb.jpg,91.2,114.1,10,0,0,0\n"));
    let out = splatslide(&path, &["ingest-poses"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 2"), "{err}");
}

fn scaled(scales: [f64; 3]) -> Gaussian {
    Gaussian::from_activated(
        Vector3::new(0.1, 0.2, 2.0),
        Vector3::from(scales),
        UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3),
        0.5,
        Vector3::new(0.1, -0.2, 0.3),
    )
}

fn regularize(dir: &Path, scene: &Scene, args: &[&str]) -> serde_json::Value {
    let (cfg, path) = smoke(dir);
    write_ply_file(scene, &cfg.paths.ply).unwrap();
    let mut full = vec!["regularize", "--report"];
    full.extend_from_slice(args);
    let out = splatslide(&path, &full);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn regularize_feasible_scene_is_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let scene = Scene::new(vec![scaled([0.1, 0.2, 0.25]), scaled([0.3, 0.3, 0.3])]);
    let report = regularize(dir.path(), &scene, &[]);
    assert_eq!(report, serde_json::json!({"loss_before": 0.0, "loss_after": 0.0, "n_clamped": 0}));
    let original = std::fs::read(dir.path().join("slope.ply")).unwrap();
    let written = std::fs::read(dir.path().join("out/regularize/scene.ply")).unwrap();
    assert_eq!(&original[payload_offset(&original).unwrap()..], &written[payload_offset(&written).unwrap()..]);
}

#[test]
fn regularize_one_outlier() {
    let dir = tempfile::tempdir().unwrap();
    let mut gs = vec![scaled([0.1, 0.2, 0.25]); 9];
    gs.insert(4, scaled([0.1, 0.3, 0.6]));
    let report = regularize(dir.path(), &Scene::new(gs), &[]);
    assert!((report["loss_before"].as_f64().unwrap() - 0.3).abs() < 1e-6);
    assert!(report["loss_after"].as_f64().unwrap() < 1e-9);
    assert_eq!(report["n_clamped"], 1);
}

#[test]
fn regularize_r1_makes_everything_isotropic() {
    let dir = tempfile::tempdir().unwrap();
    let scene = Scene::new(vec![scaled([0.1, 0.2, 0.25]), scaled([0.3, 0.3, 0.3]), scaled([0.05, 0.5, 0.1])]);
    let report = regularize(dir.path(), &scene, &["--r", "1"]);
    assert_eq!(report["n_clamped"], 2);
    let out = read_ply_file(dir.path().join("out/regularize/scene.ply")).unwrap();
    for g in &out.gaussians {
        let s = g.scales();
        assert!((s.max() / s.min() - 1.0).abs() < 1e-6, "{s:?}");
    }
}

#[test]
fn json_logs_are_line_oriented() {
    let dir = tempfile::tempdir().unwrap();
    let (_, path) = smoke(dir.path());
    let out = splatslide(&path, &["regularize", "--log-json"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.lines().count() >= 2);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["level"].is_string() && v["msg"].is_string());
    }
}

#[test]
fn stages_need_their_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let (_, path) = smoke(dir.path());
    let out = splatslide(&path, &["simulate"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("simulate"));
}

#[test]
fn surface_can_stay_out_of_the_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let (mut cfg, _) = smoke(dir.path());
    cfg.sim.config.n_steps = 5;
    cfg.sim.include_surface = false;
    cmd_run(&cfg, RunOptions::default()).unwrap();
    let out = &cfg.paths.output_dir;
    let fill: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("fill/report.json")).unwrap()).unwrap();
    let sim: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("simulate/sim.json")).unwrap()).unwrap();
    let total = read_ply_file(out.join("fill").join(SCENE_FILE)).unwrap().len() as u64;
    let surface = fill["surface"].as_u64().unwrap();
    assert_eq!(sim["particles"].as_u64().unwrap() + sim["rejected"].as_u64().unwrap(), total - surface);
}
