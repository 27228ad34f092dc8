use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sparsevox::checkpoint::{encode, load_checkpoint, save_checkpoint};
use sparsevox::dataset::load_dataset;
use sparsevox::metrics::EvalReport;
use sparsevox::optim::{initial_scene, TrainConfig};
use sparsevox::synth::{synth_scene, Shape};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparsevox"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_report(p: &Path) -> EvalReport {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_nonzero() {
    assert!(!run(&[]).status.success());
    assert!(!run(&["bogus"]).status.success());
    assert!(!run(&["synth", "--shape", "torus", "--out", "x"]).status.success());
    assert!(!run(&["render", "--scene", "missing.svrx"]).status.success());
    let out = run(&["train", "--data", "/nonexistent", "--out", "/nonexistent/x.svrx"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cameras.json"));
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&["synth", "--shape", "boxes", "--views", "2", "--res", "16", "--out", s(d), "--seed", "5"]);
    }
    let ds = load_dataset(&a).unwrap();
    assert_eq!(ds.frames.len(), 2);
    assert!(ds.bounds.is_some());
    for name in ["cameras.json", "frame_000.png", "frame_001.png", "frame_000.depth"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn eval_identical_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    ok(&["synth", "--shape", "cube", "--views", "3", "--res", "16", "--out", s(&ds)]);
    let report = dir.path().join("r.json");
    ok(&["eval", "--pred", s(&ds), "--gt", s(&ds), "--out", s(&report)]);
    let r = read_report(&report);
    assert_eq!(r.per_frame.len(), 3);
    assert!(r.per_frame.iter().all(|f| f.ssim == 1.0 && f.psnr == 99.0));
}

#[test]
fn zero_iterations_write_the_initial_scene() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    ok(&["synth", "--shape", "sphere", "--views", "2", "--res", "16", "--out", s(&ds)]);
    let cfg_path = dir.path().join("cfg.json");
    let mut cfg = TrainConfig::default().scaled(0);
    cfg.init_level = 3;
    cfg.save(&cfg_path).unwrap();
    let out = dir.path().join("scene.svrx");
    ok(&["train", "--data", s(&ds), "--config", s(&cfg_path), "--out", s(&out)]);

    let dataset = load_dataset(&ds).unwrap();
    cfg.bounds = dataset.bounds;
    let expected = initial_scene::<f32>(&dataset.load_views().unwrap(), &cfg).unwrap();
    assert_eq!(fs::read(&out).unwrap(), encode(&expected));
}

#[test]
fn render_and_mesh_a_known_scene() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    ok(&["synth", "--shape", "sphere", "--views", "3", "--res", "32", "--out", s(&ds)]);
    let scene = dir.path().join("gt.svrx");
    save_checkpoint(&synth_scene(Shape::Sphere, 0).unwrap().cast::<f32>(), &scene).unwrap();

    let pred = dir.path().join("pred");
    ok(&["render", "--scene", s(&scene), "--cameras", s(&ds.join("cameras.json")), "--out", s(&pred), "--depth", "--normal"]);
    for name in ["frame_000.png", "frame_000.depth", "frame_000_normal.png", "cameras.json"] {
        assert!(pred.join(name).exists(), "{name}");
    }
    let report = dir.path().join("r.json");
    ok(&["eval", "--pred", s(&pred), "--gt", s(&ds), "--out", s(&report)]);
    // ground truth uses more samples per voxel and more supersampling
    assert!(read_report(&report).mean_psnr > 25.0);

    let obj = dir.path().join("m.obj");
    ok(&["mesh", "--scene", s(&scene), "--out", s(&obj), "--views", s(&ds.join("cameras.json"))]);
    let text = fs::read_to_string(&obj).unwrap();
    let faces = text.lines().filter(|l| l.starts_with("f ")).count();
    assert!(faces > 100, "{faces} faces");

    let obj2 = dir.path().join("d.obj");
    ok(&["mesh", "--scene", s(&scene), "--out", s(&obj2), "--mode", "density", "--iso", "0.3"]);
    let text = fs::read_to_string(&obj2).unwrap();
    let verts: Vec<[f64; 3]> = text
        .lines()
        .filter_map(|l| l.strip_prefix("v "))
        .map(|l| {
            let v: Vec<f64> = l.split_whitespace().map(|x| x.parse().unwrap()).collect();
            [v[0], v[1], v[2]]
        })
        .collect();
    assert!(!verts.is_empty());
    // sphere of radius 0.6 shape units at world scale 1024, within two voxels
    for v in verts {
        let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() / 1024.0;
        assert!((r - 0.6).abs() < 2.0 / 32.0, "{r}");
    }
}

#[test]
fn sphere_pipeline_overfits() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    ok(&["synth", "--shape", "sphere", "--views", "8", "--res", "64", "--out", s(&ds)]);
    let cfg_path = dir.path().join("cfg.json");
    TrainConfig::default().scaled(2000).save(&cfg_path).unwrap();
    let scene = dir.path().join("scene.svrx");
    let out = ok(&["train", "--data", s(&ds), "--config", s(&cfg_path), "--out", s(&scene), "--seed", "1"]);
    let log = String::from_utf8_lossy(&out.stdout);
    assert_eq!(log.lines().filter(|l| l.starts_with("iter ")).count(), 2000);
    assert!(load_checkpoint(&scene).unwrap().len() > 0);
    let pred = dir.path().join("pred");
    ok(&["render", "--scene", s(&scene), "--cameras", s(&ds.join("cameras.json")), "--out", s(&pred)]);
    let report = dir.path().join("r.json");
    ok(&["eval", "--pred", s(&pred), "--gt", s(&ds), "--out", s(&report)]);
    let r = read_report(&report);
    assert!(r.mean_psnr >= 30.0, "psnr {}", r.mean_psnr);
    assert!(r.mean_ssim >= 0.93, "ssim {}", r.mean_ssim);
}
