use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use viewsplat::cli::read_train_config;
use viewsplat::image::read_png;
use viewsplat::ply::read_ply;
use viewsplat_core::config::ViewpointRes;
use viewsplat_core::train::TrainConfig;

fn viewsplat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_viewsplat")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = viewsplat(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn usage_errors_exit_with_two() {
    let out = viewsplat(&["cost", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());

    let out = viewsplat(&[
        "render",
        "--splat",
        "/nonexistent/a.ply",
        "--camera-from-manifest",
        "/nonexistent",
        "--out",
        "/tmp/x.png",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent"));

    assert_eq!(viewsplat(&["--help"]).status.code(), Some(0));
}

#[test]
fn malformed_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(viewsplat(&["cost", "--config", s(&bad)]).status.code(), Some(2));

    let ckpt = dir.path().join("bad.ckpt");
    std::fs::write(&ckpt, [1u8, 2, 3]).unwrap();
    let out = viewsplat(&[
        "infer",
        "--ckpt",
        s(&ckpt),
        "--scene",
        s(dir.path()),
        "--out-splat",
        s(&dir.path().join("o.ply")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn shipped_configs_match_builtins() {
    assert_eq!(read_train_config(&repo_file("configs/default.json")).unwrap(), TrainConfig::default());
    assert_eq!(read_train_config(&repo_file("configs/toy.json")).unwrap(), TrainConfig::toy());
}

#[test]
fn cost_report_for_default_config() {
    let text = ok(&["cost", "--config", s(&repo_file("configs/default.json"))]);
    for row in [
        "cross-attention (full)",
        "3.83 GFLOPs",
        "1.71 GFLOPs",
        "0.81 GFLOPs",
        "185,590,272",
        "262,144",
    ] {
        assert!(text.contains(row), "missing {row:?} in\n{text}");
    }
}

#[test]
fn cost_sweep_writes_csv_rows() {
    let text = ok(&["cost", "--sweep", "layers=3,6,9,12;minibatch=full,quarter"]);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 9);
    assert!(lines[0].starts_with("layers,minibatch,parameters"));
    let params: Vec<u64> = lines[1..]
        .iter()
        .step_by(2)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(params, [47_541_504, 93_557_760, 139_574_016, 185_590_272]);

    let json = ok(&["cost", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["parameters"], 185_590_272);
}

#[test]
fn synth_is_deterministic_and_rerenders_exactly() {
    let root = tempfile::tempdir().unwrap();
    let a = root.path().join("a");
    let b = root.path().join("b");
    for d in [&a, &b] {
        ok(&[
            "synth",
            "--seed",
            "3",
            "--views",
            "4",
            "--res",
            "24x20",
            "--gaussians",
            "30",
            "--out",
            s(d),
        ]);
    }
    let fa = files(&a);
    assert_eq!(fa, files(&b));
    assert_eq!(fa.len(), 6);
    assert_eq!(read_ply(&a.join("ground_truth.ply")).unwrap().len(), 30);

    for view in 0..4 {
        let out = root.path().join(format!("r{view}.png"));
        let v = view.to_string();
        ok(&[
            "render",
            "--splat",
            s(&a.join("ground_truth.ply")),
            "--camera-from-manifest",
            s(&a),
            "--view",
            &v,
            "--out",
            s(&out),
        ]);
        let expected = std::fs::read(a.join(format!("view_{view:03}.png"))).unwrap();
        assert_eq!(std::fs::read(&out).unwrap(), expected);
    }
}

#[test]
fn empty_synth_scene_is_background() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "synth",
        "--gaussians",
        "0",
        "--res",
        "8x12",
        "--background",
        "0.2,0.4,1",
        "--out",
        s(dir.path()),
    ]);
    let img = read_png::<f64>(&dir.path().join("view_001.png")).unwrap();
    assert_eq!(img.shape(), [8, 12, 3]);
    for px in img.data().chunks(3) {
        assert_eq!(px, [51.0 / 255.0, 102.0 / 255.0, 1.0]);
    }
}

#[test]
fn train_then_infer_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    let ckpt = dir.path().join("out/model.ckpt");
    let splat = dir.path().join("out/splat.ply");
    ok(&[
        "synth",
        "--seed",
        "1",
        "--views",
        "3",
        "--res",
        "16x16",
        "--gaussians",
        "20",
        "--out",
        s(&scene),
    ]);
    let log = ok(&["train", "--scene", s(&scene), "--steps", "3", "--seed", "2", "--out", s(&ckpt)]);
    let steps: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(steps.len(), 3);
    assert_eq!(steps[2]["step"], 3);
    assert!(steps.iter().all(|r| r["loss"].as_f64().unwrap().is_finite()));

    let report = ok(&[
        "infer",
        "--ckpt",
        s(&ckpt),
        "--scene",
        s(&scene),
        "--views",
        "2",
        "--viewpoint-res",
        "Q",
        "--out-splat",
        s(&splat),
        "--render-targets",
    ]);
    let (vh, vw) = ViewpointRes::Q.grid(16, 16);
    assert_eq!(read_ply(&splat).unwrap().len(), 2 * vh * vw);
    assert!(report.lines().any(|l| l.contains("\"psnr\"")), "{report}");
    let rendered = std::fs::read_dir(dir.path().join("out"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().contains("_view_"))
        .count();
    assert_eq!(rendered, 1);
}

#[test]
fn infer_on_eight_views_at_256_writes_one_splat_per_half_res_pixel() {
    let dir = tempfile::tempdir().unwrap();
    let small = dir.path().join("small");
    let big = dir.path().join("big");
    let ckpt = dir.path().join("m.ckpt");
    let splat = dir.path().join("splat.ply");
    ok(&["synth", "--seed", "4", "--views", "3", "--out", s(&small)]);
    ok(&["train", "--scene", s(&small), "--steps", "2", "--out", s(&ckpt)]);
    ok(&["synth", "--seed", "5", "--views", "8", "--res", "256x256", "--out", s(&big)]);
    ok(&[
        "infer",
        "--ckpt",
        s(&ckpt),
        "--scene",
        s(&big),
        "--views",
        "8",
        "--viewpoint-res",
        "H",
        "--minibatch",
        "full",
        "--out-splat",
        s(&splat),
    ]);
    assert_eq!(read_ply(&splat).unwrap().len(), 131_072);
}
