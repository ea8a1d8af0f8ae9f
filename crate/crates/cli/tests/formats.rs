use std::path::Path;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use viewsplat::checkpoint::{self, load_checkpoint, save_checkpoint};
use viewsplat::image::{quantize, read_png, read_raw_f32, write_png, write_raw_f32};
use viewsplat::manifest::{load_scene, read_manifest, write_manifest, SceneManifest, ViewEntry};
use viewsplat::ply::{read_ply, write_ply, SplatFile, PROPERTIES, SH_C0};
use viewsplat::Error;
use viewsplat_core::config::ModelConfig;
use viewsplat_core::model::Model;
use viewsplat_core::train::reconstruct_scene;
use viewsplat_core::verify::{arc_cameras, random_gaussians, render_views};
use viewsplat_core::Tensor;

fn tiny_config() -> ModelConfig {
    ModelConfig {
        layers: 1,
        hidden: 16,
        heads: 2,
        patch: 4,
        ..ModelConfig::default()
    }
}

#[test]
fn ply_header_lists_properties_in_order() {
    let file = SplatFile::from_gaussians(&random_gaussians(&mut ChaCha8Rng::seed_from_u64(1), 3, 1.0));
    let expected = "ply\nformat binary_little_endian 1.0\nelement vertex 3\n\
        property float x\nproperty float y\nproperty float z\n\
        property float nx\nproperty float ny\nproperty float nz\n\
        property float f_dc_0\nproperty float f_dc_1\nproperty float f_dc_2\n\
        property float opacity\n\
        property float scale_0\nproperty float scale_1\nproperty float scale_2\n\
        property float rot_0\nproperty float rot_1\nproperty float rot_2\nproperty float rot_3\n\
        end_header\n";
    assert_eq!(file.header(), expected);
    assert_eq!(PROPERTIES.len(), 17);
    assert_eq!(file.to_bytes().len(), expected.len() + 3 * 17 * 4);
}

#[test]
fn ply_encodes_activations_inversely() {
    let mut set = random_gaussians(&mut ChaCha8Rng::seed_from_u64(2), 1, 1.0);
    let g = &mut set.gaussians[0];
    g.opacity = 0.5;
    g.color = [0.5, 0.5 + SH_C0, 0.5 - SH_C0];
    g.scale = [1.0, std::f64::consts::E, 1.0];
    let r = SplatFile::from_gaussians(&set).records[0];
    assert_eq!(&r[3..6], &[0.0, 0.0, 0.0]);
    assert_eq!(&r[6..9], &[0.0, 1.0, -1.0]);
    assert_eq!(r[9], 0.0);
    assert!((r[11] - 1.0).abs() < 1e-7);
}

#[test]
fn ply_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let file = SplatFile::from_gaussians(&random_gaussians(&mut ChaCha8Rng::seed_from_u64(3), 200, 1.0));
    let a = dir.path().join("a.ply");
    let b = dir.path().join("b.ply");
    write_ply(&a, &file).unwrap();
    let loaded = read_ply(&a).unwrap();
    assert_eq!(loaded, file);
    write_ply(&b, &loaded).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn ply_corruption_reports_byte_offset() {
    let file = SplatFile::from_gaussians(&random_gaussians(&mut ChaCha8Rng::seed_from_u64(4), 2, 1.0));
    let bytes = file.to_bytes();
    let p = Path::new("x.ply");

    let truncated = &bytes[..bytes.len() - 5];
    match SplatFile::from_bytes(truncated, p) {
        Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, file.header().len()),
        other => panic!("{other:?}"),
    }

    let swapped = String::from_utf8_lossy(&bytes).replacen("property float ny\nproperty float nz", "property float nz\nproperty float ny", 1);
    let at = swapped.find("property float nz").unwrap();
    match SplatFile::from_bytes(swapped.as_bytes(), p) {
        Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, at),
        other => panic!("{other:?}"),
    }

    let bad_count = String::from_utf8_lossy(&bytes).replacen("element vertex 2", "element vertex two", 1);
    match SplatFile::from_bytes(bad_count.as_bytes(), p) {
        Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, "ply\nformat binary_little_endian 1.0\n".len()),
        other => panic!("{other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn ply_bytes_survive_parse(records in prop::collection::vec(prop::array::uniform17(-1e3f32..1e3), 0..40)) {
        let file = SplatFile { records };
        let bytes = file.to_bytes();
        let back = SplatFile::from_bytes(&bytes, Path::new("p.ply")).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
    }
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let model: Model<f32> = Model::new(tiny_config(), 5).unwrap();
    let a = dir.path().join("a.ckpt");
    let b = dir.path().join("b.ckpt");
    save_checkpoint(&a, &model).unwrap();
    let loaded = load_checkpoint(&a, None).unwrap();
    assert_eq!(loaded.config, model.config);
    for (p, q) in model.params.iter().zip(loaded.params.iter()) {
        assert_eq!(p.name, q.name);
        assert_eq!(p.kind, q.kind);
        assert_eq!(p.value, q.value);
    }
    save_checkpoint(&b, &loaded).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn checkpoint_header_layout() {
    let model: Model<f32> = Model::new(tiny_config(), 6).unwrap();
    let bytes = checkpoint::to_bytes(&model);
    let n = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + n]).unwrap();
    let obj = header.as_object().unwrap();
    assert!(obj.contains_key(checkpoint::CONFIG_KEY));
    let mut spans: Vec<[u64; 2]> = obj
        .iter()
        .filter(|(k, _)| *k != checkpoint::CONFIG_KEY)
        .map(|(_, v)| {
            assert_eq!(v["dtype"], "f32");
            serde_json::from_value(v["data_offsets"].clone()).unwrap()
        })
        .collect();
    spans.sort();
    assert_eq!(spans[0][0], 0);
    for w in spans.windows(2) {
        assert_eq!(w[0][1], w[1][0]);
    }
    assert_eq!(spans.last().unwrap()[1] as usize, bytes.len() - 8 - n);
    assert_eq!(bytes.len() - 8 - n, 4 * model.params.numel());
}

#[test]
fn checkpoint_config_override_conflict_is_a_shape_error() {
    let model: Model<f32> = Model::new(tiny_config(), 7).unwrap();
    let bytes = checkpoint::to_bytes(&model);
    let wider = ModelConfig { hidden: 32, ..tiny_config() };
    match checkpoint::from_bytes(&bytes, Path::new("m.ckpt"), Some(wider)) {
        Err(Error::Core(viewsplat_core::Error::ParamShape { expected, found, .. })) => assert_ne!(expected, found),
        other => panic!("{:?}", other.map(|_| ())),
    }
    let same = checkpoint::from_bytes(&bytes, Path::new("m.ckpt"), Some(tiny_config())).unwrap();
    assert_eq!(same.params, model.params);
}

#[test]
fn checkpoint_corruption_reports_byte_offset() {
    let model: Model<f32> = Model::new(tiny_config(), 8).unwrap();
    let bytes = checkpoint::to_bytes(&model);
    let p = Path::new("m.ckpt");
    let n = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;

    match checkpoint::from_bytes(&bytes[..bytes.len() - 4], p, None) {
        Err(Error::Format { offset, .. }) => assert!(offset as usize >= 8 + n),
        other => panic!("{:?}", other.map(|_| ())),
    }
    match checkpoint::from_bytes(&bytes[..4], p, None) {
        Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
        other => panic!("{:?}", other.map(|_| ())),
    }
    let mut huge = bytes.clone();
    huge[..8].copy_from_slice(&(u64::MAX - 3).to_le_bytes());
    assert!(matches!(checkpoint::from_bytes(&huge, p, None), Err(Error::Format { offset: 0, .. })));

    let text = String::from_utf8(bytes[8..8 + n].to_vec()).unwrap();
    let text = text.replacen("\"f32\"", "\"f64\"", 1);
    let mut bad = (text.len() as u64).to_le_bytes().to_vec();
    bad.extend_from_slice(text.as_bytes());
    bad.extend_from_slice(&bytes[8 + n..]);
    assert!(matches!(checkpoint::from_bytes(&bad, p, None), Err(Error::Format { .. })));
}

#[test]
fn forward_pass_matches_after_reload() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let set = random_gaussians(&mut rng, 20, 0.8);
    let cams = arc_cameras(&mut rng, 2, 16, 16).unwrap();
    let views = render_views::<f32>(&set.cast(), &cams, [0.0; 3]);
    let model: Model<f32> = Model::new(tiny_config(), 10).unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &model).unwrap();
    let loaded = load_checkpoint(&path, None).unwrap();
    let (a, _) = reconstruct_scene(&model, &views, 0).unwrap();
    let (b, _) = reconstruct_scene(&loaded, &views, 0).unwrap();
    assert_eq!(a, b);
}

#[test]
fn png_round_trip_within_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let img = Tensor::<f64>::from_fn([5, 7, 3], |i| ((i * 37) % 101) as f64 / 100.0);
    let path = dir.path().join("i.png");
    write_png(&path, &img).unwrap();
    let back = read_png::<f64>(&path).unwrap();
    assert_eq!(back.shape(), img.shape());
    for (a, b) in img.data().iter().zip(back.data()) {
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        assert_eq!(quantize(*a) as f64 / 255.0, *b);
    }
}

#[test]
fn raw_dump_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let img = Tensor::<f32>::from_fn([4, 3, 3], |i| i as f32 * 0.013);
    let path = dir.path().join("i.f32");
    write_raw_f32(&path, &img).unwrap();
    assert_eq!(read_raw_f32(&path, 4, 3).unwrap(), img);
    assert!(matches!(read_raw_f32(&path, 4, 4), Err(Error::Format { .. })));
}

#[test]
fn manifest_rejects_skewed_rotation() {
    let dir = tempfile::tempdir().unwrap();
    let cam = arc_cameras(&mut ChaCha8Rng::seed_from_u64(11), 2, 8, 8).unwrap()[0];
    let mut entry = ViewEntry::from_camera("v.png".into(), &cam);
    let mut m = SceneManifest {
        name: "t".into(),
        near: 0.1,
        far: 10.0,
        views: vec![entry.clone()],
    };
    let path = dir.path().join("manifest.json");
    write_manifest(&path, &m).unwrap();
    assert_eq!(read_manifest(dir.path()).unwrap(), m);

    entry.c2w[0] *= 1.01;
    m.views = vec![entry];
    write_manifest(&path, &m).unwrap();
    assert!(matches!(read_manifest(&path), Err(Error::Invalid(_))));
}

#[test]
fn missing_scene_image_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let cam = arc_cameras(&mut ChaCha8Rng::seed_from_u64(12), 2, 8, 8).unwrap()[0];
    let m = SceneManifest {
        name: "t".into(),
        near: 0.1,
        far: 10.0,
        views: vec![ViewEntry::from_camera("absent.png".into(), &cam)],
    };
    write_manifest(&dir.path().join("manifest.json"), &m).unwrap();
    match load_scene::<f32>(dir.path()) {
        Err(Error::Io { path, source }) => {
            assert!(path.ends_with("absent.png"));
            assert_eq!(source.kind(), std::io::ErrorKind::NotFound);
        }
        other => panic!("{:?}", other.map(|_| ())),
    }
}
