//! Scene manifests: posed views with image paths relative to the manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use viewsplat_core::camera::{Camera, Intrinsics, Pose};
use viewsplat_core::update::ViewInput;
use viewsplat_core::Real;

use crate::error::{io_err, Error, Result};
use crate::image::read_png;

/// Rotation tolerance for manifest poses.
pub const MANIFEST_ROTATION_TOL: f64 = 1e-4;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub image_path: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major 4×4 camera-to-world matrix.
    pub c2w: Vec<f64>,
}

impl ViewEntry {
    pub fn from_camera(image_path: String, cam: &Camera) -> Self {
        let k = &cam.intrinsics;
        Self {
            image_path,
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
            c2w: cam.pose.to_c2w().to_vec(),
        }
    }

    pub fn camera(&self) -> Result<Camera> {
        let m: [f64; 16] = self
            .c2w
            .as_slice()
            .try_into()
            .map_err(|_| Error::Invalid(format!("c2w of {} has {} values, expected 16", self.image_path, self.c2w.len())))?;
        let k = Intrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)?;
        Ok(Camera::new(k, Pose::from_c2w(&m, MANIFEST_ROTATION_TOL)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub name: String,
    /// Depth bounds of the scene content in world units.
    pub near: f64,
    pub far: f64,
    pub views: Vec<ViewEntry>,
}

/// A manifest with its images loaded.
#[derive(Debug, Clone)]
pub struct Scene<T> {
    pub dir: PathBuf,
    pub manifest: SceneManifest,
    pub views: Vec<ViewInput<T>>,
}

/// Accepts a scene directory or a manifest path.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

pub fn read_manifest(path: &Path) -> Result<SceneManifest> {
    let path = manifest_path(path);
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let m: SceneManifest = serde_json::from_str(&text).map_err(|source| Error::Json { path: path.clone(), source })?;
    for v in &m.views {
        v.camera()
            .map_err(|e| Error::Invalid(format!("{}: view {}: {e}", path.display(), v.image_path)))?;
    }
    Ok(m)
}

pub fn write_manifest(path: &Path, m: &SceneManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(m).expect("manifest serializes");
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

/// Reads the manifest and every image it names.
pub fn load_scene<T: Real>(path: &Path) -> Result<Scene<T>> {
    let mpath = manifest_path(path);
    let manifest = read_manifest(&mpath)?;
    let dir = mpath.parent().map(Path::to_path_buf).unwrap_or_default();
    let views = manifest
        .views
        .iter()
        .map(|v| {
            let image = read_png::<T>(&dir.join(&v.image_path))?;
            if image.shape() != [v.height, v.width, 3] {
                return Err(Error::Invalid(format!(
                    "{}: image is {:?}, manifest says {}×{}",
                    v.image_path,
                    image.shape(),
                    v.height,
                    v.width
                )));
            }
            Ok(ViewInput { camera: v.camera()?, image })
        })
        .collect::<Result<_>>()?;
    Ok(Scene { dir, manifest, views })
}
