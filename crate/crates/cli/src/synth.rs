//! Seeded synthetic scenes with a known ground-truth Gaussian set.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use viewsplat_core::gaussian::GaussianSet;
use viewsplat_core::verify::{arc_cameras, random_gaussians, render_views};

use crate::error::{io_err, Error, Result};
use crate::image::write_png;
use crate::manifest::{write_manifest, SceneManifest, ViewEntry, MANIFEST_FILE};
use crate::ply::{write_ply, SplatFile};

pub const GROUND_TRUTH_FILE: &str = "ground_truth.ply";
/// Half edge of the cube the ground-truth Gaussians are drawn from.
pub const SCENE_EXTENT: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOptions {
    pub seed: u64,
    pub views: usize,
    pub height: usize,
    pub width: usize,
    pub gaussians: usize,
    pub background: [f64; 3],
}

/// Ground truth as stored on disk: sampled, then passed through the splat
/// file encoding so renders from the saved file reproduce the images.
pub fn ground_truth(opts: &SynthOptions, rng: &mut ChaCha8Rng) -> (SplatFile, GaussianSet<f64>) {
    let file = SplatFile::from_gaussians(&random_gaussians(rng, opts.gaussians, SCENE_EXTENT));
    let set = file.to_gaussians();
    (file, set)
}

/// Writes `manifest.json`, one PNG per view and the ground-truth splat file.
pub fn synth_scene(opts: &SynthOptions, out: &Path) -> Result<SceneManifest> {
    if opts.views < 2 {
        return Err(Error::Invalid(format!("need at least 2 views, got {}", opts.views)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (file, set) = ground_truth(opts, &mut rng);
    let cameras = arc_cameras(&mut rng, opts.views, opts.width, opts.height)?;
    let views = render_views(&set, &cameras, opts.background);

    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let mut entries = Vec::with_capacity(views.len());
    for (i, v) in views.iter().enumerate() {
        let name = format!("view_{i:03}.png");
        write_png(&out.join(&name), &v.image)?;
        entries.push(ViewEntry::from_camera(name, &v.camera));
    }
    write_ply(&out.join(GROUND_TRUTH_FILE), &file)?;

    let dists = cameras.iter().flat_map(|c| {
        set.gaussians
            .iter()
            .map(move |g| (c.pose.center() - viewsplat_core::camera::Vec3::from(g.mean)).norm())
    });
    let (near, far) = dists.fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d), hi.max(d)));
    let (near, far) = if set.is_empty() {
        (0.1, 10.0)
    } else {
        ((near - SCENE_EXTENT).max(0.01), far + SCENE_EXTENT)
    };
    let manifest = SceneManifest {
        name: format!("synthetic-{}", opts.seed),
        near,
        far,
        views: entries,
    };
    write_manifest(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}
