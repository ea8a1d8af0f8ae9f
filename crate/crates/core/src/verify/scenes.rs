//! Seeded random scenes for tests and self-checks.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::camera::{Camera, Intrinsics, Pose, Vec3};
use crate::error::Result;
use crate::gaussian::{Gaussian, GaussianSet};
use crate::render::{Splat2D, DILATION};

/// Random image-plane splats around a `width × height` image. About one in
/// eight shares its depth with another splat and one in eight is fully
/// opaque, past the alpha clamp.
pub fn random_splats<R: Rng + ?Sized>(rng: &mut R, n: usize, width: usize, height: usize) -> Vec<Splat2D> {
    (0..n)
        .map(|index| {
            let (sx, sy) = (rng.gen_range(0.4..6.0f64), rng.gen_range(0.4..6.0f64));
            let theta = rng.gen_range(0.0..core::f64::consts::PI);
            let (c, s) = (libm::cos(theta), libm::sin(theta));
            let (vx, vy) = (sx * sx, sy * sy);
            let depth = if rng.gen_bool(0.125) {
                rng.gen_range(1..4) as f64
            } else {
                rng.gen_range(0.1..10.0)
            };
            Splat2D {
                mean: [rng.gen_range(-8.0..width as f64 + 8.0), rng.gen_range(-8.0..height as f64 + 8.0)],
                cov: [c * c * vx + s * s * vy + DILATION, c * s * (vx - vy), s * s * vx + c * c * vy + DILATION],
                depth,
                opacity: if rng.gen_bool(0.125) { 1.0 } else { rng.gen_range(0.0..1.0) },
                color: [rng.gen(), rng.gen(), rng.gen()],
                index,
            }
        })
        .collect()
}

/// Random Gaussians inside the cube `[-extent, extent]³`.
pub fn random_gaussians<R: Rng + ?Sized>(rng: &mut R, n: usize, extent: f64) -> GaussianSet<f64> {
    let gaussians = (0..n)
        .map(|_| {
            let mut q: [f64; 4] = core::array::from_fn(|_| StandardNormal.sample(rng));
            let norm = libm::sqrt(q.iter().map(|v| v * v).sum());
            if norm < 1e-6 {
                q = [1.0, 0.0, 0.0, 0.0];
            } else {
                q = q.map(|v| v / norm);
            }
            Gaussian {
                mean: core::array::from_fn(|_| rng.gen_range(-extent..extent)),
                opacity: rng.gen_range(0.05..0.95),
                scale: core::array::from_fn(|_| extent * libm::exp(rng.gen_range(-4.5..-1.5))),
                rotation: q,
                color: core::array::from_fn(|_| rng.gen_range(0.02..0.98)),
            }
        })
        .collect();
    GaussianSet { gaussians }
}

/// Camera on a circle of `radius` around the origin in the `xz` plane,
/// slightly above it, looking at the origin. `+y` is down.
pub fn orbit_camera(angle: f64, radius: f64, width: usize, height: usize, fov_x: f64) -> Result<Camera> {
    let eye = Vec3::new(radius * libm::sin(angle), -0.25 * radius, -radius * libm::cos(angle));
    let pose = Pose::look_at(eye, Vec3::zeros(), Vec3::new(0.0, -1.0, 0.0))?;
    Ok(Camera::new(Intrinsics::from_fov(fov_x, width, height)?, pose))
}

/// `n` cameras on a jittered arc of radius about 3 facing the origin.
pub fn arc_cameras<R: Rng + ?Sized>(rng: &mut R, n: usize, width: usize, height: usize) -> Result<Vec<Camera>> {
    let span = core::f64::consts::FRAC_PI_2;
    (0..n)
        .map(|i| {
            let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
            let angle = span * (t - 0.5) + rng.gen_range(-0.05..0.05);
            let radius = 3.0 + rng.gen_range(-0.2..0.2);
            let mut cam = orbit_camera(angle, radius, width, height, 0.9)?;
            let eye = cam.pose.center() + Vec3::new(0.0, rng.gen_range(-0.2..0.2), 0.0);
            cam.pose = Pose::look_at(eye, Vec3::zeros(), Vec3::new(0.0, -1.0, 0.0))?;
            Ok(cam)
        })
        .collect()
}

/// Renders `set` from every camera with the tiled renderer.
pub fn render_views<T: crate::Real>(set: &GaussianSet<T>, cameras: &[Camera], background: [f64; 3]) -> Vec<crate::update::ViewInput<T>> {
    cameras
        .iter()
        .map(|cam| {
            let k = &cam.intrinsics;
            let target = crate::render::TargetConfig::new(k.width, k.height).with_background(background);
            let img = crate::render::rasterize_tiled(&crate::render::project(set, cam), &target).image;
            crate::update::ViewInput {
                camera: *cam,
                image: img.cast(),
            }
        })
        .collect()
}
