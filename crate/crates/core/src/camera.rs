//! Pinhole cameras, Plücker ray maps, scene normalization and farthest point
//! view selection.
//!
//! Poses are camera-to-world. The rotation's columns are the camera's right,
//! down and forward axes in world coordinates (`+z` looks forward), and pixel
//! `(u, v)` is sampled through its center `(u + 0.5, v + 0.5)`.

use alloc::vec::Vec;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Orthonormality tolerance for rotations.
pub const ROTATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Symmetric camera with the principal point at the image center.
    pub fn from_fov(fov_x: f64, width: usize, height: usize) -> Result<Self> {
        let fx = width as f64 / (2.0 * libm::tan(fov_x / 2.0));
        Self::new(fx, fx, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.width > 0
            && self.height > 0
            && (0.0..=self.width as f64).contains(&self.cx)
            && (0.0..=self.height as f64).contains(&self.cy);
        if ok {
            Ok(())
        } else {
            Err(validation(alloc::format!("invalid intrinsics {:?}", self)))
        }
    }

    /// Intrinsics for the same camera sampled on a `width × height` grid.
    pub fn rescaled(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
        }
    }
}

/// Camera-to-world rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Mat3,
    translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        check_rotation(&rotation)?;
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Camera at `eye` whose forward axis points at `target`. `up_hint` only
    /// disambiguates roll.
    pub fn look_at(eye: Vec3, target: Vec3, up_hint: Vec3) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| validation("look_at: eye and target coincide"))?;
        let right = (-up_hint)
            .cross(&forward)
            .try_normalize(1e-12)
            .ok_or_else(|| validation("look_at: up hint parallel to view direction"))?;
        let down = forward.cross(&right);
        Self::new(Mat3::from_columns(&[right, down, forward]), eye)
    }

    /// Row-major 4×4 camera-to-world matrix.
    pub fn from_c2w(m: &[f64; 16], tol: f64) -> Result<Self> {
        let rotation = Mat3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        check_rotation_tol(&rotation, tol)?;
        Ok(Self {
            rotation,
            translation: Vec3::new(m[3], m[7], m[11]),
        })
    }

    pub fn to_c2w(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
            0.0,
            0.0,
            0.0,
            1.0,
        ]
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        self.translation
    }

    pub fn forward(&self) -> Vec3 {
        self.rotation.column(2).into_owned()
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }
}

fn check_rotation(r: &Mat3) -> Result<()> {
    check_rotation_tol(r, ROTATION_TOL)
}

fn check_rotation_tol(r: &Mat3, tol: f64) -> Result<()> {
    let err = (r.transpose() * r - Mat3::identity()).abs().max();
    let det = r.determinant();
    if err <= tol && (det - 1.0).abs() <= tol {
        Ok(())
    } else {
        Err(validation(alloc::format!(
            "rotation is not orthonormal (|RᵀR - I| = {:e}, det = {})",
            err,
            det
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, pose: Pose) -> Self {
        Self { intrinsics, pose }
    }

    pub fn rescaled(&self, width: usize, height: usize) -> Self {
        Self {
            intrinsics: self.intrinsics.rescaled(width, height),
            pose: self.pose,
        }
    }

    /// Unit world direction of the ray through continuous pixel coordinate
    /// `(x, y)`.
    pub fn ray_direction(&self, x: f64, y: f64) -> Vec3 {
        let k = &self.intrinsics;
        let local = Vec3::new((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
        (self.pose.rotation * local).normalize()
    }

    /// Pinhole projection of a world point to continuous pixel coordinates
    /// and depth along the forward axis.
    pub fn project(&self, p: &Vec3) -> (f64, f64, f64) {
        let c = self.pose.world_to_camera(p);
        let k = &self.intrinsics;
        (k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy, c.z)
    }
}

/// Per-pixel 6-vectors `(d, m)` with `d` the unit world direction and
/// `m = o × d`, laid out `height × width × 6`.
#[derive(Debug, Clone, PartialEq)]
pub struct PluckerRayMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl PluckerRayMap {
    pub fn ray(&self, u: usize, v: usize) -> &[f64] {
        let i = (v * self.width + u) * 6;
        &self.data[i..i + 6]
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_fn([self.height, self.width, 6], |i| T::of(self.data[i]))
    }
}

/// Plücker rays for every pixel center of an `out_h × out_w` grid spanning
/// the camera's full field of view.
pub fn plucker_rays(camera: &Camera, out_h: usize, out_w: usize) -> Result<PluckerRayMap> {
    if out_h == 0 || out_w == 0 {
        return Err(validation("ray map resolution must be at least 1×1"));
    }
    check_rotation(&camera.pose.rotation)?;
    let cam = camera.rescaled(out_w, out_h);
    let o = cam.pose.center();
    let mut data = Vec::with_capacity(out_h * out_w * 6);
    for v in 0..out_h {
        for u in 0..out_w {
            let d = cam.ray_direction(u as f64 + 0.5, v as f64 + 0.5);
            let m = o.cross(&d);
            data.extend_from_slice(&[d.x, d.y, d.z, m.x, m.y, m.z]);
        }
    }
    Ok(PluckerRayMap {
        height: out_h,
        width: out_w,
        data,
    })
}

/// Similarity transform `x ↦ scale · Rᵀ (x - center)` mapping world
/// coordinates into the normalized scene frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneNormalization {
    pub rotation: Mat3,
    pub center: Vec3,
    pub scale: f64,
}

impl SceneNormalization {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            center: Vec3::zeros(),
            scale: 1.0,
        }
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.scale * (self.rotation.transpose() * (p - self.center))
    }

    pub fn invert_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * (p / self.scale) + self.center
    }

    pub fn apply_pose(&self, pose: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.transpose() * pose.rotation,
            translation: self.apply_point(&pose.translation),
        }
    }

    pub fn apply_camera(&self, cam: &Camera) -> Camera {
        Camera::new(cam.intrinsics, self.apply_pose(&cam.pose))
    }
}

/// Re-expresses poses in their averaged reference frame and scales so the
/// farthest camera sits at distance 1.
///
/// The frame is anchored on the mean forward axis; the mean down axis is
/// orthogonalized against it and right completes the basis as down × forward.
/// When the averaged axes degenerate the first pose's axes are used instead.
pub fn normalize_poses(poses: &[Pose]) -> Result<(Vec<Pose>, SceneNormalization)> {
    if poses.is_empty() {
        return Err(validation("normalize_poses needs at least one pose"));
    }
    let n = poses.len() as f64;
    let center = poses.iter().map(|p| p.translation).sum::<Vec3>() / n;
    let mean_axis = |c: usize| poses.iter().map(|p| p.rotation.column(c).into_owned()).sum::<Vec3>() / n;
    let frame = (|| {
        let forward = mean_axis(2).try_normalize(1e-8)?;
        let down = mean_axis(1);
        let down = (down - forward * down.dot(&forward)).try_normalize(1e-8)?;
        let right = down.cross(&forward);
        Some(Mat3::from_columns(&[right, down, forward]))
    })()
    .unwrap_or(poses[0].rotation);

    let mut norm = SceneNormalization {
        rotation: frame,
        center,
        scale: 1.0,
    };
    let max_dist = poses.iter().map(|p| norm.apply_point(&p.translation).norm()).fold(0.0, f64::max);
    if max_dist >= 1e-8 {
        norm.scale = 1.0 / max_dist;
    }
    let out = poses.iter().map(|p| norm.apply_pose(p)).collect();
    Ok((out, norm))
}

/// Greedy farthest point sampling seeded at index 0. Each pick maximizes the
/// distance to the closest already-chosen point; ties go to the lowest index.
pub fn farthest_point_sample(positions: &[Vec3], count: usize) -> Result<Vec<usize>> {
    if count == 0 || count > positions.len() {
        return Err(validation(alloc::format!("cannot sample {} of {} positions", count, positions.len())));
    }
    let mut chosen = Vec::with_capacity(count);
    let mut min_dist = alloc::vec![f64::INFINITY; positions.len()];
    let mut taken = alloc::vec![false; positions.len()];
    let mut next = 0;
    for _ in 0..count {
        chosen.push(next);
        taken[next] = true;
        let p = positions[next];
        for (i, q) in positions.iter().enumerate() {
            min_dist[i] = min_dist[i].min((q - p).norm());
        }
        let mut best: Option<usize> = None;
        for i in 0..positions.len() {
            if taken[i] {
                continue;
            }
            if best.is_none_or(|b| min_dist[i] > min_dist[b]) {
                best = Some(i);
            }
        }
        match best {
            Some(b) => next = b,
            None => break,
        }
    }
    Ok(chosen)
}
