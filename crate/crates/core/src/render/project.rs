use alloc::vec::Vec;

use nalgebra::{Matrix2x3, Matrix3};

use super::{Splat2D, DILATION, NEAR_PLANE};
use crate::camera::{Camera, Mat3, Vec3};
use crate::gaussian::GaussianSet;
use crate::scalar::Real;

/// Rotation matrix of a quaternion `(w, x, y, z)`, normalized first.
pub fn quat_to_matrix(q: [f64; 4]) -> Mat3 {
    let n = libm::sqrt(q.iter().map(|v| v * v).sum::<f64>());
    let [w, x, y, z] = if n > 0.0 { q.map(|v| v / n) } else { [1.0, 0.0, 0.0, 0.0] };
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// EWA projection: `Σ2D = J W Σ3D Wᵀ Jᵀ + DILATION·I` with `W` the
/// world-to-camera rotation and `J` the perspective Jacobian at the mean.
/// Gaussians nearer than [`NEAR_PLANE`] are culled.
pub fn project<T: Real>(set: &GaussianSet<T>, camera: &Camera) -> Vec<Splat2D> {
    let k = &camera.intrinsics;
    let w = camera.pose.rotation().transpose();
    let o = camera.pose.center();
    let mut out = Vec::with_capacity(set.len());
    for (index, g) in set.gaussians.iter().enumerate() {
        let mean = Vec3::new(g.mean[0].f64(), g.mean[1].f64(), g.mean[2].f64());
        let t = w * (mean - o);
        if !(t.z >= NEAR_PLANE) {
            continue;
        }
        let r = quat_to_matrix(g.rotation.map(|v| v.f64()));
        let m = r * Mat3::from_diagonal(&Vec3::new(g.scale[0].f64(), g.scale[1].f64(), g.scale[2].f64()));
        let cov_cam = w * (m * m.transpose()) * w.transpose();
        let (iz, iz2) = (1.0 / t.z, 1.0 / (t.z * t.z));
        let j = Matrix2x3::new(k.fx * iz, 0.0, -k.fx * t.x * iz2, 0.0, k.fy * iz, -k.fy * t.y * iz2);
        let cov = j * cov_cam * j.transpose();
        out.push(Splat2D {
            mean: [k.fx * t.x * iz + k.cx, k.fy * t.y * iz + k.cy],
            cov: [cov[(0, 0)] + DILATION, 0.5 * (cov[(0, 1)] + cov[(1, 0)]), cov[(1, 1)] + DILATION],
            depth: t.z,
            opacity: g.opacity.f64(),
            color: g.color.map(|c| c.f64()),
            index,
        });
    }
    out
}
