use nalgebra::{Rotation3, Unit};
use proptest::prelude::*;
use viewsplat_core::camera::{farthest_point_sample, normalize_poses, plucker_rays, Camera, Intrinsics, Mat3, Pose, Vec3};
use viewsplat_core::gaussian::{activate, unproject, RawGaussianChannels};
use viewsplat_core::{Tape, Tensor};

fn vec3() -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-5.0f64..5.0).prop_map(Vec3::from)
}

fn rotation() -> impl Strategy<Value = Mat3> {
    (prop::array::uniform3(-1.0f64..1.0), 0.0f64..std::f64::consts::TAU).prop_filter_map("axis", |(a, angle)| {
        let axis = Unit::try_new(Vec3::from(a), 1e-3)?;
        Some(Rotation3::from_axis_angle(&axis, angle).into_inner())
    })
}

fn pose() -> impl Strategy<Value = Pose> {
    (rotation(), vec3()).prop_map(|(r, t)| Pose::new(r, t).unwrap())
}

fn camera() -> impl Strategy<Value = Camera> {
    (pose(), 0.6f64..1.8, 2usize..24, 2usize..24).prop_map(|(p, fov, w, h)| Camera::new(Intrinsics::from_fov(fov, w, h).unwrap(), p))
}

fn close(a: &Vec3, b: &Vec3, tol: f64) -> bool {
    (a - b).norm() <= tol * (1.0 + a.norm().max(b.norm()))
}

proptest! {
    #[test]
    fn plucker_rays_are_unit_and_orthogonal(cam in camera()) {
        let map = plucker_rays(&cam, cam.intrinsics.height, cam.intrinsics.width).unwrap();
        for r in map.data.chunks(6) {
            let d = Vec3::new(r[0], r[1], r[2]);
            let m = Vec3::new(r[3], r[4], r[5]);
            prop_assert!((d.norm() - 1.0).abs() < 1e-12);
            prop_assert!(m.dot(&d).abs() < 1e-12);
        }
    }

    #[test]
    fn plucker_moment_is_independent_of_point_on_ray(cam in camera(), t in -3.0f64..3.0) {
        let map = plucker_rays(&cam, 3, 4).unwrap();
        let o = cam.pose.center();
        for r in map.data.chunks(6) {
            let d = Vec3::new(r[0], r[1], r[2]);
            let m = Vec3::new(r[3], r[4], r[5]);
            prop_assert!(close(&(o + t * d).cross(&d), &m, 1e-12));
        }
    }

    #[test]
    fn rays_pass_through_pixel_centers(cam in camera()) {
        let map = plucker_rays(&cam, cam.intrinsics.height, cam.intrinsics.width).unwrap();
        let o = cam.pose.center();
        for v in 0..map.height {
            for u in 0..map.width {
                let r = map.ray(u, v);
                let (x, y, z) = cam.project(&(o + 2.0 * Vec3::new(r[0], r[1], r[2])));
                prop_assert!(z > 0.0);
                prop_assert!((x - (u as f64 + 0.5)).abs() < 1e-9 && (y - (v as f64 + 0.5)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn coarse_rays_sample_fine_pixel_corners(cam in camera(), f in 1usize..4) {
        let (h, w) = (cam.intrinsics.height, cam.intrinsics.width);
        let fine = Camera::new(cam.intrinsics.rescaled(w * f, h * f), cam.pose);
        let coarse = plucker_rays(&fine, h, w).unwrap();
        for v in 0..h {
            for u in 0..w {
                let r = coarse.ray(u, v);
                let expect = fine.ray_direction(f as f64 * (u as f64 + 0.5), f as f64 * (v as f64 + 0.5));
                prop_assert!(close(&Vec3::new(r[0], r[1], r[2]), &expect, 1e-12));
            }
        }
    }

    #[test]
    fn normalized_poses_fit_unit_ball(poses in prop::collection::vec(pose(), 2..8)) {
        let (out, norm) = normalize_poses(&poses).unwrap();
        let max = out.iter().map(|p| p.center().norm()).fold(0.0, f64::max);
        prop_assert!((max - 1.0).abs() < 1e-9);
        for (p, q) in poses.iter().zip(&out) {
            prop_assert!(close(&norm.invert_point(&q.center()), &p.center(), 1e-9));
        }
        let centroid = out.iter().map(|p| p.center()).sum::<Vec3>() / out.len() as f64;
        prop_assert!(centroid.norm() < 1e-9);
    }

    #[test]
    fn normalization_is_idempotent(poses in prop::collection::vec(pose(), 2..8)) {
        let (once, _) = normalize_poses(&poses).unwrap();
        let (twice, norm) = normalize_poses(&once).unwrap();
        prop_assert!((norm.rotation - Mat3::identity()).norm() < 1e-9);
        prop_assert!((norm.scale - 1.0).abs() < 1e-9);
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!(close(&a.center(), &b.center(), 1e-9));
        }
    }

    #[test]
    fn normalization_ignores_world_similarity(poses in prop::collection::vec(pose(), 2..8), r in rotation(), t in vec3(), s in 0.1f64..10.0) {
        let moved: Vec<Pose> = poses.iter().map(|p| Pose::new(r * p.rotation(), s * (r * p.center()) + t).unwrap()).collect();
        let (a, _) = normalize_poses(&poses).unwrap();
        let (b, _) = normalize_poses(&moved).unwrap();
        for (p, q) in a.iter().zip(&b) {
            prop_assert!(close(&p.center(), &q.center(), 1e-7));
            prop_assert!((p.rotation() - q.rotation()).norm() < 1e-7);
        }
    }

    #[test]
    fn fps_picks_distinct_indices_starting_at_zero(points in prop::collection::vec(vec3(), 1..20), frac in 0.0f64..1.0) {
        let count = 1 + ((points.len() - 1) as f64 * frac) as usize;
        let picked = farthest_point_sample(&points, count).unwrap();
        prop_assert_eq!(picked.len(), count);
        prop_assert_eq!(picked[0], 0);
        let mut sorted = picked.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), count);
    }

    #[test]
    fn activations_stay_in_range(rows in prop::collection::vec(prop::array::uniform16(-1e6f64..1e6), 1..12), near in 0.01f64..1.0, ratio in 1.5f64..1e3) {
        let far = near * ratio;
        let mut tape = Tape::<f64>::new();
        let n = rows.len();
        let raw = RawGaussianChannels { var: tape.constant(Tensor::from_fn([n, 16], |i| rows[i / 16][i % 16])), height: 1, width: n };
        let a = activate(&mut tape, &raw, near, far).unwrap();
        prop_assert!(tape.value(a.offset).data().iter().all(|v| v.abs() <= 0.5));
        prop_assert!(tape.value(a.depth).data().iter().all(|&d| d >= near * (1.0 - 1e-12) && d <= far * (1.0 + 1e-12)));
        prop_assert!(tape.value(a.opacity).data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(tape.value(a.colors).data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(tape.value(a.scales).data().iter().all(|&s| s > 0.0 && s <= 2f64.exp() && s.is_finite()));
        for q in tape.value(a.rotations).data().chunks(4) {
            prop_assert!((q.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unprojected_means_sit_at_decoded_distance(cam in camera(), seed in 0u64..1000) {
        let (h, w) = (cam.intrinsics.height, cam.intrinsics.width);
        let mut tape = Tape::<f64>::new();
        let raw = RawGaussianChannels {
            var: tape.constant(Tensor::from_fn([h * w, 16], |i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 250.0 - 2.0)),
            height: h,
            width: w,
        };
        let a = activate(&mut tape, &raw, 0.5, 20.0).unwrap();
        let g = unproject(&mut tape, &a, &cam, h, w).unwrap();
        let o = cam.pose.center();
        let means = tape.value(g.means).data().to_vec();
        let depths = tape.value(a.depth).data().to_vec();
        let offsets = tape.value(a.offset).data().to_vec();
        for i in 0..h * w {
            let p = Vec3::new(means[3 * i], means[3 * i + 1], means[3 * i + 2]);
            prop_assert!(((p - o).norm() - depths[i]).abs() < 1e-9 * depths[i]);
            let (x, y, _) = cam.project(&p);
            prop_assert!((x - ((i % w) as f64 + 0.5 + offsets[2 * i])).abs() < 1e-7);
            prop_assert!((y - ((i / w) as f64 + 0.5 + offsets[2 * i + 1])).abs() < 1e-7);
        }
    }
}

#[test]
fn fps_on_a_line_takes_ends_then_middle() {
    let points: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
    assert_eq!(farthest_point_sample(&points, 3).unwrap(), [0, 9, 4]);
    assert!(farthest_point_sample(&points, 11).is_err());
}
