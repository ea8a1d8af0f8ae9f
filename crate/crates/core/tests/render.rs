use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use viewsplat_core::camera::{Camera, Intrinsics, Pose, Vec3};
use viewsplat_core::gaussian::{Gaussian, GaussianSet, GaussianVars};
use viewsplat_core::render::{
    project, project_on_tape, rasterize_naive_diff, rasterize_tiled, render_oracle, RenderTarget, Splat2D, TargetConfig, ALPHA_MAX,
};
use viewsplat_core::verify::{check_gradients, orbit_camera, random_gaussians, random_splats, GradCheckOptions};
use viewsplat_core::{Tape, Tensor};

fn splat(mean: [f64; 2], var: f64, depth: f64, opacity: f64, color: [f64; 3], index: usize) -> Splat2D {
    Splat2D {
        mean,
        cov: [var, 0.0, var],
        depth,
        opacity,
        color,
        index,
    }
}

fn pixel(r: &RenderTarget, u: usize, v: usize) -> [f64; 3] {
    let w = r.image.shape()[1];
    let d = &r.image.data()[(v * w + u) * 3..][..3];
    [d[0], d[1], d[2]]
}

fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn axis_camera(w: usize, h: usize) -> Camera {
    Camera::new(
        Intrinsics::new(40.0, 40.0, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap(),
        Pose::identity(),
    )
}

fn gaussian(mean: [f64; 3], scale: [f64; 3], opacity: f64, color: [f64; 3]) -> Gaussian<f64> {
    Gaussian {
        mean,
        opacity,
        scale,
        rotation: [1.0, 0.0, 0.0, 0.0],
        color,
    }
}

#[test]
fn empty_scene_is_background() {
    let t = TargetConfig::new(20, 12).with_background([0.2, 0.4, 0.6]);
    for r in [rasterize_tiled(&[], &t), render_oracle(&[], &t)] {
        assert!(r.image.data().chunks(3).all(|c| c == [0.2, 0.4, 0.6]));
    }
}

#[test]
fn single_splat_center_value() {
    let s = splat([8.5, 8.5], 4.0, 1.0, 0.5, [1.0; 3], 0);
    let t = TargetConfig::new(16, 16);
    for r in [rasterize_tiled(&[s], &t), render_oracle(&[s], &t)] {
        assert_eq!(pixel(&r, 8, 8), [0.5; 3]);
    }
}

#[test]
fn two_layer_overlap_by_hand() {
    let front = splat([4.5, 4.5], 1.0, 1.0, 0.6, [1.0, 0.0, 0.0], 1);
    let back = splat([4.5, 4.5], 1.0, 2.0, 0.5, [0.0, 0.0, 1.0], 0);
    let bg = [0.0, 1.0, 0.0];
    let r = render_oracle(&[back, front], &TargetConfig::new(9, 9).with_background(bg));
    // 0.6·red + 0.4·0.5·blue + 0.4·0.5·green
    let expected = [0.6, 0.2, 0.2];
    let got = pixel(&r, 4, 4);
    for ch in 0..3 {
        assert!((got[ch] - expected[ch]).abs() < 1e-15, "{got:?}");
    }
}

#[test]
fn depth_ties_follow_index() {
    let a = splat([4.5, 4.5], 2.0, 1.0, 0.7, [1.0, 0.0, 0.0], 0);
    let b = splat([4.5, 4.5], 2.0, 1.0, 0.7, [0.0, 1.0, 0.0], 1);
    let t = TargetConfig::new(9, 9);
    let ab = render_oracle(&[a, b], &t);
    let ba = render_oracle(&[b, a], &t);
    assert_eq!(ab.image, ba.image);
    let c = pixel(&ab, 4, 4);
    assert!(c[0] > c[1]);
    // Swapping indices swaps the winner.
    let (mut a2, mut b2) = (a, b);
    a2.index = 1;
    b2.index = 0;
    let c2 = pixel(&render_oracle(&[a2, b2], &t), 4, 4);
    assert!(c2[1] > c2[0]);
}

#[test]
fn alpha_is_clamped() {
    let s = splat([2.5, 2.5], 1.0, 1.0, 1.0, [1.0; 3], 0);
    let r = render_oracle(&[s], &TargetConfig::new(5, 5).with_background([0.0; 3]));
    assert_eq!(pixel(&r, 2, 2), [ALPHA_MAX; 3]);
}

#[test]
fn non_psd_splat_is_skipped_and_counted() {
    let mut s = splat([2.5, 2.5], 1.0, 1.0, 0.9, [1.0; 3], 0);
    s.cov = [1.0, 2.0, 1.0];
    let r = rasterize_tiled(&[s], &TargetConfig::new(5, 5));
    assert_eq!(r.stats.non_psd, 1);
    assert!(r.image.data().iter().all(|&v| v == 0.0));
}

#[test]
fn tiled_matches_oracle_on_random_scenes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for scene in 0..20 {
        let (w, h) = (rng.gen_range(8..70), rng.gen_range(8..70));
        let n = rng.gen_range(0..400);
        let splats = random_splats(&mut rng, n, w, h);
        let t = TargetConfig::new(w, h).with_background([rng.gen(), rng.gen(), rng.gen()]);
        let a = rasterize_tiled(&splats, &t);
        let b = render_oracle(&splats, &t);
        let err = max_abs_diff(&a.image, &b.image);
        assert!(err <= 1e-5, "scene {scene}: {err}");
        assert!(a.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn isotropic_on_axis_projects_isotropic() {
    let set = GaussianSet {
        gaussians: vec![gaussian([0.0, 0.0, 3.0], [0.2; 3], 0.5, [0.5; 3])],
    };
    let s = project(&set, &axis_camera(32, 32))[0];
    assert!(s.cov[1].abs() < 1e-6);
    assert!((s.cov[0] - s.cov[2]).abs() < 1e-9);
    assert_eq!(s.mean, [16.0, 16.0]);
}

#[test]
fn doubling_scale_doubles_projected_std() {
    let cam = axis_camera(32, 32);
    let std = |s: f64| {
        let set = GaussianSet {
            gaussians: vec![gaussian([0.0, 0.0, 3.0], [s; 3], 0.5, [0.5; 3])],
        };
        (project(&set, &cam)[0].cov[0] - 0.3).sqrt()
    };
    assert!((std(0.4) / std(0.2) - 2.0).abs() < 1e-12);
}

#[test]
fn projected_means_match_pinhole() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let set = random_gaussians(&mut rng, 200, 1.0);
    let cam = orbit_camera(0.7, 3.0, 48, 32, 1.0).unwrap();
    let splats = project(&set, &cam);
    assert_eq!(splats.len(), 200);
    for s in splats {
        let g = set.gaussians[s.index].mean;
        let (u, v, z) = cam.project(&Vec3::new(g[0], g[1], g[2]));
        assert!((u - s.mean[0]).abs() < 1e-5 && (v - s.mean[1]).abs() < 1e-5);
        assert!((z - s.depth).abs() < 1e-12);
    }
}

#[test]
fn behind_camera_is_culled() {
    let set = GaussianSet {
        gaussians: vec![
            gaussian([0.0, 0.0, -1.0], [0.1; 3], 0.5, [0.5; 3]),
            gaussian([0.0, 0.0, 0.005], [0.1; 3], 0.5, [0.5; 3]),
        ],
    };
    assert!(project(&set, &axis_camera(8, 8)).is_empty());
}

fn render_diff(tape: &mut Tape<f64>, g: &GaussianVars, cam: &Camera) -> viewsplat_core::Var {
    let p = project_on_tape(tape, g, cam).unwrap();
    rasterize_naive_diff(tape, &p, &TargetConfig::new(cam.intrinsics.width, cam.intrinsics.height)).unwrap()
}

#[test]
fn tape_projection_matches_plain() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let set = random_gaussians(&mut rng, 50, 1.0);
    let cam = orbit_camera(2.0, 3.0, 40, 24, 1.1).unwrap();
    let plain = project(&set, &cam);
    let mut tape = Tape::new();
    let g = GaussianVars::from_set(&mut tape, &set, false);
    let p = project_on_tape(&mut tape, &g, &cam).unwrap();
    let (m, c) = (tape.value(p.means).data(), tape.value(p.cov).data());
    for s in plain {
        let i = s.index;
        assert!((m[2 * i] - s.mean[0]).abs() < 1e-9 && (m[2 * i + 1] - s.mean[1]).abs() < 1e-9);
        for j in 0..3 {
            assert!((c[3 * i + j] - s.cov[j]).abs() < 1e-9 * s.cov[j].abs().max(1.0));
        }
    }
}

#[test]
fn naive_matches_tiled_without_saturation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let mut set = random_gaussians(&mut rng, 120, 1.0);
        for g in &mut set.gaussians {
            g.opacity = g.opacity.min(0.9);
        }
        let cam = orbit_camera(rng.gen_range(0.0..6.0), 3.0, 32, 32, 1.0).unwrap();
        let tiled = rasterize_tiled(&project(&set, &cam), &TargetConfig::new(32, 32));
        let mut tape = Tape::new();
        let g = GaussianVars::from_set(&mut tape, &set, false);
        let out = render_diff(&mut tape, &g, &cam);
        let err = max_abs_diff(tape.value(out), &tiled.image);
        assert!(err <= 2e-3, "{err}");
    }
}

fn scene_inputs(set: &GaussianSet<f64>) -> Vec<Tensor<f64>> {
    let mut tape = Tape::new();
    let g = GaussianVars::from_set(&mut tape, set, false);
    [g.means, g.opacity, g.scales, g.rotations, g.colors]
        .iter()
        .map(|&v| tape.value(v).clone())
        .collect()
}

fn vars_from(v: &[viewsplat_core::Var]) -> GaussianVars {
    GaussianVars {
        means: v[0],
        opacity: v[1],
        scales: v[2],
        rotations: v[3],
        colors: v[4],
    }
}

#[test]
fn naive_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut set = random_gaussians(&mut rng, 12, 0.5);
    for g in &mut set.gaussians {
        g.scale = g.scale.map(|s| s * 2.0 + 0.05);
    }
    let cam = orbit_camera(0.3, 2.0, 12, 10, 1.0).unwrap();
    let weights = Tensor::from_fn([10, 12, 3], |_| rng.gen_range(-1.0..1.0));
    let report = check_gradients(&scene_inputs(&set), GradCheckOptions::default(), |t, v| {
        let out = render_diff(t, &vars_from(v), &cam);
        let w = t.constant(weights.clone());
        let p = t.mul(out, w)?;
        Ok(t.sum(p))
    })
    .unwrap();
    assert!(report.max_rel_err <= 1e-4, "{report:?}");
}

#[test]
fn opacity_gradient_of_mean_pixel_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let set = random_gaussians(&mut rng, 8, 0.4);
    let cam = orbit_camera(1.0, 2.0, 8, 8, 1.2).unwrap();
    let inputs = scene_inputs(&set);
    let report = check_gradients(&inputs[1..2], GradCheckOptions::default(), |t, v| {
        let mut all: Vec<_> = inputs.iter().map(|x| t.constant(x.clone())).collect();
        all[1] = v[0];
        let out = render_diff(t, &vars_from(&all), &cam);
        Ok(t.mean(out))
    })
    .unwrap();
    assert!(report.max_rel_err <= 1e-4, "{report:?}");
}

#[test]
fn occluded_color_gets_no_gradient() {
    let mut gs = vec![gaussian([0.0, 0.0, 5.0], [0.3; 3], 0.5, [0.3, 0.6, 0.9])];
    for i in 0..200 {
        gs.push(gaussian([0.0, 0.0, 1.0 + i as f64 * 1e-3], [0.5; 3], 0.999, [0.5; 3]));
    }
    let set = GaussianSet { gaussians: gs };
    let cam = axis_camera(4, 4);
    let mut tape = Tape::new();
    let g = GaussianVars::from_set(&mut tape, &set, true);
    let out = render_diff(&mut tape, &g, &cam);
    let loss = tape.sum(out);
    tape.backward(loss).unwrap();
    let gc = tape.grad(g.colors).unwrap();
    assert_eq!(&gc[..3], &[0.0; 3]);
    assert!(gc[3..].iter().any(|&v| v != 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tiled_equals_oracle(seed in any::<u64>(), n in 0usize..300, w in 1usize..48, h in 1usize..48) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let splats = random_splats(&mut rng, n, w, h);
        let t = TargetConfig::new(w, h);
        let err = max_abs_diff(&rasterize_tiled(&splats, &t).image, &render_oracle(&splats, &t).image);
        prop_assert!(err <= 1e-5);
    }

    #[test]
    fn permutation_invariant(seed in any::<u64>(), n in 1usize..120) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let splats = random_splats(&mut rng, n, 24, 24);
        let mut shuffled = splats.clone();
        shuffled.reverse();
        let t = TargetConfig::new(24, 24);
        prop_assert_eq!(rasterize_tiled(&splats, &t).image, rasterize_tiled(&shuffled, &t).image);
    }

    #[test]
    fn pixels_stay_in_unit_range(seed in any::<u64>(), n in 0usize..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let splats = random_splats(&mut rng, n, 20, 20);
        let r = render_oracle(&splats, &TargetConfig::new(20, 20).with_background([1.0; 3]));
        prop_assert!(r.image.data().iter().all(|v| (0.0..=1.0 + 1e-12).contains(v)));
    }
}
