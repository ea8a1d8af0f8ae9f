//! Self-checks with pass/fail verdicts, shared by the `check` command and the
//! acceptance tests. None of them measure time; callers do.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Quaternion, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{arc_cameras, check_gradients, random_gaussians, random_splats, render_views, GradCheckOptions, GradCheckReport};
use crate::autodiff::{Tape, UnaryKind, Var};
use crate::camera::{normalize_poses, plucker_rays, Camera, Intrinsics, Mat3, Pose, Vec3};
use crate::config::{MinibatchScheme, ModelConfig, ViewpointRes};
use crate::cost::{cross_attn_flops, gaussian_count, parameter_count, scheme_score_cost};
use crate::error::Result;
use crate::gaussian::GaussianVars;
use crate::model::Model;
use crate::params::{Bound, ParamKind};
use crate::render::{project_on_tape, rasterize_naive_diff, rasterize_tiled, render_oracle, TargetConfig};
use crate::tensor::Tensor;
use crate::tokenizer::LN_EPS;
use crate::train::{evaluate, normalized_views, render_targets, total_loss, LossConfig, NoPerceptual, TrainConfig, Trainer, ViewSplit};
use crate::update::{self, cross_attention_uplifted, group_attention, select_minibatch, ViewInput, RMS_EPS};

/// Verdict of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }

    fn from_result(name: &'static str, r: Result<CheckResult>) -> Self {
        r.unwrap_or_else(|e| Self::new(name, false, format!("error: {e}")))
    }
}

/// Cross-attention FLOPs at the three reference batch sizes.
pub fn flops_fidelity() -> CheckResult {
    let expected = [(256, 1024, 3_825_205_248u64), (128, 512, 1_711_276_032), (64, 256, 805_306_368)];
    let got: Vec<u64> = expected.iter().map(|&(lv, li, _)| cross_attn_flops(768, lv, li)).collect();
    let passed = expected.iter().zip(&got).all(|(e, g)| e.2 == *g);
    CheckResult::new("flops fidelity", passed, format!("{got:?}"))
}

/// Score-count ratios of the four multi-view layouts.
pub fn scheme_ratio_fidelity() -> CheckResult {
    let r = scheme_score_cost(16, 256, 256, 8, ViewpointRes::H).map(|c| c.ratios());
    match r {
        Ok(r) => CheckResult::new("scheme ratios", r == [1.0, 1.0, 0.25, 0.078125], format!("{r:?}")),
        Err(e) => CheckResult::new("scheme ratios", false, format!("error: {e}")),
    }
}

/// Parameter counts of the default model, the model without uplifting and
/// the depth sweep.
pub fn parameter_count_fidelity() -> CheckResult {
    let within = |got: usize, target: f64, tol: f64| ((got as f64 - target) / target).abs() <= tol;
    let base = ModelConfig::default();
    let full = parameter_count(&base);
    let no_uplift = parameter_count(&ModelConfig { use_uplift: false, ..base });
    let sweep: Vec<usize> = [3, 6, 9, 12]
        .iter()
        .map(|&layers| parameter_count(&ModelConfig { layers, ..base }))
        .collect();
    let sweep_ok = sweep.windows(2).all(|w| w[0] < w[1]) && sweep.iter().zip([48e6, 94e6, 139e6, 185e6]).all(|(&g, t)| within(g, t, 0.05));
    let passed = within(full, 185e6, 0.03) && within(no_uplift, 171e6, 0.03) && sweep_ok;
    CheckResult::new(
        "parameter counts",
        passed,
        format!("default {full}, no uplift {no_uplift}, depth sweep {sweep:?}"),
    )
}

/// Gaussian counts for several view counts, grid resolutions and image sizes.
pub fn gaussian_count_fidelity() -> CheckResult {
    let cases = [
        (2, ViewpointRes::F, 256, 256, 131_072),
        (4, ViewpointRes::H, 256, 256, 65_536),
        (8, ViewpointRes::H, 256, 256, 131_072),
        (6, ViewpointRes::H, 256, 448, 172_032),
        (12, ViewpointRes::H, 512, 960, 1_474_560),
    ];
    let got: Vec<usize> = cases
        .iter()
        .map(|&(n, res, h, w, _)| {
            let (vh, vw) = res.grid(h, w);
            gaussian_count(n, vh, vw)
        })
        .collect();
    let passed = cases.iter().zip(&got).all(|(c, g)| c.4 == *g);
    CheckResult::new("gaussian counts", passed, format!("{got:?}"))
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi))
}

/// `Σ out ⊙ w` for a fixed random `w`.
fn weighted_sum(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_tensor(&mut rng, tape.shape(out), -1.0, 1.0);
    let w = tape.constant(w);
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

type OpFn = fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

/// Finite-difference reports for every differentiable tape operation.
pub fn op_gradient_reports() -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let a = rand_tensor(&mut rng, &[4, 6], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[4, 6], -1.0, 1.0);
    let pos = rand_tensor(&mut rng, &[4, 6], 0.5, 2.0);
    let row = rand_tensor(&mut rng, &[6], -1.0, 1.0);
    let m = rand_tensor(&mut rng, &[6, 5], -1.0, 1.0);
    let c = rand_tensor(&mut rng, &[3, 6], -1.0, 1.0);
    let gain = rand_tensor(&mut rng, &[6], 0.5, 1.5);
    let q = rand_tensor(&mut rng, &[5, 8], -1.0, 1.0);
    let k = rand_tensor(&mut rng, &[7, 8], -1.0, 1.0);
    let v = rand_tensor(&mut rng, &[7, 8], -1.0, 1.0);

    let cases: Vec<(&'static str, Vec<Tensor<f64>>, OpFn)> = vec![
        ("matmul", vec![a.clone(), m], |t, x| t.matmul(x[0], x[1])),
        ("add", vec![a.clone(), row.clone()], |t, x| t.add(x[0], x[1])),
        ("sub", vec![a.clone(), b.clone()], |t, x| t.sub(x[0], x[1])),
        ("mul", vec![a.clone(), row.clone()], |t, x| t.mul(x[0], x[1])),
        ("div", vec![a.clone(), pos.clone()], |t, x| t.div(x[0], x[1])),
        ("neg", vec![a.clone()], |t, x| Ok(t.unary(UnaryKind::Neg, x[0]))),
        ("exp", vec![a.clone()], |t, x| Ok(t.exp(x[0]))),
        ("ln", vec![pos.clone()], |t, x| Ok(t.unary(UnaryKind::Ln, x[0]))),
        ("sigmoid", vec![a.clone()], |t, x| Ok(t.sigmoid(x[0]))),
        ("tanh", vec![a.clone()], |t, x| Ok(t.tanh(x[0]))),
        ("sqrt", vec![pos.clone()], |t, x| Ok(t.unary(UnaryKind::Sqrt, x[0]))),
        ("square", vec![a.clone()], |t, x| Ok(t.square(x[0]))),
        ("recip", vec![pos.clone()], |t, x| Ok(t.unary(UnaryKind::Recip, x[0]))),
        ("gelu", vec![a.clone()], |t, x| Ok(t.gelu(x[0]))),
        ("scale", vec![a.clone()], |t, x| Ok(t.scale(x[0], -2.5))),
        ("add_scalar", vec![a.clone()], |t, x| Ok(t.add_scalar(x[0], 0.75))),
        ("clamp", vec![a.clone()], |t, x| Ok(t.clamp(x[0], -0.5, 0.5))),
        ("reshape", vec![a.clone()], |t, x| t.reshape(x[0], &[8, 3])),
        ("transpose", vec![a.clone()], |t, x| t.transpose(x[0])),
        ("slice_cols", vec![a.clone()], |t, x| t.slice_cols(x[0], 1, 3)),
        ("concat_cols", vec![a.clone(), b.clone()], |t, x| t.concat_cols(&[x[0], x[1]])),
        ("slice_rows", vec![a.clone()], |t, x| t.slice_rows(x[0], 1, 2)),
        ("concat_rows", vec![a.clone(), c.clone()], |t, x| t.concat_rows(&[x[0], x[1]])),
        ("gather", vec![a.clone()], |t, x| t.gather(x[0], &[5, 0, 23, 5, 11, 17], &[2, 3])),
        ("gather_rows", vec![a.clone()], |t, x| t.gather_rows(x[0], &[3, 0, 3])),
        ("scatter_rows", vec![a.clone(), c], |t, x| t.scatter_rows(x[0], &[2, 0, 3], x[1])),
        ("sum", vec![a.clone()], |t, x| {
            let s = t.sum(x[0]);
            Ok(t.square(s))
        }),
        ("mean", vec![a.clone()], |t, x| {
            let s = t.mean(x[0]);
            Ok(t.square(s))
        }),
        ("mean_last", vec![a.clone()], |t, x| t.mean_last(x[0])),
        ("layer_norm", vec![a.clone(), gain.clone()], |t, x| t.layer_norm(x[0], x[1], 1e-5)),
        ("rms_norm", vec![a.clone(), gain], |t, x| t.rms_norm(x[0], x[1], 1e-6)),
        ("softmax", vec![a.clone()], |t, x| Ok(t.softmax(x[0]))),
        ("attention", vec![q, k, v], |t, x| t.attention(x[0], x[1], x[2], 2, 0.5)),
        ("normalize_rows", vec![a], |t, x| t.normalize_rows(x[0], 1e-8, &[0.0; 6])),
    ];
    let mut out = Vec::with_capacity(cases.len() + 1);
    for (name, inputs, f) in cases {
        let report = check_gradients(&inputs, GradCheckOptions::default(), |t, x| {
            let y = f(t, x)?;
            weighted_sum(t, y, 99)
        })?;
        out.push((name, report));
    }
    out.push((GRAPH_CHECKS[0], raster_gradient_report()?));
    Ok(out)
}

/// Projection plus the differentiable rasterizer on a small scene, with all
/// Gaussian attributes as inputs.
fn raster_gradient_report() -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let set = random_gaussians(&mut rng, 12, 0.6);
    let cam = super::orbit_camera(0.3, 3.0, 12, 10, 0.9)?;
    let mut tape = Tape::new();
    let vars = GaussianVars::from_set(&mut tape, &set, false);
    let inputs: Vec<Tensor<f64>> = [vars.means, vars.opacity, vars.scales, vars.rotations, vars.colors]
        .iter()
        .map(|&v| tape.value(v).clone())
        .collect();
    let target = TargetConfig::new(12, 10).with_background([0.2, 0.3, 0.1]);
    check_gradients(&inputs, GradCheckOptions::default(), |t, x| {
        let g = GaussianVars {
            means: x[0],
            opacity: x[1],
            scales: x[2],
            rotations: x[3],
            colors: x[4],
        };
        let proj = project_on_tape(t, &g, &cam)?;
        let img = rasterize_naive_diff(t, &proj, &target)?;
        weighted_sum(t, img, 5)
    })
}

/// Configuration of the end-to-end gradient check: one layer, width 8.
pub fn micro_config() -> ModelConfig {
    ModelConfig {
        layers: 1,
        hidden: 8,
        heads: 2,
        patch: 4,
        near: 0.2,
        far: 6.0,
        ..ModelConfig::default()
    }
}

/// Two 16×16 input views and one target view of a random scene, in the
/// frame normalized over the inputs.
fn micro_scene() -> Result<(Vec<ViewInput<f64>>, Vec<ViewInput<f64>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let set = random_gaussians(&mut rng, 48, 0.8);
    let cams = arc_cameras(&mut rng, 3, 16, 16)?;
    let scene = render_views::<f64>(&set, &cams, [0.0; 3]);
    let split = ViewSplit {
        inputs: vec![0, 2],
        targets: vec![1],
    };
    let (inputs, targets, _) = normalized_views(&scene, &split)?;
    Ok((inputs, targets))
}

/// End-to-end check: tokenizer, one update layer, decoder, activation,
/// unprojection, the differentiable renderer and the MSE loss, with every
/// model parameter as an input. Weights are redrawn at unit fan-in scale so
/// every path carries signal.
///
/// The step sits near the cube root of machine epsilon; smaller steps let
/// roundoff in the scalar loss dominate the smallest gradient entries.
pub fn micro_pipeline_gradient_report() -> Result<GradCheckReport> {
    micro_pipeline_gradient_report_with(GradCheckOptions {
        step: 1e-5,
        ..GradCheckOptions::default()
    })
}

pub fn micro_pipeline_gradient_report_with(opts: GradCheckOptions) -> Result<GradCheckReport> {
    let cfg = micro_config();
    let mut model: Model<f64> = Model::new(cfg, 3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for p in model.params.iter_mut() {
        let fan_in = p.value.shape()[0] as f64;
        match p.kind {
            ParamKind::Weight => {
                let std = 1.0 / libm::sqrt(fan_in);
                for x in p.value.data_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *x = std * z;
                }
            }
            _ => {
                for x in p.value.data_mut() {
                    *x = 1.0 + rng.gen_range(-0.2..0.2);
                }
            }
        }
    }
    let (inputs, targets) = micro_scene()?;
    let values: Vec<Tensor<f64>> = model.params.iter().map(|p| p.value.clone()).collect();
    let loss_cfg = LossConfig { lambda_perceptual: 0.0 };
    check_gradients(&values, opts, |t, x| {
        let bound = model.params.bind_vars(x.to_vec())?;
        let g = model.reconstruct(t, &bound, &inputs, 0)?;
        let renders = render_targets(t, &g, &targets, [0.0; 3])?;
        let gts: Vec<Var> = targets.iter().map(|v| t.constant(v.image.clone())).collect();
        total_loss(t, &renders, &gts, &loss_cfg, &NoPerceptual)
    })
}

/// Largest relative error allowed for a single tape operation.
pub const OP_GRADIENT_TOLERANCE: f64 = 1e-6;
/// Largest relative error allowed for composite graphs.
pub const GRADIENT_TOLERANCE: f64 = 1e-4;

const GRAPH_CHECKS: [&str; 2] = ["project and rasterize", "micro pipeline"];

fn gradient_tolerance(name: &str) -> f64 {
    if GRAPH_CHECKS.contains(&name) {
        GRADIENT_TOLERANCE
    } else {
        OP_GRADIENT_TOLERANCE
    }
}

/// Every op and the end-to-end pipeline against central differences, ops
/// at [`OP_GRADIENT_TOLERANCE`] and composite graphs at [`GRADIENT_TOLERANCE`].
pub fn gradient_suite() -> CheckResult {
    const NAME: &str = "gradients";
    CheckResult::from_result(
        NAME,
        (|| {
            let mut reports = op_gradient_reports()?;
            reports.push((GRAPH_CHECKS[1], micro_pipeline_gradient_report()?));
            let worst = reports
                .iter()
                .max_by(|a, b| a.1.max_rel_err.total_cmp(&b.1.max_rel_err))
                .map(|(n, r)| (*n, r.max_rel_err))
                .unwrap_or(("none", 0.0));
            let failed: Vec<&str> = reports
                .iter()
                .filter(|(n, r)| !(r.max_rel_err <= gradient_tolerance(n)))
                .map(|(n, _)| *n)
                .collect();
            let pipeline = reports.last().map(|r| r.1.max_rel_err).unwrap_or(f64::NAN);
            let mut detail = format!(
                "{} checks, worst {} at {:.2e}, pipeline {:.2e}",
                reports.len(),
                worst.0,
                worst.1,
                pipeline
            );
            if !failed.is_empty() {
                detail.push_str(&format!(", failing: {failed:?}"));
            }
            Ok(CheckResult::new(NAME, failed.is_empty(), detail))
        })(),
    )
}

/// Tiled renderer against the per-pixel oracle on `scenes` random scenes of
/// up to 1000 splats.
pub fn renderer_oracle_suite(scenes: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut total_splats = 0;
    for i in 0..scenes {
        let n = if i % 10 == 0 { 1000 } else { rng.gen_range(0..=1000) };
        let (w, h) = (rng.gen_range(8..=64), rng.gen_range(8..=64));
        let bg = [rng.gen(), rng.gen(), rng.gen()];
        let splats = random_splats(&mut rng, n, w, h);
        let target = TargetConfig::new(w, h).with_background(bg);
        let a = rasterize_tiled(&splats, &target);
        let b = render_oracle(&splats, &target);
        let diff = a.image.data().iter().zip(b.image.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        worst = worst.max(diff);
        total_splats += n;
    }
    CheckResult::new(
        "renderer oracle",
        worst <= 1e-5,
        format!("{scenes} scenes, {total_splats} splats, max channel diff {worst:.2e}"),
    )
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Mat3 {
    let q: [f64; 4] = core::array::from_fn(|_| StandardNormal.sample(rng));
    let q = Quaternion::new(q[0], q[1], q[2], q[3]);
    let q = if q.norm() < 1e-6 { Quaternion::identity() } else { q };
    UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}

fn random_vec(rng: &mut ChaCha8Rng, r: f64) -> Vec3 {
    Vec3::new(rng.gen_range(-r..r), rng.gen_range(-r..r), rng.gen_range(-r..r))
}

fn pose_distance(a: &Pose, b: &Pose) -> f64 {
    let dr = (a.rotation() - b.rotation()).abs().max();
    let dt = (a.center() - b.center()).abs().max();
    dr.max(dt)
}

/// Plücker ray identities, the unit-distance normalization and its
/// invariance under rigid transforms of the world.
pub fn geometry_suite(seed: u64) -> CheckResult {
    const NAME: &str = "geometry";
    CheckResult::from_result(
        NAME,
        (|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mut rays, mut bad_rays) = (0usize, 0usize);
            for _ in 0..50 {
                let (w, h) = (rng.gen_range(4..24), rng.gen_range(4..24));
                let k = Intrinsics::from_fov(rng.gen_range(0.3..2.0), w, h)?;
                let pose = Pose::new(random_rotation(&mut rng), random_vec(&mut rng, 10.0))?;
                let map = plucker_rays(&Camera::new(k, pose), h, w)?;
                for r in map.data.chunks_exact(6) {
                    let d = Vec3::new(r[0], r[1], r[2]);
                    let m = Vec3::new(r[3], r[4], r[5]);
                    rays += 1;
                    if (d.norm() - 1.0).abs() > 1e-6 || m.dot(&d).abs() > 1e-6 {
                        bad_rays += 1;
                    }
                }
            }

            let (mut worst_dist, mut worst_equiv) = (0.0f64, 0.0f64);
            for _ in 0..200 {
                let n = rng.gen_range(1..9);
                let poses: Vec<Pose> = (0..n)
                    .map(|_| Pose::new(random_rotation(&mut rng), random_vec(&mut rng, 5.0)))
                    .collect::<Result<_>>()?;
                let (normed, _) = normalize_poses(&poses)?;
                if n > 1 {
                    let max = normed.iter().map(|p| p.center().norm()).fold(0.0, f64::max);
                    worst_dist = worst_dist.max((max - 1.0).abs());
                }
                let g_rot = random_rotation(&mut rng);
                let g_t = random_vec(&mut rng, 20.0);
                let moved: Vec<Pose> = poses
                    .iter()
                    .map(|p| Pose::new(g_rot * p.rotation(), g_rot * p.center() + g_t))
                    .collect::<Result<_>>()?;
                let (normed_moved, _) = normalize_poses(&moved)?;
                for (a, b) in normed.iter().zip(&normed_moved) {
                    worst_equiv = worst_equiv.max(pose_distance(a, b));
                }
            }
            let passed = bad_rays == 0 && worst_dist <= 1e-6 && worst_equiv <= 1e-5;
            Ok(CheckResult::new(
                NAME,
                passed,
                format!(
                    "{}/{} rays valid, max |dist - 1| {:.1e}, max rigid deviation {:.1e}",
                    rays - bad_rays,
                    rays,
                    worst_dist,
                    worst_equiv
                ),
            ))
        })(),
    )
}

/// Structured minibatches cover every token within one cycle of layers and
/// keep subset sizes balanced.
pub fn minibatch_coverage_suite() -> CheckResult {
    let mut cases = 0;
    let mut failures = Vec::new();
    for scheme in [MinibatchScheme::Half, MinibatchScheme::Quarter] {
        let b = scheme.blocks();
        for lv in 1..=40 {
            for li in [lv, lv + 1, 2 * lv + 3, 4 * lv, 4 * lv + 2] {
                for start in 0..b {
                    cases += 1;
                    let (mut seen_v, mut seen_i) = (vec![false; lv], vec![false; li]);
                    let (mut sizes_v, mut sizes_i) = (Vec::new(), Vec::new());
                    for layer in start..start + b {
                        let (vi, ii) = select_minibatch(lv, li, scheme, layer, 0);
                        vi.iter().for_each(|&i| seen_v[i] = true);
                        ii.iter().for_each(|&i| seen_i[i] = true);
                        sizes_v.push(vi.len());
                        sizes_i.push(ii.len());
                    }
                    let spread = |s: &[usize]| s.iter().max().unwrap_or(&0) - s.iter().min().unwrap_or(&0);
                    let ok = seen_v.iter().all(|&x| x) && seen_i.iter().all(|&x| x) && spread(&sizes_v) <= 1 && spread(&sizes_i) <= 1;
                    if !ok && failures.len() < 4 {
                        failures.push((scheme, lv, li, start));
                    }
                }
            }
        }
    }
    let mut detail = format!("{cases} cases");
    if !failures.is_empty() {
        detail.push_str(&format!(", failing: {failures:?}"));
    }
    CheckResult::new("minibatch coverage", failures.is_empty(), detail)
}

/// Plain pre-LN cross-attention with QK RMSNorm and an MLP, composed
/// directly from tape primitives with one query per viewpoint token.
pub fn plain_cross_attention(tape: &mut Tape<f64>, v: Var, s: Var, w: &Bound, prefix: &str, cfg: &ModelConfig) -> Result<Var> {
    let (d, hd) = (cfg.hidden, cfg.head_dim());
    let p = |n: &str| format!("{prefix}.{n}");
    let (lv, li) = (tape.shape(v)[0], tape.shape(s)[0]);
    let h = tape.layer_norm(v, w.get(&p("norm"))?, LN_EPS)?;
    let q = tape.matmul(h, w.get(&p("wq"))?)?;
    let k = tape.matmul(s, w.get(&p("wk"))?)?;
    let val = tape.matmul(s, w.get(&p("wv"))?)?;
    let q = tape.reshape(q, &[lv * d / hd, hd])?;
    let q = tape.rms_norm(q, w.get(&p("q_norm"))?, RMS_EPS)?;
    let q = tape.reshape(q, &[lv, d])?;
    let k = tape.reshape(k, &[li * d / hd, hd])?;
    let k = tape.rms_norm(k, w.get(&p("k_norm"))?, RMS_EPS)?;
    let k = tape.reshape(k, &[li, d])?;
    let o = tape.attention(q, k, val, cfg.heads, 1.0 / libm::sqrt(hd as f64))?;
    let o = tape.matmul(o, w.get(&p("wo"))?)?;
    let x = tape.add(v, o)?;
    let h = tape.layer_norm(x, w.get(&p("mlp_norm"))?, LN_EPS)?;
    let h = tape.matmul(h, w.get(&p("mlp_in"))?)?;
    let h = tape.gelu(h);
    let h = tape.matmul(h, w.get(&p("mlp_out"))?)?;
    tape.add(x, h)
}

fn bits(t: &Tensor<f64>) -> Vec<u64> {
    t.data().iter().map(|x| x.to_bits()).collect()
}

/// With `k = 1` the uplifted path equals plain cross-attention, and group
/// attention over a single view equals per-view cross-attention, bit for bit.
pub fn ablation_degeneracy_suite() -> CheckResult {
    const NAME: &str = "ablation degeneracy";
    CheckResult::from_result(
        NAME,
        (|| {
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let cfg = ModelConfig {
                use_uplift: false,
                ..micro_config()
            };
            let model: Model<f64> = Model::new(cfg, 1)?;
            let mut tape = Tape::new();
            let w = model.params.bind_frozen(&mut tape);
            let v = tape.constant(rand_tensor(&mut rng, &[6, cfg.hidden], -1.0, 1.0));
            let s = tape.constant(rand_tensor(&mut rng, &[20, cfg.hidden], -1.0, 1.0));
            let prefix = update::cross_prefix(0);
            let lifted = cross_attention_uplifted(&mut tape, v, s, &w, &prefix, &cfg)?;
            let plain = plain_cross_attention(&mut tape, v, s, &w, &prefix, &cfg)?;
            let k1 = bits(tape.value(lifted)) == bits(tape.value(plain));

            let cfg = micro_config();
            let model: Model<f64> = Model::new(cfg, 2)?;
            let w = model.params.bind_frozen(&mut tape);
            let v = tape.constant(rand_tensor(&mut rng, &[4, cfg.hidden], -1.0, 1.0));
            let s = tape.constant(rand_tensor(&mut rng, &[16, cfg.hidden], -1.0, 1.0));
            let per_view = cross_attention_uplifted(&mut tape, v, s, &w, &prefix, &cfg)?;
            let group = group_attention(&mut tape, v, s, &w, &prefix, &cfg)?;
            let sublayer = bits(tape.value(per_view)) == bits(tape.value(group));

            let (inputs, _) = micro_scene()?;
            let one = &inputs[..1];
            let grouped_cfg = ModelConfig {
                use_group_attention: true,
                ..cfg
            };
            let run = |c: &ModelConfig| -> Result<Vec<u64>> {
                let mut tape = Tape::new();
                let w = model.params.bind_frozen(&mut tape);
                let out = update::forward(&mut tape, &w, c, one, 0)?;
                Ok(bits(tape.value(out[0].var)))
            };
            let model_level = run(&cfg)? == run(&grouped_cfg)?;
            Ok(CheckResult::new(
                NAME,
                k1 && sublayer && model_level,
                format!("k=1 vs plain: {k1}, group vs per-view sublayer: {sublayer}, single-view model: {model_level}"),
            ))
        })(),
    )
}

/// Seed of the toy scene.
pub const TOY_SEED: u64 = 7;

/// Three 32×32 views of 64 random Gaussians on a 90° arc, black background.
pub fn toy_scene() -> Result<Vec<ViewInput<f32>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(TOY_SEED);
    let set = random_gaussians(&mut rng, 64, 0.8);
    let cams = arc_cameras(&mut rng, 3, 32, 32)?;
    Ok(render_views::<f32>(&set.cast(), &cams, [0.0; 3]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyReport {
    pub steps: u64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub initial_psnr: f64,
    pub final_psnr: f64,
}

impl ToyReport {
    pub fn passed(&self) -> bool {
        self.final_loss <= 0.1 * self.initial_loss && self.final_psnr - self.initial_psnr >= 10.0
    }
}

/// Trains the toy configuration on [`toy_scene`] for `steps` steps and
/// measures the held-out target before and after. `on_step` sees every
/// step's report.
pub fn toy_overfit(steps: u64, mut on_step: impl FnMut(&crate::train::StepReport)) -> Result<ToyReport> {
    let scene = toy_scene()?;
    let mut config = TrainConfig::toy();
    config.schedule = config.schedule.with_total(steps);
    let mut trainer = Trainer::<f32>::new(config, TOY_SEED)?;
    let initial_psnr = evaluate(&trainer.model, &scene, &config, 0)?;
    for _ in 0..steps {
        let r = trainer.step(&scene)?;
        on_step(&r);
    }
    let final_psnr = evaluate(&trainer.model, &scene, &config, 0)?;
    let loss = |p: f64| libm::pow(10.0, -p / 10.0);
    Ok(ToyReport {
        steps,
        initial_loss: loss(initial_psnr),
        final_loss: loss(final_psnr),
        initial_psnr,
        final_psnr,
    })
}

/// Toy overfit verdict.
pub fn toy_overfit_suite(steps: u64) -> CheckResult {
    const NAME: &str = "toy overfit";
    CheckResult::from_result(
        NAME,
        (|| {
            let r = toy_overfit(steps, |_| {})?;
            Ok(CheckResult::new(
                NAME,
                r.passed(),
                format!(
                    "{} steps, loss {:.5} -> {:.5} (ratio {:.3}), psnr {:.2} -> {:.2} dB",
                    r.steps,
                    r.initial_loss,
                    r.final_loss,
                    r.final_loss / r.initial_loss,
                    r.initial_psnr,
                    r.final_psnr
                ),
            ))
        })(),
    )
}
