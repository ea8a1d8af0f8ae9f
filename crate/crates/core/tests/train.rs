use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use viewsplat_core::config::ModelConfig;
use viewsplat_core::model::Model;
use viewsplat_core::params::{ParamKind, ParamStore};
use viewsplat_core::train::{
    lr_at, mse_loss, psnr, split_views, total_loss, AdamW, LossConfig, NoPerceptual, OptimizerConfig, PerceptualLoss, ScheduleConfig, TrainConfig,
    Trainer,
};
use viewsplat_core::verify::{arc_cameras, random_gaussians, render_views};
use viewsplat_core::{Error, Tape, Tensor, Var};

fn store(values: &[(&str, ParamKind, f64)]) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    for &(name, kind, v) in values {
        s.insert(name, kind, Tensor::new([1], vec![v]).unwrap());
    }
    s
}

#[test]
fn first_adamw_step_moves_by_lr() {
    let mut p = store(&[("w", ParamKind::Weight, 0.0)]);
    let mut opt = AdamW::new(OptimizerConfig::default(), &p);
    opt.update(&mut p, &[Some(&[1.0][..])], 1.0).unwrap();
    let x = p.get("w").unwrap().value.data()[0];
    assert!((x + 1.0).abs() < 1e-7, "{x}");
}

#[test]
fn zero_gradient_only_decays_weights() {
    let mut p = store(&[("w", ParamKind::Weight, 2.0), ("ln", ParamKind::LayerNormScale, 2.0)]);
    let mut opt = AdamW::new(OptimizerConfig::default(), &p);
    opt.update(&mut p, &[Some(&[0.0][..]), None], 0.1).unwrap();
    assert_eq!(p.get("w").unwrap().value.data()[0], 2.0 - 2.0 * 0.1 * 0.05);
    assert_eq!(p.get("ln").unwrap().value.data()[0], 2.0);

    let cfg = OptimizerConfig {
        weight_decay: 0.0,
        ..OptimizerConfig::default()
    };
    let mut p = store(&[("w", ParamKind::Weight, 2.0)]);
    AdamW::new(cfg, &p).update(&mut p, &[None], 0.1).unwrap();
    assert_eq!(p.get("w").unwrap().value.data()[0], 2.0);
}

#[test]
fn non_finite_gradient_names_parameter_and_changes_nothing() {
    let mut p = store(&[("a", ParamKind::Weight, 1.0), ("b.gain", ParamKind::Weight, 1.0)]);
    let before = p.clone();
    let mut opt = AdamW::new(OptimizerConfig::default(), &p);
    let err = opt.update(&mut p, &[Some(&[0.5][..]), Some(&[f64::NAN][..])], 0.1).unwrap_err();
    match err {
        Error::NonFiniteGradient(name) => assert_eq!(name, "b.gain"),
        other => panic!("{other:?}"),
    }
    assert_eq!(p, before);
    assert_eq!(opt.step, 0);
}

#[test]
fn schedule_examples() {
    let s = ScheduleConfig {
        peak_lr: 1.0,
        warmup_steps: 10,
        total_steps: 110,
    };
    assert_eq!(lr_at(0, &s), 0.0);
    assert_eq!(lr_at(5, &s), 0.5);
    assert_eq!(lr_at(10, &s), 1.0);
    assert!((lr_at(60, &s) - 0.5).abs() < 1e-12);
    assert!(lr_at(109, &s) > 0.0);
    assert_eq!(lr_at(110, &s), 0.0);
    assert_eq!(lr_at(500, &s), 0.0);

    let d = ScheduleConfig::default();
    assert_eq!((d.peak_lr, d.warmup_steps, d.total_steps), (2e-4, 2500, 100_000));
    assert!(ScheduleConfig { warmup_steps: 0, ..d }.validate().is_err());
    assert!(ScheduleConfig { warmup_steps: 100_000, ..d }.validate().is_err());
}

proptest! {
    #[test]
    fn schedule_is_bounded_and_peaks_after_warmup(warm in 1u64..500, extra in 1u64..5000, step in 0u64..6000) {
        let s = ScheduleConfig { peak_lr: 3e-4, warmup_steps: warm, total_steps: warm + extra };
        let lr = lr_at(step, &s);
        prop_assert!((0.0..=3e-4).contains(&lr));
        if step > warm {
            prop_assert!(lr_at(step, &s) >= lr_at(step + 1, &s));
        } else if step > 0 {
            prop_assert!(lr_at(step - 1, &s) <= lr);
        }
    }

    #[test]
    fn rescaled_schedule_is_valid(total in 2u64..100_000) {
        let s = ScheduleConfig::default().with_total(total);
        prop_assert!(s.validate().is_ok());
        prop_assert_eq!(s.total_steps, total);
    }
}

struct MseHook;

impl PerceptualLoss<f64> for MseHook {
    fn eval(&self, tape: &mut Tape<f64>, pred: Var, gt: Var) -> viewsplat_core::Result<Var> {
        mse_loss(tape, pred, gt)
    }
}

#[test]
fn perceptual_hook_is_weighted() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::from_fn([2, 2, 3], |i| i as f64 / 12.0));
    let b = tape.constant(Tensor::from_fn([2, 2, 3], |i| 1.0 - i as f64 / 24.0));
    let cfg = LossConfig { lambda_perceptual: 0.5 };
    let mse = mse_loss(&mut tape, a, b).unwrap();
    let plain = total_loss(&mut tape, &[a, a], &[b, b], &cfg, &NoPerceptual).unwrap();
    let hooked = total_loss(&mut tape, &[a], &[b], &cfg, &MseHook).unwrap();
    let m = tape.value(mse).item();
    assert!((tape.value(plain).item() - 2.0 * m).abs() < 1e-15);
    assert!((tape.value(hooked).item() - 1.5 * m).abs() < 1e-15);
    assert!(total_loss(&mut tape, &[a], &[], &cfg, &NoPerceptual).is_err());
}

#[test]
fn psnr_examples() {
    assert_eq!(psnr(1.0), 0.0);
    assert!((psnr(0.01) - 20.0).abs() < 1e-12);
    assert!(psnr(0.0).is_finite());
}

#[test]
fn split_uses_extreme_cameras_as_inputs() {
    let cams = arc_cameras(&mut ChaCha8Rng::seed_from_u64(3), 7, 8, 8).unwrap();
    let split = split_views(&cams, 2, 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(split.inputs, [0, 6]);
    assert_eq!(split.targets.len(), 3);
    assert!(split.targets.iter().all(|t| (1..6).contains(t)));
    assert!(split_views(&cams[..2], 2, 1, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

fn small_train_config() -> TrainConfig {
    let mut c = TrainConfig::toy();
    c.model = ModelConfig {
        layers: 1,
        hidden: 16,
        heads: 2,
        ..c.model
    };
    c.schedule = c.schedule.with_total(10);
    c
}

#[test]
fn training_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let set = random_gaussians(&mut rng, 24, 0.8);
    let cams = arc_cameras(&mut rng, 3, 16, 16).unwrap();
    let scene = render_views::<f32>(&set.cast(), &cams, [0.0; 3]);
    let run = || {
        let mut t = Trainer::<f32>::new(small_train_config(), 4).unwrap();
        let reports: Vec<_> = (0..3).map(|_| t.step(&scene).unwrap()).collect();
        (reports, t.model.params)
    };
    let (ra, pa) = run();
    let (rb, pb) = run();
    assert_eq!(ra, rb);
    assert_eq!(pa, pb);
    assert_ne!(pa, Model::<f32>::new(small_train_config().model, 4).unwrap().params);
    assert_eq!(ra.iter().map(|r| r.step).collect::<Vec<_>>(), [1, 2, 3]);
}
