//! Losses, AdamW, the learning-rate schedule and the training step.

use alloc::boxed::Box;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::camera::{farthest_point_sample, normalize_poses, Camera, SceneNormalization};
use crate::config::ModelConfig;
use crate::error::{validation, Error, Result};
use crate::gaussian::{GaussianSet, GaussianVars};
use crate::model::Model;
use crate::params::{ParamKind, ParamStore};
use crate::render::{project_on_tape, rasterize_naive_diff, TargetConfig};
use crate::scalar::Real;
use crate::tensor::Tensor;
use crate::update::ViewInput;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight of the perceptual term.
    pub lambda_perceptual: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda_perceptual: 0.5 }
    }
}

/// Image-pair loss added with weight `lambda_perceptual`.
pub trait PerceptualLoss<T: Real> {
    fn eval(&self, tape: &mut Tape<T>, pred: Var, gt: Var) -> Result<Var>;
}

/// Contributes exactly zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoPerceptual;

impl<T: Real> PerceptualLoss<T> for NoPerceptual {
    fn eval(&self, tape: &mut Tape<T>, _pred: Var, _gt: Var) -> Result<Var> {
        Ok(tape.constant(Tensor::scalar(T::zero())))
    }
}

/// Mean squared error over every pixel and channel.
pub fn mse_loss<T: Real>(tape: &mut Tape<T>, pred: Var, gt: Var) -> Result<Var> {
    if tape.shape(pred) != tape.shape(gt) {
        return Err(Error::Shape {
            op: "mse_loss",
            lhs: tape.shape(pred).to_vec(),
            rhs: tape.shape(gt).to_vec(),
        });
    }
    let d = tape.sub(pred, gt)?;
    let sq = tape.square(d);
    Ok(tape.mean(sq))
}

/// `Σ_t MSE(render_t, gt_t) + λ·perceptual(render_t, gt_t)`.
pub fn total_loss<T: Real>(tape: &mut Tape<T>, renders: &[Var], gts: &[Var], cfg: &LossConfig, perceptual: &dyn PerceptualLoss<T>) -> Result<Var> {
    if renders.is_empty() || renders.len() != gts.len() {
        return Err(validation(alloc::format!("{} renders for {} targets", renders.len(), gts.len())));
    }
    let mut total = None;
    for (&r, &g) in renders.iter().zip(gts) {
        let mse = mse_loss(tape, r, g)?;
        let p = perceptual.eval(tape, r, g)?;
        let p = tape.scale(p, T::of(cfg.lambda_perceptual));
        let term = tape.add(mse, p)?;
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    Ok(total.expect("at least one target"))
}

/// PSNR in dB for images in `[0, 1]`.
pub fn psnr(mse: f64) -> f64 {
    -10.0 * libm::log10(mse.max(1e-20))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            peak_lr: 2e-4,
            warmup_steps: 2500,
            total_steps: 100_000,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.peak_lr >= 0.0 && self.warmup_steps > 0 && self.warmup_steps < self.total_steps) {
            return Err(Error::Config(alloc::format!("invalid schedule {:?}", self)));
        }
        Ok(())
    }

    /// The same schedule stretched to `total_steps`, warmup scaled in
    /// proportion and kept within `1..total_steps`.
    pub fn with_total(&self, total_steps: u64) -> Self {
        let scaled = (self.warmup_steps as u128 * total_steps as u128 / self.total_steps.max(1) as u128) as u64;
        Self {
            warmup_steps: scaled.clamp(1, total_steps.saturating_sub(1).max(1)),
            total_steps,
            ..*self
        }
    }
}

/// Linear warmup from 0 to the peak, then cosine decay to 0 at `total_steps`.
/// Steps past the end return 0.
pub fn lr_at(step: u64, s: &ScheduleConfig) -> f64 {
    if step <= s.warmup_steps {
        return s.peak_lr * step as f64 / s.warmup_steps as f64;
    }
    if step >= s.total_steps {
        return 0.0;
    }
    let progress = (step - s.warmup_steps) as f64 / (s.total_steps - s.warmup_steps) as f64;
    0.5 * s.peak_lr * (1.0 + libm::cos(core::f64::consts::PI * progress))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub beta1: f64,
    /// 0.95 by default; 0.095 is accepted as well.
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 0.05,
            eps: 1e-8,
        }
    }
}

/// AdamW moments for every parameter of a store, in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    pub config: OptimizerConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(config: OptimizerConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|p| alloc::vec![T::zero(); p.value.numel()]).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update. `grads[i]` belongs to the i-th parameter; `None` counts
    /// as a zero gradient. Nothing is modified when any gradient is not
    /// finite.
    pub fn update(&mut self, params: &mut ParamStore<T>, grads: &[Option<&[T]>], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(validation(alloc::format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        for (p, g) in params.iter().zip(grads) {
            if let Some(g) = g {
                if g.len() != p.value.numel() {
                    return Err(Error::ParamShape {
                        name: p.name.clone(),
                        expected: p.value.shape().to_vec(),
                        found: alloc::vec![g.len()],
                    });
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient(p.name.clone()));
                }
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::of(1.0 - libm::pow(c.beta1, t as f64));
        let bc2 = T::of(1.0 - libm::pow(c.beta2, t as f64));
        let (lr_t, eps) = (T::of(lr), T::of(c.eps));
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let decay = if p.kind == ParamKind::LayerNormScale {
                T::zero()
            } else {
                T::of(lr * c.weight_decay)
            };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, x) in p.value.data_mut().iter_mut().enumerate() {
                let gj = g.map_or(T::zero(), |g| g[j]);
                *x -= decay * *x;
                m[j] = b1 * m[j] + (T::one() - b1) * gj;
                v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                *x -= lr_t * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Everything a training run is configured with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub schedule: ScheduleConfig,
    pub optimizer: OptimizerConfig,
    /// Input views per step.
    pub inputs: usize,
    /// Target views per step; reduced to what the scene has left.
    pub targets: usize,
    pub background: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            schedule: ScheduleConfig::default(),
            optimizer: OptimizerConfig::default(),
            inputs: 2,
            targets: 6,
            background: [0.0; 3],
        }
    }
}

impl TrainConfig {
    /// Two-layer model on 32×32 scenes, two inputs and one target.
    pub fn toy() -> Self {
        Self {
            model: ModelConfig {
                near: 0.2,
                far: 6.0,
                ..ModelConfig::desk()
            },
            loss: LossConfig { lambda_perceptual: 0.0 },
            schedule: ScheduleConfig {
                peak_lr: 5e-4,
                warmup_steps: 100,
                total_steps: 2000,
            },
            inputs: 2,
            targets: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.schedule.validate()?;
        if self.inputs == 0 || self.targets == 0 {
            return Err(Error::Config("need at least one input and one target view".into()));
        }
        if !(self.loss.lambda_perceptual >= 0.0) {
            return Err(Error::Config("lambda_perceptual must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Input and target view indices for one step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewSplit {
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
}

/// Inputs by farthest point sampling over camera centers (all views when
/// the pool holds exactly `inputs`); targets drawn uniformly from the rest.
pub fn split_views(cameras: &[Camera], inputs: usize, targets: usize, rng: &mut ChaCha8Rng) -> Result<ViewSplit> {
    if cameras.len() <= inputs {
        return Err(validation(alloc::format!(
            "scene has {} views; need {} inputs and at least one target",
            cameras.len(),
            inputs
        )));
    }
    let centers: Vec<_> = cameras.iter().map(|c| c.pose.center()).collect();
    let mut chosen = farthest_point_sample(&centers, inputs)?;
    chosen.sort_unstable();
    let rest: Vec<usize> = (0..cameras.len()).filter(|i| !chosen.contains(i)).collect();
    let n_targets = targets.min(rest.len());
    let mut picked: Vec<usize> = sample(rng, rest.len(), n_targets).into_iter().map(|i| rest[i]).collect();
    picked.sort_unstable();
    Ok(ViewSplit {
        inputs: chosen,
        targets: picked,
    })
}

/// Re-expresses inputs and targets in the frame normalized over the inputs.
pub fn normalized_views<T: Real>(scene: &[ViewInput<T>], split: &ViewSplit) -> Result<(Vec<ViewInput<T>>, Vec<ViewInput<T>>, SceneNormalization)> {
    let poses: Vec<_> = split.inputs.iter().map(|&i| scene[i].camera.pose).collect();
    let (_, norm) = normalize_poses(&poses)?;
    let map = |ids: &[usize]| -> Vec<ViewInput<T>> {
        ids.iter()
            .map(|&i| ViewInput {
                camera: norm.apply_camera(&scene[i].camera),
                image: scene[i].image.clone(),
            })
            .collect()
    };
    Ok((map(&split.inputs), map(&split.targets), norm))
}

/// Renders `gaussians` into each target view with the differentiable path.
pub fn render_targets<T: Real>(tape: &mut Tape<T>, gaussians: &GaussianVars, targets: &[ViewInput<T>], background: [f64; 3]) -> Result<Vec<Var>> {
    targets
        .iter()
        .map(|t| {
            let proj = project_on_tape(tape, gaussians, &t.camera)?;
            let (h, w) = (t.image.shape()[0], t.image.shape()[1]);
            rasterize_naive_diff(tape, &proj, &TargetConfig::new(w, h).with_background(background))
        })
        .collect()
}

/// Losses and metrics of one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    /// Mean PSNR over the step's targets, before the update.
    pub psnr: f64,
}

/// A model, its optimizer state and the run configuration.
pub struct Trainer<T: Real> {
    pub model: Model<T>,
    pub optimizer: AdamW<T>,
    pub config: TrainConfig,
    pub seed: u64,
    perceptual: Box<dyn PerceptualLoss<T>>,
}

impl<T: Real> Trainer<T> {
    pub fn new(config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let model = Model::new(config.model, seed)?;
        Ok(Self::from_model(model, config, seed))
    }

    pub fn from_model(model: Model<T>, config: TrainConfig, seed: u64) -> Self {
        let optimizer = AdamW::new(config.optimizer, &model.params);
        Self {
            model,
            optimizer,
            config,
            seed,
            perceptual: Box::new(NoPerceptual),
        }
    }

    pub fn with_perceptual(mut self, loss: Box<dyn PerceptualLoss<T>>) -> Self {
        self.perceptual = loss;
        self
    }

    /// Number of completed updates.
    pub fn steps_done(&self) -> u64 {
        self.optimizer.step
    }

    fn step_rng(&self, step: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    /// Select views, reconstruct, render targets, backpropagate and update.
    pub fn step(&mut self, scene: &[ViewInput<T>]) -> Result<StepReport> {
        let step = self.optimizer.step + 1;
        let cameras: Vec<Camera> = scene.iter().map(|v| v.camera).collect();
        let split = split_views(&cameras, self.config.inputs, self.config.targets, &mut self.step_rng(step))?;
        let (inputs, targets, _) = normalized_views(scene, &split)?;

        let mut tape = Tape::new();
        let bound = self.model.params.bind(&mut tape);
        let gaussians = self.model.reconstruct(&mut tape, &bound, &inputs, self.seed ^ step)?;
        let renders = render_targets(&mut tape, &gaussians, &targets, self.config.background)?;
        let gts: Vec<Var> = targets.iter().map(|t| tape.constant(t.image.clone())).collect();
        let loss = total_loss(&mut tape, &renders, &gts, &self.config.loss, self.perceptual.as_ref())?;
        let psnr_mean = renders
            .iter()
            .zip(&targets)
            .map(|(&r, t)| psnr(image_mse(tape.value(r), &t.image)))
            .sum::<f64>()
            / renders.len() as f64;
        let loss_value = tape.value(loss).item().f64();
        tape.backward(loss)?;

        let lr = lr_at(step, &self.config.schedule);
        let grads: Vec<Option<&[T]>> = bound.vars().iter().map(|&v| tape.grad(v)).collect();
        self.optimizer.update(&mut self.model.params, &grads, lr)?;
        Ok(StepReport {
            step,
            lr,
            loss: loss_value,
            psnr: psnr_mean,
        })
    }
}

/// Mean squared difference of two equally shaped images.
pub fn image_mse<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    let n = a.numel().max(1) as f64;
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x.f64() - y.f64();
            d * d
        })
        .sum::<f64>()
        / n
}

/// Reconstruction from `inputs` (world frame) and its normalization. The
/// returned Gaussians are in the normalized frame.
pub fn reconstruct_scene<T: Real>(model: &Model<T>, views: &[ViewInput<T>], seed: u64) -> Result<(GaussianSet<T>, SceneNormalization)> {
    let poses: Vec<_> = views.iter().map(|v| v.camera.pose).collect();
    let (_, norm) = normalize_poses(&poses)?;
    let normalized: Vec<ViewInput<T>> = views
        .iter()
        .map(|v| ViewInput {
            camera: norm.apply_camera(&v.camera),
            image: v.image.clone(),
        })
        .collect();
    let mut tape = Tape::new();
    let bound = model.params.bind_frozen(&mut tape);
    let g = model.reconstruct(&mut tape, &bound, &normalized, seed)?;
    Ok((g.to_set(&tape), norm))
}

/// Mean target PSNR of a frozen model under the split a training step would use.
pub fn evaluate<T: Real>(model: &Model<T>, scene: &[ViewInput<T>], config: &TrainConfig, seed: u64) -> Result<f64> {
    let cameras: Vec<Camera> = scene.iter().map(|v| v.camera).collect();
    let split = split_views(&cameras, config.inputs, config.targets, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let (inputs, targets, _) = normalized_views(scene, &split)?;
    let mut tape = Tape::new();
    let bound = model.params.bind_frozen(&mut tape);
    let g = model.reconstruct(&mut tape, &bound, &inputs, seed)?;
    let renders = render_targets(&mut tape, &g, &targets, config.background)?;
    Ok(renders
        .iter()
        .zip(&targets)
        .map(|(&r, t)| psnr(image_mse(tape.value(r), &t.image)))
        .sum::<f64>()
        / targets.len() as f64)
}
