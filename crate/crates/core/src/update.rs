//! Update layers: per-view uplifted cross-attention against image tokens,
//! then self-attention across the viewpoint tokens of all views.
//!
//! Every sublayer is pre-LN attention with per-head QK RMSNorm, a residual,
//! and a pre-LN GELU MLP with its own residual. Nothing carries a bias.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::camera::{plucker_rays, Camera};
use crate::config::{MinibatchScheme, ModelConfig};
use crate::error::{validation, Result};
use crate::params::{Bound, ParamKind, ParamStore};
use crate::scalar::Real;
use crate::tensor::Tensor;
use crate::tokenizer::{tokenize_image, tokenize_viewpoint, ImageTokens, Tokens, ViewpointTokens, LN_EPS};

/// RMSNorm epsilon for QK normalization.
pub const RMS_EPS: f64 = 1e-6;

/// One posed input image. `image` is `H × W × 3` in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct ViewInput<T> {
    pub camera: Camera,
    pub image: Tensor<T>,
}

fn add_sublayer<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, prefix: &str, cfg: &ModelConfig, k: usize, rng: &mut R) {
    let d = cfg.hidden;
    let name = |s: &str| alloc::format!("{prefix}.{s}");
    store.add_scale(name("norm"), d, ParamKind::LayerNormScale);
    store.add_weight(name("wq"), [d, d * k], rng);
    store.add_weight(name("wk"), [d, d], rng);
    store.add_weight(name("wv"), [d, d], rng);
    store.add_weight(name("wo"), [d * k, d], rng);
    store.add_scale(name("q_norm"), cfg.head_dim(), ParamKind::RmsNormScale);
    store.add_scale(name("k_norm"), cfg.head_dim(), ParamKind::RmsNormScale);
    store.add_scale(name("mlp_norm"), d, ParamKind::LayerNormScale);
    store.add_weight(name("mlp_in"), [d, d * cfg.mlp_ratio], rng);
    store.add_weight(name("mlp_out"), [d * cfg.mlp_ratio, d], rng);
}

/// Adds the parameters of update layer `layer` to `store`.
pub fn init_layer_params<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, layer: usize, cfg: &ModelConfig, rng: &mut R) {
    add_sublayer(store, &cross_prefix(layer), cfg, cfg.effective_uplift(), rng);
    if cfg.use_self_attention {
        add_sublayer(store, &self_prefix(layer), cfg, 1, rng);
    }
}

pub fn cross_prefix(layer: usize) -> String {
    alloc::format!("layers.{layer}.cross")
}

pub fn self_prefix(layer: usize) -> String {
    alloc::format!("layers.{layer}.self")
}

fn qk_norm<T: Real>(tape: &mut Tape<T>, x: Var, scale: Var, hd: usize) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let rows = tape.value(x).numel() / hd;
    let flat = tape.reshape(x, &[rows, hd])?;
    let n = tape.rms_norm(flat, scale, T::of(RMS_EPS))?;
    tape.reshape(n, &shape)
}

fn mlp<T: Real>(tape: &mut Tape<T>, x: Var, w: &Bound, prefix: &str) -> Result<Var> {
    let h = tape.layer_norm(x, w.get(&alloc::format!("{prefix}.mlp_norm"))?, T::of(LN_EPS))?;
    let h = tape.matmul(h, w.get(&alloc::format!("{prefix}.mlp_in"))?)?;
    let h = tape.gelu(h);
    let h = tape.matmul(h, w.get(&alloc::format!("{prefix}.mlp_out"))?)?;
    tape.add(x, h)
}

/// Attention sublayer plus MLP. Queries come from `x` lifted by a factor `k`;
/// keys and values come from `context`, or from the normalized `x` itself
/// when `context` is `None`.
fn sublayer<T: Real>(tape: &mut Tape<T>, x: Var, context: Option<Var>, w: &Bound, prefix: &str, cfg: &ModelConfig, k: usize) -> Result<Var> {
    let d = cfg.hidden;
    let hd = cfg.head_dim();
    let p = |s: &str| alloc::format!("{prefix}.{s}");
    let len = tape.shape(x)[0];
    let h = tape.layer_norm(x, w.get(&p("norm"))?, T::of(LN_EPS))?;
    let src = context.unwrap_or(h);
    let q = tape.matmul(h, w.get(&p("wq"))?)?;
    let q = tape.reshape(q, &[len * k, d])?;
    let keys = tape.matmul(src, w.get(&p("wk"))?)?;
    let values = tape.matmul(src, w.get(&p("wv"))?)?;
    let q = qk_norm(tape, q, w.get(&p("q_norm"))?, hd)?;
    let keys = qk_norm(tape, keys, w.get(&p("k_norm"))?, hd)?;
    let o = tape.attention(q, keys, values, cfg.heads, T::one() / T::of(hd as f64).sqrt())?;
    let o = tape.reshape(o, &[len, d * k])?;
    let o = tape.matmul(o, w.get(&p("wo"))?)?;
    let x = tape.add(x, o)?;
    mlp(tape, x, w, prefix)
}

/// Cross-attention of one view's viewpoint tokens (`Lᵥ × d`) against its
/// image tokens (`Lᵢ × d`), with each viewpoint token lifted into `k` query
/// tokens and folded back afterwards.
pub fn cross_attention_uplifted<T: Real>(tape: &mut Tape<T>, v: Var, s: Var, w: &Bound, prefix: &str, cfg: &ModelConfig) -> Result<Var> {
    cfg.check_lengths(tape.shape(v)[0], tape.shape(s)[0])?;
    sublayer(tape, v, Some(s), w, prefix, cfg, cfg.effective_uplift())
}

/// Self-attention over the concatenated viewpoint tokens of all views.
pub fn self_attention_viewpoints<T: Real>(tape: &mut Tape<T>, all_v: Var, w: &Bound, prefix: &str, cfg: &ModelConfig) -> Result<Var> {
    sublayer(tape, all_v, None, w, prefix, cfg, 1)
}

/// Cross-attention with the viewpoint tokens of all views as queries and the
/// image tokens of all views as keys and values.
pub fn group_attention<T: Real>(tape: &mut Tape<T>, all_v: Var, all_s: Var, w: &Bound, prefix: &str, cfg: &ModelConfig) -> Result<Var> {
    cross_attention_uplifted(tape, all_v, all_s, w, prefix, cfg)
}

fn interleaved(n: usize, blocks: usize, block: usize) -> Vec<usize> {
    (block..n).step_by(blocks).collect()
}

/// Token subsets used by the cross sublayer at `layer_index`.
///
/// Structured schemes split both index ranges into `blocks` interleaved
/// classes (`i mod blocks`) and pick class `layer_index mod blocks`, so any
/// `blocks` consecutive layers touch every token. `Random` draws the same
/// fraction uniformly without replacement from a stream keyed by `seed` and
/// `layer_index`.
pub fn select_minibatch(lv: usize, li: usize, scheme: MinibatchScheme, layer_index: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let blocks = scheme.blocks();
    match scheme {
        MinibatchScheme::Full => ((0..lv).collect(), (0..li).collect()),
        MinibatchScheme::Half | MinibatchScheme::Quarter => {
            let b = layer_index % blocks;
            (interleaved(lv, blocks, b), interleaved(li, blocks, b))
        }
        MinibatchScheme::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (layer_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut pick = |n: usize| {
                let mut v = sample(&mut rng, n, n.div_ceil(blocks)).into_vec();
                v.sort_unstable();
                v
            };
            let vi = pick(lv);
            let ii = pick(li);
            (vi, ii)
        }
    }
}

/// Tokenized inputs of one view.
#[derive(Debug, Clone, Copy)]
pub struct ViewTokens {
    pub viewpoint: ViewpointTokens,
    pub image: ImageTokens,
}

/// Tokenizes every view: viewpoint tokens from rays on the reduced grid,
/// image tokens from RGB and full-resolution rays.
pub fn tokenize_views<T: Real>(tape: &mut Tape<T>, w: &Bound, cfg: &ModelConfig, views: &[ViewInput<T>]) -> Result<Vec<ViewTokens>> {
    cfg.validate()?;
    let first = views.first().ok_or_else(|| validation("need at least one input view"))?;
    let (h, wd) = (first.image.shape()[0], first.image.shape()[1]);
    let (vh, vw) = cfg.viewpoint_res.grid(h, wd);
    let mut out = Vec::with_capacity(views.len());
    for view in views {
        if view.image.shape() != first.image.shape() {
            return Err(validation("all views must share one image resolution"));
        }
        let rays = plucker_rays(&view.camera, h, wd)?;
        let vrays = plucker_rays(&view.camera, vh, vw)?;
        let image = tokenize_image(tape, &view.image, &rays, w, cfg.patch)?;
        let viewpoint = tokenize_viewpoint(tape, &vrays, w, cfg.patch)?;
        cfg.check_lengths(viewpoint.len(), image.len())?;
        out.push(ViewTokens { viewpoint, image });
    }
    Ok(out)
}

/// Runs all update layers over already tokenized views and returns the final
/// viewpoint tokens per view.
pub fn update_layers<T: Real>(tape: &mut Tape<T>, w: &Bound, cfg: &ModelConfig, tokens: &[ViewTokens], seed: u64) -> Result<Vec<ViewpointTokens>> {
    let mut vs: Vec<Var> = tokens.iter().map(|t| t.viewpoint.var).collect();
    let lens: Vec<usize> = tokens.iter().map(|t| t.viewpoint.len()).collect();
    for layer in 0..cfg.layers {
        let cross = cross_prefix(layer);
        if cfg.use_group_attention {
            let all_v = tape.concat_rows(&vs)?;
            let images: Vec<Var> = tokens.iter().map(|t| t.image.var).collect();
            let all_s = tape.concat_rows(&images)?;
            let out = group_attention(tape, all_v, all_s, w, &cross, cfg)?;
            vs = split_rows(tape, out, &lens)?;
        } else {
            for (view, t) in tokens.iter().enumerate() {
                let v = vs[view];
                let s = t.image.var;
                vs[view] = if cfg.minibatch == MinibatchScheme::Full {
                    cross_attention_uplifted(tape, v, s, w, &cross, cfg)?
                } else {
                    let view_seed = seed.wrapping_add(view as u64);
                    let (vi, ii) = select_minibatch(lens[view], t.image.len(), cfg.minibatch, layer, view_seed);
                    let v_sel = tape.gather_rows(v, &vi)?;
                    let s_sel = tape.gather_rows(s, &ii)?;
                    let upd = cross_attention_uplifted(tape, v_sel, s_sel, w, &cross, cfg)?;
                    tape.scatter_rows(v, &vi, upd)?
                };
            }
        }
        if cfg.use_self_attention {
            let all_v = tape.concat_rows(&vs)?;
            let out = self_attention_viewpoints(tape, all_v, w, &self_prefix(layer), cfg)?;
            vs = split_rows(tape, out, &lens)?;
        }
    }
    Ok(tokens.iter().zip(vs).map(|(t, var)| Tokens { var, ..t.viewpoint }).collect())
}

/// Tokenize, then refine through every update layer.
pub fn forward<T: Real>(tape: &mut Tape<T>, w: &Bound, cfg: &ModelConfig, views: &[ViewInput<T>], seed: u64) -> Result<Vec<ViewpointTokens>> {
    let tokens = tokenize_views(tape, w, cfg, views)?;
    update_layers(tape, w, cfg, &tokens, seed)
}

fn split_rows<T: Real>(tape: &mut Tape<T>, x: Var, lens: &[usize]) -> Result<Vec<Var>> {
    if lens.len() == 1 {
        return Ok(alloc::vec![x]);
    }
    let mut start = 0;
    let mut out = Vec::with_capacity(lens.len());
    for &n in lens {
        out.push(tape.slice_rows(x, start, n)?);
        start += n;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_selects_everything() {
        let (v, i) = select_minibatch(5, 9, MinibatchScheme::Full, 3, 0);
        assert_eq!(v, (0..5).collect::<Vec<_>>());
        assert_eq!(i, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn half_alternates_disjoint_halves() {
        let (v0, i0) = select_minibatch(256, 1024, MinibatchScheme::Half, 0, 0);
        let (v1, i1) = select_minibatch(256, 1024, MinibatchScheme::Half, 1, 0);
        assert_eq!((v0.len(), i0.len()), (128, 512));
        assert!(v0.iter().all(|x| !v1.contains(x)));
        let mut all: Vec<usize> = v0.iter().chain(&v1).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..256).collect::<Vec<_>>());
        let mut all: Vec<usize> = i0.iter().chain(&i1).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1024).collect::<Vec<_>>());
    }

    #[test]
    fn random_is_seeded_and_sized() {
        let a = select_minibatch(64, 256, MinibatchScheme::Random, 2, 11);
        let b = select_minibatch(64, 256, MinibatchScheme::Random, 2, 11);
        let c = select_minibatch(64, 256, MinibatchScheme::Random, 3, 11);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!((a.0.len(), a.1.len()), (16, 64));
        assert!(a.0.windows(2).all(|w| w[0] < w[1]));
    }
}
