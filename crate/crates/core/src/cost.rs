//! Closed-form compute, parameter, Gaussian-count and memory estimates.
//!
//! FLOPs count two per multiply-accumulate and ignore norms, activations and
//! softmax.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::config::{MinibatchScheme, ModelConfig, ViewpointRes};
use crate::error::{validation, Result};
pub use crate::gaussian::gaussian_count;

/// One cross-attention between `lv` queries and `li` keys at width `d`:
/// Q/O projections over the queries, K/V over the keys, scores and the
/// weighted sum. `4d²(lv + li) + 4·lv·li·d`.
pub fn cross_attn_flops(d: u64, lv: u64, li: u64) -> u64 {
    4 * d * d * (lv + li) + 4 * lv * li * d
}

/// Query × key score counts of four multi-view attention layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeCosts {
    /// Full attention over all image tokens of all views.
    pub full: u64,
    /// Full-resolution viewpoint tokens attending to all image tokens.
    pub decoupled: u64,
    /// Reduced-resolution viewpoint tokens attending to all image tokens.
    pub group: u64,
    /// Per-view cross-attention, then self-attention over viewpoint tokens.
    pub two_stage: u64,
}

impl SchemeCosts {
    /// Each cost divided by `full`.
    pub fn ratios(&self) -> [f64; 4] {
        let f = self.full as f64;
        [1.0, self.decoupled as f64 / f, self.group as f64 / f, self.two_stage as f64 / f]
    }
}

/// Token counts per view for an `h × w` image.
pub fn token_counts(h: usize, w: usize, p: usize, res: ViewpointRes) -> Result<(u64, u64)> {
    let s = res.divisor();
    if p == 0 || !h.is_multiple_of(p * s) || !w.is_multiple_of(p * s) {
        return Err(validation(alloc::format!(
            "{h}×{w} is not divisible by patch {p} at viewpoint divisor {s}"
        )));
    }
    let li = (h / p) * (w / p);
    let lv = (h / s / p) * (w / s / p);
    Ok((lv as u64, li as u64))
}

pub fn scheme_score_cost(n: usize, h: usize, w: usize, p: usize, res: ViewpointRes) -> Result<SchemeCosts> {
    let (lv, li) = token_counts(h, w, p, res)?;
    let n = n as u64;
    Ok(SchemeCosts {
        full: (n * li) * (n * li),
        decoupled: (n * li) * (n * li),
        group: (n * lv) * (n * li),
        two_stage: n * lv * li + (n * lv) * (n * lv),
    })
}

fn sublayer_params(cfg: &ModelConfig, k: usize) -> usize {
    let d = cfg.hidden;
    let attn = d * d * k + 2 * d * d + d * k * d;
    let norms = 2 * d + 2 * cfg.head_dim();
    let mlp = 2 * d * d * cfg.mlp_ratio;
    attn + norms + mlp
}

/// Exact number of model parameters.
pub fn parameter_count(cfg: &ModelConfig) -> usize {
    let (d, p) = (cfg.hidden, cfg.patch);
    let tokenizer = 6 * p * p * d + 9 * p * p * d + 2 * d;
    let mut layer = sublayer_params(cfg, cfg.effective_uplift());
    if cfg.use_self_attention {
        layer += sublayer_params(cfg, 1);
    }
    let head = d * 16 * p * p;
    tokenizer + cfg.layers * layer + head
}

/// Problem size a cost report is evaluated at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostInput {
    pub model: ModelConfig,
    pub views: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for CostInput {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            views: 16,
            height: 256,
            width: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeFlops {
    pub scheme: MinibatchScheme,
    /// One view's cross-attention under this scheme, uplifting excluded.
    pub flops: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerFlops {
    /// All views' cross sublayers, uplifting and MLPs included.
    pub cross: u64,
    /// The self sublayer over all viewpoint tokens, MLP included.
    pub self_attention: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub input: CostInput,
    pub image_tokens: u64,
    pub viewpoint_tokens: u64,
    /// Cross-attention FLOPs per view for full, half and quarter batches.
    pub cross_attention: Vec<SchemeFlops>,
    pub scheme_scores: SchemeCosts,
    pub scheme_ratios: [f64; 4],
    pub layer: LayerFlops,
    pub tokenizer_flops: u64,
    pub decoder_flops: u64,
    pub total_flops: u64,
    pub parameters: u64,
    pub gaussians: u64,
    /// Stored f32 activations of one forward pass, in bytes.
    pub activation_bytes: u64,
}

/// FLOPs of one update layer under `cfg.minibatch`.
pub fn layer_flops(cfg: &ModelConfig, views: u64, lv: u64, li: u64) -> LayerFlops {
    let (d, k, r) = (cfg.hidden as u64, cfg.effective_uplift() as u64, cfg.mlp_ratio as u64);
    let b = cfg.minibatch.blocks() as u64;
    let mlp = |tokens: u64| 4 * r * tokens * d * d;
    let cross = if cfg.use_group_attention {
        cross_attn_flops(d, k * views * lv, views * li) + mlp(views * lv)
    } else {
        let (qv, qi) = (lv / b, li / b);
        views * (cross_attn_flops(d, k * qv, qi) + mlp(qv))
    };
    let self_attention = if cfg.use_self_attention {
        cross_attn_flops(d, views * lv, views * lv) + mlp(views * lv)
    } else {
        0
    };
    LayerFlops {
        cross,
        self_attention,
        total: cross + self_attention,
    }
}

/// Stored activations of one forward pass without recomputation, in f32
/// elements times four. Informational.
fn activation_bytes(cfg: &ModelConfig, views: u64, lv: u64, li: u64) -> u64 {
    let (d, k, r, heads) = (cfg.hidden as u64, cfg.effective_uplift() as u64, cfg.mlp_ratio as u64, cfg.heads as u64);
    let p2 = (cfg.patch * cfg.patch) as u64;
    let sublayer = |lq: u64, lk: u64, kk: u64| -> u64 {
        let attn = lq * d + lq * kk * d + 2 * lk * d + heads * lq * kk * lk + lq * kk * d + 2 * lq * d;
        let mlp = lq * d + 2 * lq * r * d + 2 * lq * d;
        attn + mlp
    };
    let cross = if cfg.use_group_attention {
        sublayer(views * lv, views * li, k)
    } else {
        let b = cfg.minibatch.blocks() as u64;
        views * sublayer(lv / b, li / b, k)
    };
    let selfs = if cfg.use_self_attention {
        sublayer(views * lv, views * lv, 1)
    } else {
        0
    };
    let tokens = views * (li * (9 * p2 + 2 * d) + lv * (6 * p2 + 2 * d));
    let decoder = views * lv * 16 * p2 * 2;
    4 * (tokens + cfg.layers as u64 * (cross + selfs) + decoder)
}

pub fn cost_report(input: &CostInput) -> Result<CostReport> {
    let cfg = &input.model;
    cfg.validate()?;
    let (lv, li) = token_counts(input.height, input.width, cfg.patch, cfg.viewpoint_res)?;
    let n = input.views as u64;
    let d = cfg.hidden as u64;
    let p2 = (cfg.patch * cfg.patch) as u64;
    let cross_attention = [MinibatchScheme::Full, MinibatchScheme::Half, MinibatchScheme::Quarter]
        .into_iter()
        .map(|scheme| {
            let b = scheme.blocks() as u64;
            SchemeFlops {
                scheme,
                flops: cross_attn_flops(d, lv / b, li / b),
            }
        })
        .collect();
    let scheme_scores = scheme_score_cost(input.views, input.height, input.width, cfg.patch, cfg.viewpoint_res)?;
    let layer = layer_flops(cfg, n, lv, li);
    let tokenizer_flops = n * (2 * li * 9 * p2 * d + 2 * lv * 6 * p2 * d);
    let decoder_flops = n * 2 * lv * d * 16 * p2;
    let (vh, vw) = cfg.viewpoint_res.grid(input.height, input.width);
    Ok(CostReport {
        input: *input,
        image_tokens: li,
        viewpoint_tokens: lv,
        cross_attention,
        scheme_ratios: scheme_scores.ratios(),
        scheme_scores,
        layer,
        tokenizer_flops,
        decoder_flops,
        total_flops: tokenizer_flops + cfg.layers as u64 * layer.total + decoder_flops,
        parameters: parameter_count(cfg) as u64,
        gaussians: gaussian_count(input.views, vh, vw) as u64,
        activation_bytes: activation_bytes(cfg, n, lv, li),
    })
}
