//! Gaussian splat rasterization.
//!
//! Three renderers share one compositing rule. Splats are sorted once by
//! view depth (ties by Gaussian index) and composited front to back per
//! pixel center `(u + 0.5, v + 0.5)`:
//!
//! ```text
//! α'ᵢ = min(ALPHA_MAX, oᵢ · exp(-½ Δᵀ Σ⁻¹ Δ))    skipped when α'ᵢ < ALPHA_MIN
//! C   = Σᵢ cᵢ α'ᵢ Tᵢ + T_end · background,     Tᵢ = ∏_{j<i} (1 - α'ⱼ)
//! ```
//!
//! [`rasterize_tiled`] bins splats into tiles and stops once transmittance
//! drops below [`T_MIN`]. [`render_oracle`] evaluates every splat at every
//! pixel. [`rasterize_naive_diff`] runs on the tape with a smooth clamp and
//! no early stop.

mod diff;
mod oracle;
mod project;
mod tiled;

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::tensor::Tensor;

pub use diff::{project_on_tape, rasterize_naive_diff, ProjectedVars};
pub use oracle::render_oracle;
pub use project::project;
pub use tiled::rasterize_tiled;

/// Upper clamp on per-splat alpha.
pub const ALPHA_MAX: f64 = 0.99;
/// Contributions below this alpha are skipped.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Minimum binning radius in standard deviations.
pub const SIGMA_RADIUS: f64 = 3.0;
/// Added to both diagonal entries of every projected covariance (px²).
pub const DILATION: f64 = 0.3;
/// Compositing stops once transmittance falls below this.
pub const T_MIN: f64 = 1e-4;
/// Splats closer than this view depth are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Tile edge in pixels.
pub const TILE: usize = 16;
/// Sharpness of the smooth alpha clamp used by the differentiable path.
pub const SMOOTH_CLAMP_SHARPNESS: f64 = 100.0;

/// A Gaussian projected onto the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    /// Projected center in pixels.
    pub mean: [f64; 2],
    /// Covariance `[σxx, σxy, σyy]` in px², dilation included.
    pub cov: [f64; 3],
    /// View-space depth along the forward axis.
    pub depth: f64,
    pub opacity: f64,
    pub color: [f64; 3],
    /// Index of the source Gaussian. Breaks depth ties.
    pub index: usize,
}

impl Splat2D {
    /// Inverse covariance `[A, B, C]`, or `None` when the covariance is not
    /// positive definite.
    pub fn conic(&self) -> Option<[f64; 3]> {
        let [a, b, c] = self.cov;
        let det = a * c - b * b;
        if !(a > 0.0 && c > 0.0 && det > 0.0) || !det.is_finite() {
            return None;
        }
        Some([c / det, -b / det, a / det])
    }
}

/// Counters reported by the plain renderers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RenderStats {
    pub splats: usize,
    /// Splats dropped for a covariance that is not positive definite.
    pub non_psd: usize,
}

/// An `H × W × 3` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderTarget {
    pub image: Tensor<f64>,
    pub background: [f64; 3],
    pub stats: RenderStats,
}

/// Output size and background for a render.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetConfig {
    pub width: usize,
    pub height: usize,
    pub background: [f64; 3],
}

impl TargetConfig {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            background: [0.0; 3],
        }
    }

    pub fn with_background(mut self, background: [f64; 3]) -> Self {
        self.background = background;
        self
    }
}

/// Front-to-back order: depth ascending, then Gaussian index.
pub fn depth_order(a: &Splat2D, b: &Splat2D) -> Ordering {
    a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index))
}

/// A splat ready for compositing.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Prepared {
    pub mean: [f64; 2],
    pub conic: [f64; 3],
    pub opacity: f64,
    pub color: [f64; 3],
}

impl Prepared {
    #[inline]
    pub fn alpha_at(&self, px: f64, py: f64) -> f64 {
        let dx = px - self.mean[0];
        let dy = py - self.mean[1];
        let [a, b, c] = self.conic;
        let q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
        (self.opacity * libm::exp(-0.5 * q)).min(ALPHA_MAX)
    }
}

/// Sorts splats front to back and drops those that can never contribute.
pub(crate) fn prepare(splats: &[Splat2D]) -> (Vec<(Prepared, Splat2D)>, RenderStats) {
    let mut sorted: Vec<Splat2D> = splats.to_vec();
    sorted.sort_by(depth_order);
    let mut stats = RenderStats {
        splats: splats.len(),
        non_psd: 0,
    };
    let mut out = Vec::with_capacity(sorted.len());
    for s in sorted {
        let Some(conic) = s.conic() else {
            stats.non_psd += 1;
            continue;
        };
        if s.opacity.min(ALPHA_MAX) < ALPHA_MIN {
            continue;
        }
        out.push((
            Prepared {
                mean: s.mean,
                conic,
                opacity: s.opacity,
                color: s.color,
            },
            s,
        ));
    }
    (out, stats)
}

/// Composites `splats` (already front to back) at one pixel center.
#[inline]
pub(crate) fn composite_pixel<'a>(splats: impl Iterator<Item = &'a Prepared>, px: f64, py: f64, background: [f64; 3]) -> [f64; 3] {
    let mut t = 1.0;
    let mut c = [0.0; 3];
    for s in splats {
        let alpha = s.alpha_at(px, py);
        if alpha < ALPHA_MIN {
            continue;
        }
        let w = alpha * t;
        for ch in 0..3 {
            c[ch] += s.color[ch] * w;
        }
        t *= 1.0 - alpha;
        if t < T_MIN {
            break;
        }
    }
    for ch in 0..3 {
        c[ch] += t * background[ch];
    }
    c
}
