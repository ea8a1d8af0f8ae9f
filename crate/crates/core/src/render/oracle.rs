use alloc::vec::Vec;

use super::{composite_pixel, prepare, RenderTarget, Splat2D, TargetConfig};
use crate::tensor::Tensor;

/// Reference renderer: every splat is evaluated at every pixel.
pub fn render_oracle(splats: &[Splat2D], target: &TargetConfig) -> RenderTarget {
    let (prepared, stats) = prepare(splats);
    let list: Vec<_> = prepared.into_iter().map(|(p, _)| p).collect();
    let (h, w) = (target.height, target.width);
    let mut data = alloc::vec![0.0; h * w * 3];
    for v in 0..h {
        for u in 0..w {
            let c = composite_pixel(list.iter(), u as f64 + 0.5, v as f64 + 0.5, target.background);
            data[(v * w + u) * 3..][..3].copy_from_slice(&c);
        }
    }
    RenderTarget {
        image: Tensor::new([h, w, 3], data).expect("size matches"),
        background: target.background,
        stats,
    }
}
