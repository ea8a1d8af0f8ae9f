use alloc::vec::Vec;

use super::{composite_pixel, prepare, Prepared, RenderTarget, Splat2D, TargetConfig, ALPHA_MIN, SIGMA_RADIUS, TILE};
use crate::tensor::Tensor;

/// Mahalanobis radius beyond which a splat of opacity `o` cannot reach
/// [`ALPHA_MIN`], never less than [`SIGMA_RADIUS`].
pub(crate) fn cutoff_radius(opacity: f64) -> f64 {
    let r2 = 2.0 * libm::log(opacity / ALPHA_MIN);
    libm::sqrt(r2.max(SIGMA_RADIUS * SIGMA_RADIUS))
}

/// Inclusive tile range `[lo, hi]` covered by `[center - half, center + half]`
/// widened by one pixel, or `None` when it misses the image.
fn tile_span(center: f64, half: f64, tiles: usize) -> Option<(usize, usize)> {
    let lo = libm::floor((center - half - 1.0) / TILE as f64);
    let hi = libm::floor((center + half + 1.0) / TILE as f64);
    if !(lo.is_finite() && hi.is_finite()) || hi < 0.0 || lo >= tiles as f64 {
        return None;
    }
    Some((lo.max(0.0) as usize, (hi as usize).min(tiles - 1)))
}

/// Tile-binned renderer. Each tile composites its splats in the global
/// front-to-back order, so the output does not depend on tile scheduling.
pub fn rasterize_tiled(splats: &[Splat2D], target: &TargetConfig) -> RenderTarget {
    let (h, w) = (target.height, target.width);
    let (tx, ty) = (w.div_ceil(TILE), h.div_ceil(TILE));
    let (prepared, stats) = prepare(splats);
    let mut bins: Vec<Vec<u32>> = alloc::vec![Vec::new(); tx * ty];
    for (i, (_, s)) in prepared.iter().enumerate() {
        let r = cutoff_radius(s.opacity);
        let (Some((x0, x1)), Some((y0, y1))) = (
            tile_span(s.mean[0], r * libm::sqrt(s.cov[0]), tx),
            tile_span(s.mean[1], r * libm::sqrt(s.cov[2]), ty),
        ) else {
            continue;
        };
        for by in y0..=y1 {
            for bx in x0..=x1 {
                bins[by * tx + bx].push(i as u32);
            }
        }
    }
    let list: Vec<Prepared> = prepared.into_iter().map(|(p, _)| p).collect();

    let render_tile = |tile: usize| -> Vec<f64> {
        let (bx, by) = (tile % tx, tile / tx);
        let (u0, v0) = (bx * TILE, by * TILE);
        let (u1, v1) = ((u0 + TILE).min(w), (v0 + TILE).min(h));
        let mut out = Vec::with_capacity((u1 - u0) * (v1 - v0) * 3);
        for v in v0..v1 {
            for u in u0..u1 {
                let splats = bins[tile].iter().map(|&i| &list[i as usize]);
                out.extend(composite_pixel(splats, u as f64 + 0.5, v as f64 + 0.5, target.background));
            }
        }
        out
    };

    #[cfg(feature = "parallel")]
    let tiles: Vec<Vec<f64>> = {
        use rayon::prelude::*;
        (0..tx * ty).into_par_iter().map(render_tile).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let tiles: Vec<Vec<f64>> = (0..tx * ty).map(render_tile).collect();

    let mut data = alloc::vec![0.0; h * w * 3];
    for (tile, buf) in tiles.iter().enumerate() {
        let (u0, v0) = ((tile % tx) * TILE, (tile / tx) * TILE);
        let tw = (u0 + TILE).min(w) - u0;
        for (row, chunk) in buf.chunks(tw * 3).enumerate() {
            let start = ((v0 + row) * w + u0) * 3;
            data[start..start + chunk.len()].copy_from_slice(chunk);
        }
    }
    RenderTarget {
        image: Tensor::new([h, w, 3], data).expect("size matches"),
        background: target.background,
        stats,
    }
}
