//! Patch tokenization of Plücker ray maps and images.
//!
//! Patches are taken in raster order. Inside a patch the layout is
//! channel-last row-major: element `(r, c, ch)` of a `p × p × C` patch lands
//! at column `(r·p + c)·C + ch`. Checkpoints depend on this order.

use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::camera::PluckerRayMap;
use crate::error::{validation, Error, Result};
use crate::params::{Bound, ParamKind, ParamStore};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// LayerNorm epsilon used throughout the model.
pub const LN_EPS: f64 = 1e-5;

/// A per-view token matrix together with the grid it was cut from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tokens {
    pub var: Var,
    /// Pixel grid height and width.
    pub height: usize,
    pub width: usize,
    pub patch: usize,
}

impl Tokens {
    pub fn len(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub type ViewpointTokens = Tokens;
pub type ImageTokens = Tokens;

fn check_divisible(h: usize, w: usize, p: usize) -> Result<()> {
    if p == 0 || h == 0 || w == 0 || !h.is_multiple_of(p) || !w.is_multiple_of(p) {
        return Err(validation(alloc::format!("{}×{} grid is not divisible into {}×{} patches", h, w, p, p)));
    }
    Ok(())
}

/// Index map shared by `patchify` and `unpatchify`: entry `i` of the patch
/// matrix reads element `map[i]` of the `h × w × c` array.
pub fn patch_index(h: usize, w: usize, c: usize, p: usize) -> Vec<usize> {
    let (gh, gw) = (h / p, w / p);
    let mut idx = Vec::with_capacity(h * w * c);
    for pr in 0..gh {
        for pc in 0..gw {
            for r in 0..p {
                for col in 0..p {
                    let pix = (pr * p + r) * w + pc * p + col;
                    idx.extend((0..c).map(|ch| pix * c + ch));
                }
            }
        }
    }
    idx
}

/// `H × W × C` array to a `(H·W/p²) × (C·p²)` patch matrix.
pub fn patchify<T: Real>(map: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    let &[h, w, c] = map.shape() else {
        return Err(Error::Dimension {
            op: "patchify",
            detail: alloc::format!("expected H×W×C, got {:?}", map.shape()),
        });
    };
    check_divisible(h, w, p)?;
    let d = map.data();
    let data = patch_index(h, w, c, p).into_iter().map(|i| d[i]).collect();
    Tensor::new([(h / p) * (w / p), c * p * p], data)
}

/// Inverse of [`patchify`].
pub fn unpatchify<T: Real>(patches: &Tensor<T>, h: usize, w: usize, p: usize) -> Result<Tensor<T>> {
    check_divisible(h, w, p)?;
    let rows = (h / p) * (w / p);
    if patches.rank() != 2 || patches.shape()[0] != rows || !patches.shape()[1].is_multiple_of(p * p) {
        return Err(Error::Shape {
            op: "unpatchify",
            lhs: patches.shape().to_vec(),
            rhs: alloc::vec![rows, p * p],
        });
    }
    let c = patches.shape()[1] / (p * p);
    let mut out = alloc::vec![T::zero(); h * w * c];
    for (src, dst) in patch_index(h, w, c, p).into_iter().enumerate() {
        out[dst] = patches.data()[src];
    }
    Tensor::new([h, w, c], out)
}

/// Adds the tokenizer's parameters to `store`.
pub fn init_params<T: Real, R: rand::Rng + ?Sized>(store: &mut ParamStore<T>, p: usize, d: usize, rng: &mut R) {
    store.add_weight("tokenizer.view_proj", [6 * p * p, d], rng);
    store.add_weight("tokenizer.image_proj", [9 * p * p, d], rng);
    store.add_scale("tokenizer.view_norm", d, ParamKind::LayerNormScale);
    store.add_scale("tokenizer.image_norm", d, ParamKind::LayerNormScale);
}

/// Patchify, project `6p² → d`, LayerNorm.
pub fn tokenize_viewpoint<T: Real>(tape: &mut Tape<T>, rays: &PluckerRayMap, w: &Bound, p: usize) -> Result<ViewpointTokens> {
    let proj = w.get("tokenizer.view_proj")?;
    let expected = 6 * p * p;
    if tape.shape(proj)[0] != expected {
        return Err(Error::Shape {
            op: "tokenize_viewpoint",
            lhs: alloc::vec![rays.height, rays.width, 6],
            rhs: tape.shape(proj).to_vec(),
        });
    }
    let patches = patchify(&rays.to_tensor::<T>(), p)?;
    let x = tape.constant(patches);
    let x = tape.matmul(x, proj)?;
    let x = tape.layer_norm(x, w.get("tokenizer.view_norm")?, T::of(LN_EPS))?;
    Ok(Tokens {
        var: x,
        height: rays.height,
        width: rays.width,
        patch: p,
    })
}

/// Per patch, the flattened RGB block (`3p²`) followed by the flattened
/// Plücker block (`6p²`), projected `9p² → d` and LayerNormed.
pub fn tokenize_image<T: Real>(tape: &mut Tape<T>, image: &Tensor<T>, rays: &PluckerRayMap, w: &Bound, p: usize) -> Result<ImageTokens> {
    let &[h, wd, 3] = image.shape() else {
        return Err(validation(alloc::format!("image must be H×W×3, got {:?}", image.shape())));
    };
    if (h, wd) != (rays.height, rays.width) {
        return Err(validation(alloc::format!(
            "image is {}×{} but its ray map is {}×{}",
            h,
            wd,
            rays.height,
            rays.width
        )));
    }
    if !image.is_finite() {
        return Err(validation("image contains non-finite values"));
    }
    let proj = w.get("tokenizer.image_proj")?;
    if tape.shape(proj)[0] != 9 * p * p {
        return Err(Error::Shape {
            op: "tokenize_image",
            lhs: alloc::vec![h, wd, 9],
            rhs: tape.shape(proj).to_vec(),
        });
    }
    let rgb = tape.constant(patchify(image, p)?);
    let ray = tape.constant(patchify(&rays.to_tensor::<T>(), p)?);
    let x = tape.concat_cols(&[rgb, ray])?;
    let x = tape.matmul(x, proj)?;
    let x = tape.layer_norm(x, w.get("tokenizer.image_norm")?, T::of(LN_EPS))?;
    Ok(Tokens {
        var: x,
        height: h,
        width: wd,
        patch: p,
    })
}
