//! Decoding viewpoint tokens into pixel-aligned 3D Gaussians.
//!
//! Each viewpoint pixel yields 16 raw channels, in order: xy offset (2),
//! depth (3), opacity (1), scale (3), rotation quaternion `wxyz` (4) and
//! color (3). The activations below are the checkpoint contract.

use alloc::vec::Vec;

use nalgebra::{Quaternion, UnitQuaternion};

use crate::autodiff::{Tape, Var};
use crate::camera::{Camera, SceneNormalization, Vec3};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::scalar::Real;
use crate::tensor::Tensor;
use crate::tokenizer::{patch_index, ViewpointTokens};

pub const RAW_CHANNELS: usize = 16;
/// Raw scales are clamped to this range before `exp`.
pub const LOG_SCALE_RANGE: (f64, f64) = (-10.0, 2.0);
/// Quaternions shorter than this decode to the identity rotation.
pub const QUAT_EPS: f64 = 1e-8;
/// Offsets stay within half a viewpoint pixel of the pixel center.
pub const MAX_OFFSET: f64 = 0.5;

/// One decoded primitive. `rotation` is a unit quaternion `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian<T> {
    pub mean: [T; 3],
    pub opacity: T,
    pub scale: [T; 3],
    pub rotation: [T; 4],
    pub color: [T; 3],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaussianSet<T> {
    pub gaussians: Vec<Gaussian<T>>,
}

impl<T: Real> GaussianSet<T> {
    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Checks every attribute lies in its codomain.
    pub fn validate(&self) -> Result<()> {
        for (i, g) in self.gaussians.iter().enumerate() {
            let qn = g.rotation.iter().map(|&q| q * q).sum::<T>().sqrt();
            let ok = g.mean.iter().all(|m| m.is_finite())
                && g.opacity > T::zero()
                && g.opacity < T::one()
                && g.scale.iter().all(|&s| s > T::zero() && s.is_finite())
                && (qn - T::one()).abs() <= T::of(1e-5)
                && g.color.iter().all(|&c| c > T::zero() && c < T::one());
            if !ok {
                return Err(Error::Validation(alloc::format!("gaussian {} out of range: {:?}", i, g)));
            }
        }
        Ok(())
    }

    /// Maps a set from the normalized scene frame back to world
    /// coordinates: means and orientations by the inverse similarity,
    /// scales divided by the normalization scale.
    pub fn to_world(&self, norm: &SceneNormalization) -> GaussianSet<T> {
        let r = UnitQuaternion::from_matrix(&norm.rotation);
        let gaussians = self
            .gaussians
            .iter()
            .map(|g| {
                let m = norm.invert_point(&Vec3::new(g.mean[0].f64(), g.mean[1].f64(), g.mean[2].f64()));
                let [w, x, y, z] = g.rotation.map(|v| v.f64());
                let q = r * UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z));
                let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
                Gaussian {
                    mean: [m.x, m.y, m.z].map(T::of),
                    opacity: g.opacity,
                    scale: g.scale.map(|s| T::of(s.f64() / norm.scale)),
                    rotation: [q.w, q.i, q.j, q.k].map(T::of),
                    color: g.color,
                }
            })
            .collect();
        GaussianSet { gaussians }
    }

    pub fn cast<U: Real>(&self) -> GaussianSet<U> {
        let c3 = |a: [T; 3]| a.map(|v| U::of(v.f64()));
        GaussianSet {
            gaussians: self
                .gaussians
                .iter()
                .map(|g| Gaussian {
                    mean: c3(g.mean),
                    opacity: U::of(g.opacity.f64()),
                    scale: c3(g.scale),
                    rotation: g.rotation.map(|v| U::of(v.f64())),
                    color: c3(g.color),
                })
                .collect(),
        }
    }
}

/// Gaussian attributes as tape variables, one row per Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GaussianVars {
    /// `N × 3` world positions.
    pub means: Var,
    /// `N × 1`.
    pub opacity: Var,
    /// `N × 3`.
    pub scales: Var,
    /// `N × 4` unit quaternions.
    pub rotations: Var,
    /// `N × 3`.
    pub colors: Var,
}

impl GaussianVars {
    pub fn len<T: Real>(&self, tape: &Tape<T>) -> usize {
        tape.shape(self.means)[0]
    }

    /// Concatenates several sets row-wise.
    pub fn concat<T: Real>(tape: &mut Tape<T>, parts: &[GaussianVars]) -> Result<Self> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let mut cat = |f: fn(&GaussianVars) -> Var| -> Result<Var> {
            let vs: Vec<Var> = parts.iter().map(f).collect();
            tape.concat_rows(&vs)
        };
        Ok(Self {
            means: cat(|g| g.means)?,
            opacity: cat(|g| g.opacity)?,
            scales: cat(|g| g.scales)?,
            rotations: cat(|g| g.rotations)?,
            colors: cat(|g| g.colors)?,
        })
    }

    pub fn to_set<T: Real>(&self, tape: &Tape<T>) -> GaussianSet<T> {
        let (m, o, s, r, c) = (
            tape.value(self.means).data(),
            tape.value(self.opacity).data(),
            tape.value(self.scales).data(),
            tape.value(self.rotations).data(),
            tape.value(self.colors).data(),
        );
        let v3 = |d: &[T], i: usize| [d[3 * i], d[3 * i + 1], d[3 * i + 2]];
        GaussianSet {
            gaussians: (0..o.len())
                .map(|i| Gaussian {
                    mean: v3(m, i),
                    opacity: o[i],
                    scale: v3(s, i),
                    rotation: [r[4 * i], r[4 * i + 1], r[4 * i + 2], r[4 * i + 3]],
                    color: v3(c, i),
                })
                .collect(),
        }
    }

    /// Places a plain set on the tape as trainable leaves.
    pub fn from_set<T: Real>(tape: &mut Tape<T>, set: &GaussianSet<T>, trainable: bool) -> Self {
        let n = set.len();
        let mut leaf = |width: usize, f: &dyn Fn(&Gaussian<T>, usize) -> T| {
            let t = Tensor::from_fn([n, width], |i| f(&set.gaussians[i / width], i % width));
            if trainable {
                tape.leaf(t)
            } else {
                tape.constant(t)
            }
        };
        Self {
            means: leaf(3, &|g, j| g.mean[j]),
            opacity: leaf(1, &|g, _| g.opacity),
            scales: leaf(3, &|g, j| g.scale[j]),
            rotations: leaf(4, &|g, j| g.rotation[j]),
            colors: leaf(3, &|g, j| g.color[j]),
        }
    }
}

/// Raw decoder output for one view: a `(Hᵛ·Wᵛ) × 16` matrix whose row
/// `v·Wᵛ + u` belongs to viewpoint pixel `(u, v)`, i.e. an `Hᵛ × Wᵛ × 16`
/// array in row-major order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawGaussianChannels {
    pub var: Var,
    pub height: usize,
    pub width: usize,
}

pub fn init_params<T: Real, R: rand::Rng + ?Sized>(store: &mut ParamStore<T>, p: usize, d: usize, rng: &mut R) {
    store.add_weight("decoder.head", [d, RAW_CHANNELS * p * p], rng);
}

/// Linear head `d → 16p²` per token, then scattered back to pixels.
pub fn decode_tokens<T: Real>(tape: &mut Tape<T>, v: &ViewpointTokens, w: &Bound) -> Result<RawGaussianChannels> {
    let head = w.get("decoder.head")?;
    let p = v.patch;
    if tape.shape(head)[1] != RAW_CHANNELS * p * p || tape.shape(v.var)[0] != v.len() {
        return Err(Error::Shape {
            op: "decode_tokens",
            lhs: tape.shape(v.var).to_vec(),
            rhs: tape.shape(head).to_vec(),
        });
    }
    let x = tape.matmul(v.var, head)?;
    let (h, wd) = (v.height, v.width);
    let mut inverse = alloc::vec![0usize; h * wd * RAW_CHANNELS];
    for (src, dst) in patch_index(h, wd, RAW_CHANNELS, p).into_iter().enumerate() {
        inverse[dst] = src;
    }
    let var = tape.gather(x, &inverse, &[h * wd, RAW_CHANNELS])?;
    Ok(RawGaussianChannels { var, height: h, width: wd })
}

/// Activated per-pixel parameters, before unprojection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActivatedChannels {
    /// `N × 2`, in viewpoint pixels, within `±MAX_OFFSET`.
    pub offset: Var,
    /// `N × 1` distance along the ray, within `(near, far)`.
    pub depth: Var,
    pub opacity: Var,
    pub scales: Var,
    pub rotations: Var,
    pub colors: Var,
}

/// Post-activations:
/// offset `0.5·tanh`, depth `near·(far/near)^σ(mean of the 3 depth
/// channels)`, opacity and color `σ`, scale `exp(clamp(·, -10, 2))`,
/// rotation normalized (identity when the raw quaternion vanishes).
pub fn activate<T: Real>(tape: &mut Tape<T>, raw: &RawGaussianChannels, near: f64, far: f64) -> Result<ActivatedChannels> {
    if !(near > 0.0 && near < far) {
        return Err(Error::Validation(alloc::format!("need 0 < near < far, got {near} and {far}")));
    }
    let x = raw.var;
    let off = tape.slice_cols(x, 0, 2)?;
    let off = tape.tanh(off);
    let offset = tape.scale(off, T::of(MAX_OFFSET));

    let depth = tape.slice_cols(x, 2, 3)?;
    let depth = tape.mean_last(depth)?;
    let depth = tape.sigmoid(depth);
    let depth = tape.scale(depth, T::of(libm::log(far / near)));
    let depth = tape.exp(depth);
    let depth = tape.scale(depth, T::of(near));

    let opacity = tape.slice_cols(x, 5, 1)?;
    let opacity = tape.sigmoid(opacity);

    let scales = tape.slice_cols(x, 6, 3)?;
    let scales = tape.clamp(scales, T::of(LOG_SCALE_RANGE.0), T::of(LOG_SCALE_RANGE.1));
    let scales = tape.exp(scales);

    let rot = tape.slice_cols(x, 9, 4)?;
    let identity = [T::one(), T::zero(), T::zero(), T::zero()];
    let rotations = tape.normalize_rows(rot, T::of(QUAT_EPS), &identity)?;

    let colors = tape.slice_cols(x, 13, 3)?;
    let colors = tape.sigmoid(colors);

    Ok(ActivatedChannels {
        offset,
        depth,
        opacity,
        scales,
        rotations,
        colors,
    })
}

/// Places each Gaussian on the ray through its offset pixel center at the
/// decoded distance. `camera` must already be rescaled to the viewpoint grid.
pub fn unproject<T: Real>(tape: &mut Tape<T>, act: &ActivatedChannels, camera: &Camera, height: usize, width: usize) -> Result<GaussianVars> {
    let n = height * width;
    if tape.shape(act.offset)[0] != n {
        return Err(Error::Shape {
            op: "unproject",
            lhs: tape.shape(act.offset).to_vec(),
            rhs: alloc::vec![height, width],
        });
    }
    let k = &camera.intrinsics;
    let base_x = Tensor::from_fn([n, 1], |i| T::of(((i % width) as f64 + 0.5 - k.cx) / k.fx));
    let base_y = Tensor::from_fn([n, 1], |i| T::of(((i / width) as f64 + 0.5 - k.cy) / k.fy));
    let (bx, by) = (tape.constant(base_x), tape.constant(base_y));
    let ones = tape.constant(Tensor::full([n, 1], T::one()));

    let ox = tape.slice_cols(act.offset, 0, 1)?;
    let ox = tape.scale(ox, T::of(1.0 / k.fx));
    let x = tape.add(ox, bx)?;
    let oy = tape.slice_cols(act.offset, 1, 1)?;
    let oy = tape.scale(oy, T::of(1.0 / k.fy));
    let y = tape.add(oy, by)?;
    let local = tape.concat_cols(&[x, y, ones])?;

    let r = camera.pose.rotation();
    let rt = tape.constant(Tensor::from_fn([3, 3], |i| T::of(r[(i % 3, i / 3)])));
    let dir = tape.matmul(local, rt)?;
    let dir = tape.normalize_rows(dir, T::of(1e-12), &[T::zero(), T::zero(), T::one()])?;
    let dist = tape.mul(dir, act.depth)?;
    let o = camera.pose.center();
    let origin = tape.constant(Tensor::new([1, 3], alloc::vec![T::of(o.x), T::of(o.y), T::of(o.z)])?);
    let means = tape.add(dist, origin)?;
    Ok(GaussianVars {
        means,
        opacity: act.opacity,
        scales: act.scales,
        rotations: act.rotations,
        colors: act.colors,
    })
}

/// Total Gaussians for `views` viewpoint grids of `height × width`.
pub fn gaussian_count(views: usize, height: usize, width: usize) -> usize {
    views * height * width
}
