use alloc::boxed::Box;
use alloc::vec::Vec;

use super::{TargetConfig, ALPHA_MAX, ALPHA_MIN, DILATION, NEAR_PLANE, SMOOTH_CLAMP_SHARPNESS};
use crate::autodiff::{CustomOp, Tape, UnaryKind, Var};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::GaussianVars;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Projected splats on the tape. `depth` and `visible` are plain values:
/// sort order and culling are not differentiated.
#[derive(Debug, Clone)]
pub struct ProjectedVars {
    /// `N × 2` pixel centers.
    pub means: Var,
    /// `N × 3` covariances `[σxx, σxy, σyy]`, dilation included.
    pub cov: Var,
    pub opacity: Var,
    pub colors: Var,
    pub depth: Vec<f64>,
    pub visible: Vec<bool>,
}

/// Same projection as [`super::project`], recorded on the tape.
pub fn project_on_tape<T: Real>(tape: &mut Tape<T>, g: &GaussianVars, camera: &Camera) -> Result<ProjectedVars> {
    let k = &camera.intrinsics;
    let rot = camera.pose.rotation();
    let c = camera.pose.center();

    let origin = tape.constant(Tensor::new([1, 3], alloc::vec![T::of(c.x), T::of(c.y), T::of(c.z)])?);
    let rel = tape.sub(g.means, origin)?;
    let r = tape.constant(Tensor::from_fn([3, 3], |i| T::of(rot[(i / 3, i % 3)])));
    let t = tape.matmul(rel, r)?;
    let (tx, ty, tz_raw) = (tape.slice_cols(t, 0, 1)?, tape.slice_cols(t, 1, 1)?, tape.slice_cols(t, 2, 1)?);

    let depth: Vec<f64> = tape.value(tz_raw).data().iter().map(|v| v.f64()).collect();
    let visible = depth.iter().map(|&z| z >= NEAR_PLANE).collect();

    let tz = tape.clamp(tz_raw, T::of(NEAR_PLANE), T::max_value());
    let iz = tape.unary(UnaryKind::Recip, tz);
    let xz = tape.mul(tx, iz)?;
    let yz = tape.mul(ty, iz)?;
    let u = tape.scale(xz, T::of(k.fx));
    let u = tape.add_scalar(u, T::of(k.cx));
    let v = tape.scale(yz, T::of(k.fy));
    let v = tape.add_scalar(v, T::of(k.cy));
    let means = tape.concat_cols(&[u, v])?;

    // Rotation entries R[k][j] at column 3k + j.
    let q = tape.normalize_rows(g.rotations, T::of(1e-12), &[T::one(), T::zero(), T::zero(), T::zero()])?;
    let qc: Vec<Var> = (0..4).map(|i| tape.slice_cols(q, i, 1)).collect::<Result<_>>()?;
    let (qw, qx, qy, qz) = (qc[0], qc[1], qc[2], qc[3]);
    let mut prod = |a: Var, b: Var| tape.mul(a, b);
    let (xx, yy, zz) = (prod(qx, qx)?, prod(qy, qy)?, prod(qz, qz)?);
    let (xy, xz_, yz_) = (prod(qx, qy)?, prod(qx, qz)?, prod(qy, qz)?);
    let (wx, wy, wz) = (prod(qw, qx)?, prod(qw, qy)?, prod(qw, qz)?);
    let diag = |tape: &mut Tape<T>, a: Var, b: Var| -> Result<Var> {
        let s = tape.add(a, b)?;
        let s = tape.scale(s, T::of(-2.0));
        Ok(tape.add_scalar(s, T::one()))
    };
    let off = |tape: &mut Tape<T>, a: Var, b: Var, sign: f64| -> Result<Var> {
        let b = tape.scale(b, T::of(sign));
        let s = tape.add(a, b)?;
        Ok(tape.scale(s, T::of(2.0)))
    };
    let entries = [
        diag(tape, yy, zz)?,
        off(tape, xy, wz, -1.0)?,
        off(tape, xz_, wy, 1.0)?,
        off(tape, xy, wz, 1.0)?,
        diag(tape, xx, zz)?,
        off(tape, yz_, wx, -1.0)?,
        off(tape, xz_, wy, -1.0)?,
        off(tape, yz_, wx, 1.0)?,
        diag(tape, xx, yy)?,
    ];
    let rq = tape.concat_cols(&entries)?;
    let s3 = tape.concat_cols(&[g.scales, g.scales, g.scales])?;
    let m = tape.mul(rq, s3)?;

    // Camera-frame factor Mc = W·M with W = rotᵀ, as one 9 × 9 map on the
    // flattened rows: Mc[i][j] = Σ_k rot[k][i]·M[k][j].
    let lift = Tensor::from_fn([9, 9], |idx| {
        let (src, dst) = (idx / 9, idx % 9);
        let (kk, j) = (src / 3, src % 3);
        let (i, j2) = (dst / 3, dst % 3);
        if j == j2 {
            T::of(rot[(kk, i)])
        } else {
            T::zero()
        }
    });
    let lift = tape.constant(lift);
    let mc = tape.matmul(m, lift)?;
    let (mc0, mc1, mc2) = (tape.slice_cols(mc, 0, 3)?, tape.slice_cols(mc, 3, 3)?, tape.slice_cols(mc, 6, 3)?);

    // Rows of J·Mc with J = [[fx/z, 0, -fx·x/z²], [0, fy/z, -fy·y/z²]].
    let j00 = tape.scale(iz, T::of(k.fx));
    let j02 = tape.mul(xz, iz)?;
    let j02 = tape.scale(j02, T::of(-k.fx));
    let j11 = tape.scale(iz, T::of(k.fy));
    let j12 = tape.mul(yz, iz)?;
    let j12 = tape.scale(j12, T::of(-k.fy));
    let a0 = tape.mul(mc0, j00)?;
    let a1 = tape.mul(mc2, j02)?;
    let t0 = tape.add(a0, a1)?;
    let b0 = tape.mul(mc1, j11)?;
    let b1 = tape.mul(mc2, j12)?;
    let t1 = tape.add(b0, b1)?;

    let mut row_dot = |a: Var, b: Var, add: f64| -> Result<Var> {
        let p = tape.mul(a, b)?;
        let s = tape.mean_last(p)?;
        let s = tape.scale(s, T::of(3.0));
        Ok(tape.add_scalar(s, T::of(add)))
    };
    let sxx = row_dot(t0, t0, DILATION)?;
    let sxy = row_dot(t0, t1, 0.0)?;
    let syy = row_dot(t1, t1, DILATION)?;
    let cov = tape.concat_cols(&[sxx, sxy, syy])?;

    Ok(ProjectedVars {
        means,
        cov,
        opacity: g.opacity,
        colors: g.colors,
        depth,
        visible,
    })
}

/// `min(x, ALPHA_MAX)` smoothed: `x - softplus(k(x - ALPHA_MAX))/k`.
fn smooth_clamp(x: f64) -> (f64, f64) {
    let k = SMOOTH_CLAMP_SHARPNESS;
    let z = k * (x - ALPHA_MAX);
    let softplus = if z > 0.0 {
        z + libm::log1p(libm::exp(-z))
    } else {
        libm::log1p(libm::exp(z))
    };
    let sig = if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        libm::exp(z) / (1.0 + libm::exp(z))
    };
    (x - softplus / k, 1.0 - sig)
}

struct NaiveRaster {
    order: Vec<usize>,
    width: usize,
    height: usize,
    background: [f64; 3],
}

/// Per-splat quantities at one pixel.
struct Hit {
    splat: usize,
    alpha: f64,
    transmittance: f64,
    dalpha_dx: f64,
    gauss: f64,
    delta: [f64; 2],
    conic: [f64; 3],
}

struct Inputs<'a, T> {
    means: &'a [T],
    cov: &'a [T],
    opacity: &'a [T],
    colors: &'a [T],
}

impl NaiveRaster {
    fn conic<T: Real>(cov: &[T], i: usize) -> Option<[f64; 3]> {
        let (a, b, c) = (cov[3 * i].f64(), cov[3 * i + 1].f64(), cov[3 * i + 2].f64());
        let det = a * c - b * b;
        if !(a > 0.0 && c > 0.0 && det > 0.0) {
            return None;
        }
        Some([c / det, -b / det, a / det])
    }

    /// Composites one pixel, recording each contribution.
    fn pixel<T: Real>(&self, x: &Inputs<T>, u: usize, v: usize, hits: &mut Vec<Hit>) -> ([f64; 3], f64) {
        hits.clear();
        let (px, py) = (u as f64 + 0.5, v as f64 + 0.5);
        let mut t = 1.0;
        let mut c = [0.0; 3];
        for &i in &self.order {
            let Some(conic) = Self::conic(x.cov, i) else { continue };
            let d = [px - x.means[2 * i].f64(), py - x.means[2 * i + 1].f64()];
            let q = conic[0] * d[0] * d[0] + 2.0 * conic[1] * d[0] * d[1] + conic[2] * d[1] * d[1];
            let gauss = libm::exp(-0.5 * q);
            let (alpha, dalpha_dx) = smooth_clamp(x.opacity[i].f64() * gauss);
            if alpha < ALPHA_MIN {
                continue;
            }
            for ch in 0..3 {
                c[ch] += x.colors[3 * i + ch].f64() * alpha * t;
            }
            hits.push(Hit {
                splat: i,
                alpha,
                transmittance: t,
                dalpha_dx,
                gauss,
                delta: d,
                conic,
            });
            t *= 1.0 - alpha;
        }
        for ch in 0..3 {
            c[ch] += t * self.background[ch];
        }
        (c, t)
    }

    fn forward<T: Real>(&self, x: &Inputs<T>) -> Vec<T> {
        let mut out = Vec::with_capacity(self.width * self.height * 3);
        let mut hits = Vec::new();
        for v in 0..self.height {
            for u in 0..self.width {
                let (c, _) = self.pixel(x, u, v, &mut hits);
                out.extend(c.iter().map(|&c| T::of(c)));
            }
        }
        out
    }
}

impl<T: Real> CustomOp<T> for NaiveRaster {
    fn name(&self) -> &'static str {
        "rasterize_naive_diff"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &[T]) -> Vec<Option<Vec<T>>> {
        let x = Inputs {
            means: inputs[0].data(),
            cov: inputs[1].data(),
            opacity: inputs[2].data(),
            colors: inputs[3].data(),
        };
        let n = x.opacity.len();
        let (mut gm, mut gc, mut go, mut gcol) = (
            alloc::vec![0.0f64; 2 * n],
            alloc::vec![0.0f64; 3 * n],
            alloc::vec![0.0f64; n],
            alloc::vec![0.0f64; 3 * n],
        );
        let mut hits = Vec::new();
        for v in 0..self.height {
            for u in 0..self.width {
                let p = (v * self.width + u) * 3;
                let g = [grad[p].f64(), grad[p + 1].f64(), grad[p + 2].f64()];
                if g == [0.0; 3] {
                    continue;
                }
                let (_, t_end) = self.pixel(&x, u, v, &mut hits);
                // Gradient-weighted color still to come behind each splat.
                let mut behind = t_end * (0..3).map(|ch| self.background[ch] * g[ch]).sum::<f64>();
                for h in hits.iter().rev() {
                    let i = h.splat;
                    let cg: f64 = (0..3).map(|ch| x.colors[3 * i + ch].f64() * g[ch]).sum();
                    for ch in 0..3 {
                        gcol[3 * i + ch] += g[ch] * h.alpha * h.transmittance;
                    }
                    let d_alpha = h.transmittance * cg - behind / (1.0 - h.alpha);
                    behind += cg * h.alpha * h.transmittance;
                    let d_x = d_alpha * h.dalpha_dx;
                    let o = x.opacity[i].f64();
                    go[i] += d_x * h.gauss;
                    let d_q = d_x * o * (-0.5 * h.gauss);
                    let [a, b, c] = h.conic;
                    let w = [a * h.delta[0] + b * h.delta[1], b * h.delta[0] + c * h.delta[1]];
                    gm[2 * i] += -2.0 * d_q * w[0];
                    gm[2 * i + 1] += -2.0 * d_q * w[1];
                    gc[3 * i] += -d_q * w[0] * w[0];
                    gc[3 * i + 1] += -2.0 * d_q * w[0] * w[1];
                    gc[3 * i + 2] += -d_q * w[1] * w[1];
                }
            }
        }
        let cast = |v: Vec<f64>| Some(v.into_iter().map(T::of).collect());
        alloc::vec![cast(gm), cast(gc), cast(go), cast(gcol)]
    }
}

/// All-pairs differentiable renderer. Every visible splat is composited at
/// every pixel in depth order, with the alpha clamp replaced by a smooth
/// minimum and no early termination. Returns an `H × W × 3` variable.
pub fn rasterize_naive_diff<T: Real>(tape: &mut Tape<T>, proj: &ProjectedVars, target: &TargetConfig) -> Result<Var> {
    let n = proj.depth.len();
    let shapes = [(proj.means, 2), (proj.cov, 3), (proj.opacity, 1), (proj.colors, 3)];
    for (var, cols) in shapes {
        if tape.shape(var) != [n, cols] {
            return Err(Error::Shape {
                op: "rasterize_naive_diff",
                lhs: tape.shape(var).to_vec(),
                rhs: alloc::vec![n, cols],
            });
        }
    }
    let mut order: Vec<usize> = (0..n).filter(|&i| proj.visible[i]).collect();
    order.sort_by(|&a, &b| proj.depth[a].total_cmp(&proj.depth[b]).then(a.cmp(&b)));
    let op = NaiveRaster {
        order,
        width: target.width,
        height: target.height,
        background: target.background,
    };
    let out = {
        let x = Inputs {
            means: tape.value(proj.means).data(),
            cov: tape.value(proj.cov).data(),
            opacity: tape.value(proj.opacity).data(),
            colors: tape.value(proj.colors).data(),
        };
        op.forward(&x)
    };
    let out = Tensor::new([target.height, target.width, 3], out)?;
    Ok(tape.custom(&[proj.means, proj.cov, proj.opacity, proj.colors], out, Box::new(op)))
}
