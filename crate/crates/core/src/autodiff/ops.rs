use alloc::vec;
use alloc::vec::Vec;

use super::{attention, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{self, broadcast_index, broadcast_shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

/// Elementwise unary functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryKind {
    Neg,
    Exp,
    Ln,
    Sigmoid,
    Tanh,
    Sqrt,
    Square,
    Recip,
    /// Exact `x·Φ(x)` with the erf-based normal CDF.
    Gelu,
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub(crate) fn gelu<T: Real>(x: T) -> T {
    let half = T::of(0.5);
    x * half * (T::one() + (x * T::FRAC_1_SQRT_2()).erf())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let half = T::of(0.5);
    let cdf = half * (T::one() + (x * T::FRAC_1_SQRT_2()).erf());
    let pdf = T::of(FRAC_1_SQRT_2PI) * (-half * x * x).exp();
    cdf + x * pdf
}

impl UnaryKind {
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            UnaryKind::Neg => -x,
            UnaryKind::Exp => x.exp(),
            UnaryKind::Ln => x.ln(),
            UnaryKind::Sigmoid => x.sigmoid(),
            UnaryKind::Tanh => x.tanh(),
            UnaryKind::Sqrt => x.sqrt(),
            UnaryKind::Square => x * x,
            UnaryKind::Recip => x.recip(),
            UnaryKind::Gelu => gelu(x),
        }
    }

    /// Derivative given input `x` and output `y`.
    fn derivative<T: Real>(self, x: T, y: T) -> T {
        match self {
            UnaryKind::Neg => -T::one(),
            UnaryKind::Exp => y,
            UnaryKind::Ln => x.recip(),
            UnaryKind::Sigmoid => y * (T::one() - y),
            UnaryKind::Tanh => T::one() - y * y,
            UnaryKind::Sqrt => T::of(0.5) / y,
            UnaryKind::Square => T::of(2.0) * x,
            UnaryKind::Recip => -y * y,
            UnaryKind::Gelu => gelu_grad(x),
        }
    }
}

fn check_rank2(shape: &[usize], op: &'static str) -> Result<(usize, usize)> {
    match *shape {
        [r, c] => Ok((r, c)),
        _ => Err(Error::Dimension {
            op,
            detail: alloc::format!("expected a matrix, got shape {:?}", shape),
        }),
    }
}

impl<T: Real> Tape<T> {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var, name: &'static str) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let out = if av.shape() == bv.shape() {
            let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| apply_binary(kind, x, y)).collect();
            Tensor::new(av.shape().to_vec(), data)?
        } else {
            let shape = broadcast_shape(av.shape(), bv.shape(), name)?;
            let ia = broadcast_index(av.shape(), &shape);
            let ib = broadcast_index(bv.shape(), &shape);
            let data = ia
                .iter()
                .zip(&ib)
                .map(|(&i, &j)| apply_binary(kind, av.data()[i], bv.data()[j]))
                .collect();
            Tensor::new(shape, data)?
        };
        Ok(self.push(out, Op::Binary(kind, a, b), &[a, b]))
    }

    /// Broadcasting addition.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b, "sub")
    }

    /// Broadcasting elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b, "mul")
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b, "div")
    }

    pub fn unary(&mut self, kind: UnaryKind, x: Var) -> Var {
        let out = self.value(x).map(|v| kind.apply(v));
        self.push(out, Op::Unary(kind, x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Exp, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Tanh, x)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Square, x)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Gelu, x)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push(out, Op::AddScalar(x), &[x])
    }

    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        let out = self.value(x).map(|v| v.max(lo).min(hi));
        self.push(out, Op::Clamp(x, lo, hi), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let (r, c) = check_rank2(v.shape(), "transpose")?;
        let d = v.data();
        let out = Tensor::from_fn([c, r], |i| d[(i % r) * c + i / r]);
        Ok(self.push(out, Op::Transpose(x), &[x]))
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x);
        let (r, c) = check_rank2(v.shape(), "slice_cols")?;
        if start + len > c {
            return Err(Error::Dimension {
                op: "slice_cols",
                detail: alloc::format!("columns {}..{} out of {}", start, start + len, c),
            });
        }
        let d = v.data();
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&d[i * c + start..i * c + start + len]);
        }
        let out = Tensor::new([r, len], out)?;
        Ok(self.push(out, Op::SliceCols { x, start }, &[x]))
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let rows = check_rank2(self.shape(xs[0]), "concat_cols")?.0;
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let (r, c) = check_rank2(self.shape(x), "concat_cols")?;
            if r != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: self.shape(xs[0]).to_vec(),
                    rhs: self.shape(x).to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&x, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(x).data()[i * w..(i + 1) * w]);
            }
        }
        let out = Tensor::new([rows, total], out)?;
        Ok(self.push(out, Op::ConcatCols(xs.to_vec()), xs))
    }

    /// Rows `start..start+len` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x);
        let (r, c) = check_rank2(v.shape(), "slice_rows")?;
        if start + len > r {
            return Err(Error::Dimension {
                op: "slice_rows",
                detail: alloc::format!("rows {}..{} out of {}", start, start + len, r),
            });
        }
        let out = Tensor::new([len, c], v.data()[start * c..(start + len) * c].to_vec())?;
        Ok(self.push(out, Op::SliceRows { x, start }, &[x]))
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let cols = check_rank2(self.shape(xs[0]), "concat_rows")?.1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &x in xs {
            let (r, c) = check_rank2(self.shape(x), "concat_rows")?;
            if c != cols {
                return Err(Error::Shape {
                    op: "concat_rows",
                    lhs: self.shape(xs[0]).to_vec(),
                    rhs: self.shape(x).to_vec(),
                });
            }
            rows += r;
            out.extend_from_slice(self.value(x).data());
        }
        let out = Tensor::new([rows, cols], out)?;
        Ok(self.push(out, Op::ConcatRows(xs.to_vec()), xs))
    }

    /// `out.flat[i] = x.flat[idx[i]]`, shaped as `shape`.
    pub fn gather(&mut self, x: Var, idx: &[usize], shape: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if idx.iter().any(|&i| i >= v.numel()) {
            return Err(Error::Dimension {
                op: "gather",
                detail: alloc::format!("index out of {} elements", v.numel()),
            });
        }
        let d = v.data();
        let out = Tensor::new(shape.to_vec(), idx.iter().map(|&i| d[i]).collect())?;
        Ok(self.push(out, Op::Gather { x, idx: idx.to_vec() }, &[x]))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let v = self.value(x);
        let (r, c) = check_rank2(v.shape(), "gather_rows")?;
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(Error::Dimension {
                    op: "gather_rows",
                    detail: alloc::format!("row {} out of {}", i, r),
                });
            }
            out.extend_from_slice(v.row(i));
        }
        let out = Tensor::new([idx.len(), c], out)?;
        Ok(self.push(out, Op::GatherRows { x, idx: idx.to_vec() }, &[x]))
    }

    /// Copy of `base` with rows `idx` replaced by the rows of `update`.
    pub fn scatter_rows(&mut self, base: Var, idx: &[usize], update: Var) -> Result<Var> {
        let (r, c) = check_rank2(self.shape(base), "scatter_rows")?;
        let (ur, uc) = check_rank2(self.shape(update), "scatter_rows")?;
        if uc != c || ur != idx.len() || idx.iter().any(|&i| i >= r) {
            return Err(Error::Shape {
                op: "scatter_rows",
                lhs: self.shape(base).to_vec(),
                rhs: self.shape(update).to_vec(),
            });
        }
        let mut out = self.value(base).clone();
        let upd = self.value(update).data();
        for (k, &i) in idx.iter().enumerate() {
            out.data_mut()[i * c..(i + 1) * c].copy_from_slice(&upd[k * c..(k + 1) * c]);
        }
        Ok(self.push(
            out,
            Op::ScatterRows {
                base,
                idx: idx.to_vec(),
                update,
            },
            &[base, update],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s: T = v.data().iter().copied().sum();
        let m = s / T::of(v.numel() as f64);
        self.push(Tensor::scalar(m), Op::Mean(x), &[x])
    }

    /// Mean over the last axis, keeping it as size 1.
    pub fn mean_last(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let d = v.last_dim();
        if d == 0 {
            return Err(Error::Dimension {
                op: "mean_last",
                detail: "empty last axis".into(),
            });
        }
        let inv = T::one() / T::of(d as f64);
        let data: Vec<T> = v.data().chunks(d).map(|r| r.iter().copied().sum::<T>() * inv).collect();
        let mut shape = v.shape().to_vec();
        *shape.last_mut().unwrap() = 1;
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::MeanLast(x), &[x]))
    }

    /// LayerNorm over the last axis with a learned scale and no bias.
    pub fn layer_norm(&mut self, x: Var, scale: Var, eps: T) -> Result<Var> {
        let v = self.value(x);
        let d = v.last_dim();
        if d == 0 || v.rank() == 0 {
            return Err(Error::Dimension {
                op: "layer_norm",
                detail: "normalized axis has size 0".into(),
            });
        }
        let s = self.value(scale);
        if s.numel() != d {
            return Err(Error::Shape {
                op: "layer_norm",
                lhs: v.shape().to_vec(),
                rhs: s.shape().to_vec(),
            });
        }
        let inv_d = T::one() / T::of(d as f64);
        let mut out = Vec::with_capacity(v.numel());
        let mut rstds = Vec::with_capacity(v.rows());
        for row in v.data().chunks(d) {
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() * inv_d;
            let rstd = (var + eps).sqrt().recip();
            rstds.push(rstd);
            out.extend(row.iter().zip(s.data()).map(|(&a, &g)| (a - mean) * rstd * g));
        }
        let out = Tensor::new(v.shape().to_vec(), out)?;
        Ok(self.push(out, Op::LayerNorm { x, scale, rstd: rstds }, &[x, scale]))
    }

    /// RMSNorm over the last axis with a learned scale.
    pub fn rms_norm(&mut self, x: Var, scale: Var, eps: T) -> Result<Var> {
        let v = self.value(x);
        let d = v.last_dim();
        let s = self.value(scale);
        if d == 0 || s.numel() != d {
            return Err(Error::Shape {
                op: "rms_norm",
                lhs: v.shape().to_vec(),
                rhs: s.shape().to_vec(),
            });
        }
        let inv_d = T::one() / T::of(d as f64);
        let mut out = Vec::with_capacity(v.numel());
        let mut rstds = Vec::with_capacity(v.rows());
        for row in v.data().chunks(d) {
            let ms = row.iter().map(|&a| a * a).sum::<T>() * inv_d;
            let rstd = (ms + eps).sqrt().recip();
            rstds.push(rstd);
            out.extend(row.iter().zip(s.data()).map(|(&a, &g)| a * rstd * g));
        }
        let out = Tensor::new(v.shape().to_vec(), out)?;
        Ok(self.push(out, Op::RmsNorm { x, scale, rstd: rstds }, &[x, scale]))
    }

    /// Softmax over the last axis with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let d = v.last_dim();
        let mut out = Vec::with_capacity(v.numel());
        for row in v.data().chunks(d.max(1)) {
            softmax_row(row, &mut out);
        }
        let out = Tensor::new(v.shape().to_vec(), out).expect("same shape");
        self.push(out, Op::Softmax(x), &[x])
    }

    /// Multi-head scaled dot-product attention. `q` is `[Lq, D]`, `k` and `v`
    /// are `[Lk, D]`; heads split `D` into contiguous slices.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, scale: T) -> Result<Var> {
        let (qs, ks, vs) = (self.shape(q), self.shape(k), self.shape(v));
        let (lq, dq) = check_rank2(qs, "attention")?;
        let (lk, dk) = check_rank2(ks, "attention")?;
        let (lv, dv) = check_rank2(vs, "attention")?;
        if dq != dk || dk != dv || lk != lv || heads == 0 || dq % heads != 0 || lk == 0 {
            return Err(Error::Shape {
                op: "attention",
                lhs: qs.to_vec(),
                rhs: ks.to_vec(),
            });
        }
        let out = attention::forward(self.value(q).data(), self.value(k).data(), self.value(v).data(), lq, lk, dq, heads, scale);
        let out = Tensor::new([lq, dq], out)?;
        Ok(self.push(out, Op::Attention { q, k, v, heads, scale }, &[q, k, v]))
    }

    /// Divides each row by its Euclidean norm. Rows with norm below `eps`
    /// are replaced by `fallback` and pass no gradient.
    pub fn normalize_rows(&mut self, x: Var, eps: T, fallback: &[T]) -> Result<Var> {
        let v = self.value(x);
        let d = v.last_dim();
        if fallback.len() != d {
            return Err(Error::Shape {
                op: "normalize_rows",
                lhs: v.shape().to_vec(),
                rhs: vec![fallback.len()],
            });
        }
        let mut out = Vec::with_capacity(v.numel());
        let mut norms = Vec::with_capacity(v.rows());
        for row in v.data().chunks(d) {
            let n = row.iter().map(|&a| a * a).sum::<T>().sqrt();
            norms.push(n);
            if n < eps {
                out.extend_from_slice(fallback);
            } else {
                out.extend(row.iter().map(|&a| a / n));
            }
        }
        let out = Tensor::new(v.shape().to_vec(), out)?;
        Ok(self.push(out, Op::NormalizeRows { x, norms, eps }, &[x]))
    }

    pub(super) fn input_grads(&self, i: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                let mut ga = vec![T::zero(); m * k];
                let mut gb = vec![T::zero(); k * n];
                if self.requires_grad(*a) {
                    tensor::matmul_bt_into(g, bv.data(), &mut ga, m, n, k);
                }
                if self.requires_grad(*b) {
                    tensor::matmul_at_into(av.data(), g, &mut gb, m, k, n);
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Binary(kind, a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut ga = vec![T::zero(); av.numel()];
                let mut gb = vec![T::zero(); bv.numel()];
                let same = av.shape() == bv.shape();
                let (ia, ib) = if same {
                    (Vec::new(), Vec::new())
                } else {
                    (broadcast_index(av.shape(), out.shape()), broadcast_index(bv.shape(), out.shape()))
                };
                for (o, &go) in g.iter().enumerate() {
                    let (pa, pb) = if same { (o, o) } else { (ia[o], ib[o]) };
                    let (x, y) = (av.data()[pa], bv.data()[pb]);
                    match kind {
                        BinaryKind::Add => {
                            ga[pa] += go;
                            gb[pb] += go;
                        }
                        BinaryKind::Sub => {
                            ga[pa] += go;
                            gb[pb] -= go;
                        }
                        BinaryKind::Mul => {
                            ga[pa] += go * y;
                            gb[pb] += go * x;
                        }
                        BinaryKind::Div => {
                            ga[pa] += go / y;
                            gb[pb] -= go * x / (y * y);
                        }
                    }
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Unary(kind, x) => {
                let xv = self.value(*x).data();
                let gx = g
                    .iter()
                    .zip(xv.iter().zip(out.data()))
                    .map(|(&go, (&a, &y))| go * kind.derivative(a, y))
                    .collect();
                vec![(*x, gx)]
            }
            Op::Scale(x, c) => vec![(*x, g.iter().map(|&v| v * *c).collect())],
            Op::AddScalar(x) | Op::Reshape(x) => vec![(*x, g.to_vec())],
            Op::Clamp(x, lo, hi) => {
                let xv = self.value(*x).data();
                let gx = g
                    .iter()
                    .zip(xv)
                    .map(|(&go, &a)| if a >= *lo && a <= *hi { go } else { T::zero() })
                    .collect();
                vec![(*x, gx)]
            }
            Op::Transpose(x) => {
                let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                let gx = (0..r * c).map(|idx| g[(idx % c) * r + idx / c]).collect();
                vec![(*x, gx)]
            }
            Op::SliceCols { x, start } => {
                let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                let len = out.shape()[1];
                let mut gx = vec![T::zero(); r * c];
                for i in 0..r {
                    gx[i * c + start..i * c + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                vec![(*x, gx)]
            }
            Op::ConcatCols(xs) => {
                let (rows, total) = (out.shape()[0], out.shape()[1]);
                let mut off = 0;
                let mut res = Vec::with_capacity(xs.len());
                for &x in xs {
                    let w = self.shape(x)[1];
                    let mut gx = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        gx.extend_from_slice(&g[r * total + off..r * total + off + w]);
                    }
                    off += w;
                    res.push((x, gx));
                }
                res
            }
            Op::SliceRows { x, start } => {
                let c = out.shape()[1];
                let mut gx = vec![T::zero(); self.value(*x).numel()];
                gx[start * c..start * c + g.len()].copy_from_slice(g);
                vec![(*x, gx)]
            }
            Op::ConcatRows(xs) => {
                let mut off = 0;
                xs.iter()
                    .map(|&x| {
                        let n = self.value(x).numel();
                        let gx = g[off..off + n].to_vec();
                        off += n;
                        (x, gx)
                    })
                    .collect()
            }
            Op::Gather { x, idx } => {
                let mut gx = vec![T::zero(); self.value(*x).numel()];
                for (&i, &go) in idx.iter().zip(g) {
                    gx[i] += go;
                }
                vec![(*x, gx)]
            }
            Op::GatherRows { x, idx } => {
                let c = out.shape()[1];
                let mut gx = vec![T::zero(); self.value(*x).numel()];
                for (k, &r) in idx.iter().enumerate() {
                    for j in 0..c {
                        gx[r * c + j] += g[k * c + j];
                    }
                }
                vec![(*x, gx)]
            }
            Op::ScatterRows { base, idx, update } => {
                let c = out.shape()[1];
                let mut gb = g.to_vec();
                let mut gu = Vec::with_capacity(idx.len() * c);
                for &r in idx {
                    gu.extend_from_slice(&g[r * c..(r + 1) * c]);
                    gb[r * c..(r + 1) * c].iter_mut().for_each(|v| *v = T::zero());
                }
                vec![(*base, gb), (*update, gu)]
            }
            Op::Sum(x) => vec![(*x, vec![g[0]; self.value(*x).numel()])],
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                vec![(*x, vec![g[0] / T::of(n as f64); n])]
            }
            Op::MeanLast(x) => {
                let d = self.value(*x).last_dim();
                let inv = T::one() / T::of(d as f64);
                let gx = g.iter().flat_map(|&go| core::iter::repeat_n(go * inv, d)).collect();
                vec![(*x, gx)]
            }
            Op::LayerNorm { x, scale, rstd } => {
                let xv = self.value(*x);
                let sv = self.value(*scale).data();
                let d = xv.last_dim();
                let inv_d = T::one() / T::of(d as f64);
                let mut gx = Vec::with_capacity(xv.numel());
                let mut gs = vec![T::zero(); d];
                let mut xhat = vec![T::zero(); d];
                let mut dxhat = vec![T::zero(); d];
                for ((row, go), &r) in xv.data().chunks(d).zip(g.chunks(d)).zip(rstd) {
                    let mean = row.iter().copied().sum::<T>() * inv_d;
                    for j in 0..d {
                        xhat[j] = (row[j] - mean) * r;
                        dxhat[j] = go[j] * sv[j];
                        gs[j] += go[j] * xhat[j];
                    }
                    let m1 = dxhat.iter().copied().sum::<T>() * inv_d;
                    let m2 = dxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum::<T>() * inv_d;
                    gx.extend((0..d).map(|j| r * (dxhat[j] - m1 - xhat[j] * m2)));
                }
                vec![(*x, gx), (*scale, gs)]
            }
            Op::RmsNorm { x, scale, rstd } => {
                let xv = self.value(*x);
                let sv = self.value(*scale).data();
                let d = xv.last_dim();
                let inv_d = T::one() / T::of(d as f64);
                let mut gx = Vec::with_capacity(xv.numel());
                let mut gs = vec![T::zero(); d];
                for ((row, go), &r) in xv.data().chunks(d).zip(g.chunks(d)).zip(rstd) {
                    let mut m = T::zero();
                    for j in 0..d {
                        let xn = row[j] * r;
                        gs[j] += go[j] * xn;
                        m += go[j] * sv[j] * xn;
                    }
                    m *= inv_d;
                    gx.extend((0..d).map(|j| r * (go[j] * sv[j] - row[j] * r * m)));
                }
                vec![(*x, gx), (*scale, gs)]
            }
            Op::Softmax(x) => {
                let d = out.last_dim().max(1);
                let mut gx = Vec::with_capacity(out.numel());
                for (y, go) in out.data().chunks(d).zip(g.chunks(d)) {
                    let dot = y.iter().zip(go).map(|(&a, &b)| a * b).sum::<T>();
                    gx.extend(y.iter().zip(go).map(|(&a, &b)| a * (b - dot)));
                }
                vec![(*x, gx)]
            }
            Op::Attention { q, k, v, heads, scale } => {
                let (lq, d) = (self.shape(*q)[0], self.shape(*q)[1]);
                let lk = self.shape(*k)[0];
                let (gq, gk, gv) = attention::backward(
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                    g,
                    lq,
                    lk,
                    d,
                    *heads,
                    *scale,
                );
                vec![(*q, gq), (*k, gk), (*v, gv)]
            }
            Op::NormalizeRows { x, norms, eps } => {
                let d = out.last_dim();
                let mut gx = Vec::with_capacity(out.numel());
                for ((y, go), &n) in out.data().chunks(d).zip(g.chunks(d)).zip(norms) {
                    if n < *eps {
                        gx.extend(core::iter::repeat_n(T::zero(), d));
                        continue;
                    }
                    let dot = y.iter().zip(go).map(|(&a, &b)| a * b).sum::<T>();
                    gx.extend(y.iter().zip(go).map(|(&a, &b)| (b - a * dot) / n));
                }
                vec![(*x, gx)]
            }
            Op::Custom { inputs, op } => {
                let ins: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
                op.backward(&ins, out, g)
                    .into_iter()
                    .zip(inputs)
                    .filter_map(|(gi, &v)| gi.map(|gi| (v, gi)))
                    .collect()
            }
        }
    }
}

fn apply_binary<T: Real>(kind: BinaryKind, x: T, y: T) -> T {
    match kind {
        BinaryKind::Add => x + y,
        BinaryKind::Sub => x - y,
        BinaryKind::Mul => x * y,
        BinaryKind::Div => x / y,
    }
}

pub(crate) fn softmax_row<T: Real>(row: &[T], out: &mut Vec<T>) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let start = out.len();
    let mut total = T::zero();
    for &a in row {
        let e = (a - max).exp();
        total += e;
        out.push(e);
    }
    for e in &mut out[start..] {
        *e /= total;
    }
}
