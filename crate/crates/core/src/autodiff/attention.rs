//! Fused multi-head attention. Scores are recomputed row by row in the
//! backward pass, so only `q`, `k`, `v` are kept alive on the tape.

use alloc::vec;
use alloc::vec::Vec;

use crate::scalar::Real;

fn scores_row<T: Real>(q: &[T], k: &[T], i: usize, lk: usize, d: usize, off: usize, hd: usize, scale: T, p: &mut [T]) {
    let qi = &q[i * d + off..i * d + off + hd];
    let mut max = T::neg_infinity();
    for (j, pj) in p.iter_mut().enumerate().take(lk) {
        let kj = &k[j * d + off..j * d + off + hd];
        let s = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<T>() * scale;
        *pj = s;
        max = max.max(s);
    }
    let mut total = T::zero();
    for pj in p.iter_mut() {
        *pj = (*pj - max).exp();
        total += *pj;
    }
    for pj in p.iter_mut() {
        *pj /= total;
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn forward<T: Real>(q: &[T], k: &[T], v: &[T], lq: usize, lk: usize, d: usize, heads: usize, scale: T) -> Vec<T> {
    let hd = d / heads;
    let mut out = vec![T::zero(); lq * d];
    let mut p = vec![T::zero(); lk];
    for h in 0..heads {
        let off = h * hd;
        for i in 0..lq {
            scores_row(q, k, i, lk, d, off, hd, scale, &mut p);
            let oi = &mut out[i * d + off..i * d + off + hd];
            for (j, &pj) in p.iter().enumerate() {
                let vj = &v[j * d + off..j * d + off + hd];
                for (o, &vv) in oi.iter_mut().zip(vj) {
                    *o += pj * vv;
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(super) fn backward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    g: &[T],
    lq: usize,
    lk: usize,
    d: usize,
    heads: usize,
    scale: T,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let hd = d / heads;
    let mut gq = vec![T::zero(); lq * d];
    let mut gk = vec![T::zero(); lk * d];
    let mut gv = vec![T::zero(); lk * d];
    let mut p = vec![T::zero(); lk];
    let mut dp = vec![T::zero(); lk];
    for h in 0..heads {
        let off = h * hd;
        for i in 0..lq {
            scores_row(q, k, i, lk, d, off, hd, scale, &mut p);
            let gi = &g[i * d + off..i * d + off + hd];
            let mut dot = T::zero();
            for j in 0..lk {
                let vj = &v[j * d + off..j * d + off + hd];
                dp[j] = gi.iter().zip(vj).map(|(&a, &b)| a * b).sum::<T>();
                dot += dp[j] * p[j];
                let gvj = &mut gv[j * d + off..j * d + off + hd];
                for (a, &b) in gvj.iter_mut().zip(gi) {
                    *a += p[j] * b;
                }
            }
            let qi_start = i * d + off;
            for j in 0..lk {
                let ds = p[j] * (dp[j] - dot) * scale;
                if ds == T::zero() {
                    continue;
                }
                for t in 0..hd {
                    gq[qi_start + t] += ds * k[j * d + off + t];
                    gk[j * d + off + t] += ds * q[qi_start + t];
                }
            }
        }
    }
    (gq, gk, gv)
}
