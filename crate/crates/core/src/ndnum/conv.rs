//! Raw NCHW convolution and pooling loops over flat slices.

use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

/// Range of output indices `o` with `o*stride + k - pad` inside `[0, len)`.
fn valid_range(len: usize, out: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let (k, s, p, len) = (k as i64, stride as i64, pad as i64, len as i64);
    let lo = (p - k).max(0);
    let lo = (lo + s - 1) / s;
    let hi = (len - 1 + p - k).div_euclid(s) + 1;
    let hi = hi.clamp(0, out as i64);
    (lo.min(hi) as usize, hi as usize)
}

pub(crate) fn conv2d_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], b: Option<&[T]>, out: &mut [T]) {
    let (ih_, iw_) = (g.h, g.w);
    let plane = g.oh * g.ow;
    for n in 0..g.n {
        for o in 0..g.c_out {
            let ob = &mut out[(n * g.c_out + o) * plane..][..plane];
            let bias = b.map_or(T::zero(), |b| b[o]);
            ob.iter_mut().for_each(|v| *v = bias);
            for c in 0..g.c_in {
                let xb = &x[(n * g.c_in + c) * ih_ * iw_..][..ih_ * iw_];
                for ki in 0..g.kh {
                    let (r0, r1) = valid_range(ih_, g.oh, ki, g.stride, g.pad);
                    for kj in 0..g.kw {
                        let wv = w[((o * g.c_in + c) * g.kh + ki) * g.kw + kj];
                        let (c0, c1) = valid_range(iw_, g.ow, kj, g.stride, g.pad);
                        for orow in r0..r1 {
                            let irow = orow * g.stride + ki - g.pad;
                            let xr = &xb[irow * iw_..];
                            let or = &mut ob[orow * g.ow..];
                            for ocol in c0..c1 {
                                or[ocol] += wv * xr[ocol * g.stride + kj - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates input, weight and bias gradients for `conv2d_forward`.
pub(crate) fn conv2d_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let (ih_, iw_) = (g.h, g.w);
    let plane = g.oh * g.ow;
    if let Some(db) = db {
        for n in 0..g.n {
            for o in 0..g.c_out {
                db[o] += dy[(n * g.c_out + o) * plane..][..plane].iter().copied().sum::<T>();
            }
        }
    }
    for n in 0..g.n {
        for o in 0..g.c_out {
            let gb = &dy[(n * g.c_out + o) * plane..][..plane];
            for c in 0..g.c_in {
                let xoff = (n * g.c_in + c) * ih_ * iw_;
                for ki in 0..g.kh {
                    let (r0, r1) = valid_range(ih_, g.oh, ki, g.stride, g.pad);
                    for kj in 0..g.kw {
                        let widx = ((o * g.c_in + c) * g.kh + ki) * g.kw + kj;
                        let (c0, c1) = valid_range(iw_, g.ow, kj, g.stride, g.pad);
                        let wv = w[widx];
                        let mut acc = T::zero();
                        for orow in r0..r1 {
                            let irow = orow * g.stride + ki - g.pad;
                            let base = xoff + irow * iw_ + kj;
                            let gr = &gb[orow * g.ow..];
                            if let Some(dx) = dx.as_deref_mut() {
                                for ocol in c0..c1 {
                                    dx[base + ocol * g.stride - g.pad] += wv * gr[ocol];
                                }
                            }
                            if dw.is_some() {
                                for ocol in c0..c1 {
                                    acc += gr[ocol] * x[base + ocol * g.stride - g.pad];
                                }
                            }
                        }
                        if let Some(dw) = dw.as_deref_mut() {
                            dw[widx] += acc;
                        }
                    }
                }
            }
        }
    }
}

/// Transposed convolution; `w` is `[c_in, c_out, kh, kw]`, and `g.h, g.w`
/// are the input dims, `g.oh, g.ow` the (larger) output dims.
pub(crate) fn conv_t2d_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], b: Option<&[T]>, out: &mut [T]) {
    let plane = g.oh * g.ow;
    for n in 0..g.n {
        for o in 0..g.c_out {
            let bias = b.map_or(T::zero(), |b| b[o]);
            out[(n * g.c_out + o) * plane..][..plane].iter_mut().for_each(|v| *v = bias);
        }
        for c in 0..g.c_in {
            let xb = &x[(n * g.c_in + c) * g.h * g.w..][..g.h * g.w];
            for o in 0..g.c_out {
                let ob = &mut out[(n * g.c_out + o) * plane..][..plane];
                for ki in 0..g.kh {
                    let (r0, r1) = transposed_range(g.oh, g.h, ki, g.stride, g.pad);
                    for kj in 0..g.kw {
                        let wv = w[((c * g.c_out + o) * g.kh + ki) * g.kw + kj];
                        let (c0, c1) = transposed_range(g.ow, g.w, kj, g.stride, g.pad);
                        for irow in r0..r1 {
                            let orow = irow * g.stride + ki - g.pad;
                            let xr = &xb[irow * g.w..];
                            let or = &mut ob[orow * g.ow..];
                            for icol in c0..c1 {
                                or[icol * g.stride + kj - g.pad] += wv * xr[icol];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Input indices `i < n_in` with `i*stride + k - pad` inside `[0, out_len)`.
fn transposed_range(out_len: usize, n_in: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    valid_range(out_len, n_in, k, stride, pad)
}

pub(crate) fn conv_t2d_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let plane = g.oh * g.ow;
    if let Some(db) = db {
        for n in 0..g.n {
            for o in 0..g.c_out {
                db[o] += dy[(n * g.c_out + o) * plane..][..plane].iter().copied().sum::<T>();
            }
        }
    }
    for n in 0..g.n {
        for c in 0..g.c_in {
            let xoff = (n * g.c_in + c) * g.h * g.w;
            for o in 0..g.c_out {
                let gb = &dy[(n * g.c_out + o) * plane..][..plane];
                for ki in 0..g.kh {
                    let (r0, r1) = transposed_range(g.oh, g.h, ki, g.stride, g.pad);
                    for kj in 0..g.kw {
                        let widx = ((c * g.c_out + o) * g.kh + ki) * g.kw + kj;
                        let wv = w[widx];
                        let (c0, c1) = transposed_range(g.ow, g.w, kj, g.stride, g.pad);
                        let mut acc = T::zero();
                        for irow in r0..r1 {
                            let orow = irow * g.stride + ki - g.pad;
                            let gr = &gb[orow * g.ow..];
                            let xr = xoff + irow * g.w;
                            for icol in c0..c1 {
                                let gv = gr[icol * g.stride + kj - g.pad];
                                if let Some(dx) = dx.as_deref_mut() {
                                    dx[xr + icol] += wv * gv;
                                }
                                acc += gv * x[xr + icol];
                            }
                        }
                        if let Some(dw) = dw.as_deref_mut() {
                            dw[widx] += acc;
                        }
                    }
                }
            }
        }
    }
}

/// Max over `size×size` windows of every `h×w` plane. Returns the flat input
/// index of each maximum (the first one on ties).
pub(crate) fn maxpool_forward<T: Real>(planes: usize, h: usize, w: usize, size: usize, x: &[T], out: &mut [T]) -> Vec<usize> {
    let (oh, ow) = (h / size, w / size);
    let mut arg = vec![0; planes * oh * ow];
    for p in 0..planes {
        for r in 0..oh {
            for c in 0..ow {
                let mut best = p * h * w + r * size * w + c * size;
                for i in 0..size {
                    for j in 0..size {
                        let idx = p * h * w + (r * size + i) * w + c * size + j;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                let o = (p * oh + r) * ow + c;
                arg[o] = best;
                out[o] = x[best];
            }
        }
    }
    arg
}

pub(crate) fn avgpool_forward<T: Real>(planes: usize, h: usize, w: usize, size: usize, x: &[T], out: &mut [T]) {
    let (oh, ow) = (h / size, w / size);
    let inv = T::one() / T::from_usize_lossy(size * size);
    for p in 0..planes {
        for r in 0..oh {
            for c in 0..ow {
                let mut s = T::zero();
                for i in 0..size {
                    for j in 0..size {
                        s += x[p * h * w + (r * size + i) * w + c * size + j];
                    }
                }
                out[(p * oh + r) * ow + c] = s * inv;
            }
        }
    }
}

pub(crate) fn avgpool_backward<T: Real>(planes: usize, h: usize, w: usize, size: usize, dy: &[T], dx: &mut [T]) {
    let (oh, ow) = (h / size, w / size);
    let inv = T::one() / T::from_usize_lossy(size * size);
    for p in 0..planes {
        for r in 0..oh {
            for c in 0..ow {
                let g = dy[(p * oh + r) * ow + c] * inv;
                for i in 0..size {
                    for j in 0..size {
                        dx[p * h * w + (r * size + i) * w + c * size + j] += g;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_matches_brute_force() {
        for len in 1..7 {
            for k in 0..4 {
                for s in 1..4 {
                    for p in 0..3 {
                        for out in 0..8 {
                            let brute: Vec<usize> = (0..out)
                                .filter(|&o| {
                                    let i = (o * s + k) as i64 - p as i64;
                                    i >= 0 && i < len as i64
                                })
                                .collect();
                            let (lo, hi) = valid_range(len, out, k, s, p);
                            assert_eq!((lo..hi).collect::<Vec<_>>(), brute, "len={len} k={k} s={s} p={p} out={out}");
                        }
                    }
                }
            }
        }
    }
}
