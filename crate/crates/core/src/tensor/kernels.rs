// SPDX-License-Identifier: Apache-2.0

//! Slice-level numeric kernels behind the tape operations.
//!
//! Everything here works on flat row-major buffers and knows nothing about
//! gradients. Convolutions go through im2col + GEMM; the lowering and its
//! adjoint (`col2im`) are shared by conv2d and its transpose.

use super::{gemm, lit, Real};

/// Geometry of a 2D sliding window over one image plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl Window {
    /// Output extent of a convolution along one axis, if positive.
    pub fn conv_out(&self, n: usize, k: usize) -> Option<usize> {
        let span = self.dilation * (k - 1) + 1;
        let padded = n + 2 * self.pad;
        if padded < span {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }
}

/// Lower `src[c, sh, sw]` into columns `[c·kh·kw, gh·gw]`, where `(gh, gw)` is
/// the grid of window positions. Window `(gy, gx)` tap `(ky, kx)` reads
/// `src[c, gy·s − p + ky·d, gx·s − p + kx·d]`, zero outside the image.
#[allow(clippy::too_many_arguments)]
pub fn im2col<F: Real>(
    src: &[F],
    c: usize,
    sh: usize,
    sw: usize,
    win: Window,
    gh: usize,
    gw: usize,
    col: &mut [F],
) {
    let Window {
        kh,
        kw,
        stride,
        pad,
        dilation,
    } = win;
    let cols = gh * gw;
    for ch in 0..c {
        let plane = &src[ch * sh * sw..(ch + 1) * sh * sw];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ch * kh + ky) * kw + kx) * cols;
                let dst = &mut col[row..row + cols];
                for gy in 0..gh {
                    let iy = (gy * stride + ky * dilation) as isize - pad as isize;
                    let out = &mut dst[gy * gw..(gy + 1) * gw];
                    if iy < 0 || iy >= sh as isize {
                        out.iter_mut().for_each(|v| *v = F::zero());
                        continue;
                    }
                    let src_row = &plane[iy as usize * sw..(iy as usize + 1) * sw];
                    for (gx, v) in out.iter_mut().enumerate() {
                        let ix = (gx * stride + kx * dilation) as isize - pad as isize;
                        *v = if ix < 0 || ix >= sw as isize {
                            F::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into `dst[c, sh, sw]`.
#[allow(clippy::too_many_arguments)]
pub fn col2im<F: Real>(
    col: &[F],
    c: usize,
    sh: usize,
    sw: usize,
    win: Window,
    gh: usize,
    gw: usize,
    dst: &mut [F],
) {
    let Window {
        kh,
        kw,
        stride,
        pad,
        dilation,
    } = win;
    let cols = gh * gw;
    for ch in 0..c {
        let plane = &mut dst[ch * sh * sw..(ch + 1) * sh * sw];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ch * kh + ky) * kw + kx) * cols;
                let srcc = &col[row..row + cols];
                for gy in 0..gh {
                    let iy = (gy * stride + ky * dilation) as isize - pad as isize;
                    if iy < 0 || iy >= sh as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * sw..(iy as usize + 1) * sw];
                    for gx in 0..gw {
                        let ix = (gx * stride + kx * dilation) as isize - pad as isize;
                        if ix >= 0 && ix < sw as isize {
                            dst_row[ix as usize] += srcc[gy * gw + gx];
                        }
                    }
                }
            }
        }
    }
}

/// Shapes of a grouped convolution call.
#[derive(Clone, Copy, Debug)]
pub struct ConvDims {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub oh: usize,
    pub ow: usize,
    pub groups: usize,
}

/// Output positions `o < n_out` whose tap `o·stride + off` lands in `0..n_in`.
fn tap_range(n_in: usize, n_out: usize, stride: usize, off: isize) -> std::ops::Range<usize> {
    let lo = if off >= 0 { 0 } else { (-off) as usize };
    let lo = lo.div_ceil(stride);
    let last = n_in as isize - 1 - off;
    if last < 0 {
        return 0..0;
    }
    let hi = n_out.min(last as usize / stride + 1);
    lo.min(hi)..hi
}

fn pointwise(win: Window) -> bool {
    win.kh == 1 && win.kw == 1 && win.stride == 1 && win.pad == 0
}

/// One depthwise plane: `out += k ⋆ x`.
fn depthwise_plane<F: Real>(x: &[F], k: &[F], d: ConvDims, win: Window, out: &mut [F]) {
    depthwise_taps(d, win, |tap, xi, oi| out[oi] += k[tap] * x[xi]);
}

/// Visit every `(tap, input index, output index)` triple of one plane.
fn depthwise_taps(d: ConvDims, win: Window, mut f: impl FnMut(usize, usize, usize)) {
    for ky in 0..win.kh {
        let offy = (ky * win.dilation) as isize - win.pad as isize;
        let ys = tap_range(d.h, d.oh, win.stride, offy);
        for kx in 0..win.kw {
            let offx = (kx * win.dilation) as isize - win.pad as isize;
            let xs = tap_range(d.w, d.ow, win.stride, offx);
            let tap = ky * win.kw + kx;
            for oy in ys.clone() {
                let iy = (oy * win.stride) as isize + offy;
                let row = iy as usize * d.w;
                for ox in xs.clone() {
                    let ix = ((ox * win.stride) as isize + offx) as usize;
                    f(tap, row + ix, oy * d.ow + ox);
                }
            }
        }
    }
}

/// Cross-correlation `out[b, co] = Σ_ci k[co, ci] ⋆ x[b, ci]` per group.
/// Kernel layout `[cout, cin/groups, kh, kw]`.
pub fn conv2d_forward<F: Real>(x: &[F], k: &[F], d: ConvDims, win: Window) -> Vec<F> {
    let cig = d.cin / d.groups;
    let cog = d.cout / d.groups;
    let kk = cig * win.kh * win.kw;
    let cols = d.oh * d.ow;
    let mut out = vec![F::zero(); d.batch * d.cout * cols];
    let plane = d.h * d.w;
    if cig == 1 && cog == 1 {
        let taps = win.kh * win.kw;
        for (i, os) in out.chunks_exact_mut(cols).enumerate() {
            let c = i % d.cout;
            depthwise_plane(&x[i * plane..(i + 1) * plane], &k[c * taps..(c + 1) * taps], d, win, os);
        }
        return out;
    }
    let direct = pointwise(win);
    let mut col = if direct { Vec::new() } else { vec![F::zero(); kk * cols] };
    for b in 0..d.batch {
        for g in 0..d.groups {
            let xs = &x[(b * d.cin + g * cig) * plane..(b * d.cin + (g + 1) * cig) * plane];
            let src = if direct {
                xs
            } else {
                im2col(xs, cig, d.h, d.w, win, d.oh, d.ow, &mut col);
                &col
            };
            let ks = &k[g * cog * kk..(g + 1) * cog * kk];
            let os = &mut out[(b * d.cout + g * cog) * cols..(b * d.cout + (g + 1) * cog) * cols];
            gemm(cog, kk, cols, ks, false, src, false, os, false);
        }
    }
    out
}

/// Gradients of [`conv2d_forward`] with respect to input and kernel.
pub fn conv2d_backward<F: Real>(
    x: &[F],
    k: &[F],
    gout: &[F],
    d: ConvDims,
    win: Window,
    want_x: bool,
    want_k: bool,
) -> (Option<Vec<F>>, Option<Vec<F>>) {
    let cig = d.cin / d.groups;
    let cog = d.cout / d.groups;
    let kk = cig * win.kh * win.kw;
    let cols = d.oh * d.ow;
    let mut gx = want_x.then(|| vec![F::zero(); x.len()]);
    let mut gk = want_k.then(|| vec![F::zero(); k.len()]);
    let plane = d.h * d.w;
    if cig == 1 && cog == 1 {
        let taps = win.kh * win.kw;
        for i in 0..d.batch * d.cout {
            let c = i % d.cout;
            let go = &gout[i * cols..(i + 1) * cols];
            let xs = &x[i * plane..(i + 1) * plane];
            if let Some(gk) = gk.as_mut() {
                let gks = &mut gk[c * taps..(c + 1) * taps];
                depthwise_taps(d, win, |tap, xi, oi| gks[tap] += xs[xi] * go[oi]);
            }
            if let Some(gx) = gx.as_mut() {
                let (ks, gxs) = (&k[c * taps..(c + 1) * taps], &mut gx[i * plane..(i + 1) * plane]);
                depthwise_taps(d, win, |tap, xi, oi| gxs[xi] += ks[tap] * go[oi]);
            }
        }
        return (gx, gk);
    }
    let direct = pointwise(win);
    let mut col = if direct { Vec::new() } else { vec![F::zero(); kk * cols] };
    for b in 0..d.batch {
        for g in 0..d.groups {
            let go = &gout[(b * d.cout + g * cog) * cols..(b * d.cout + (g + 1) * cog) * cols];
            let xr = (b * d.cin + g * cig) * plane..(b * d.cin + (g + 1) * cig) * plane;
            if let Some(gk) = gk.as_mut() {
                let src = if direct {
                    &x[xr.clone()]
                } else {
                    im2col(&x[xr.clone()], cig, d.h, d.w, win, d.oh, d.ow, &mut col);
                    &col
                };
                let gks = &mut gk[g * cog * kk..(g + 1) * cog * kk];
                // gk[cog, kk] += go[cog, cols] · srcᵀ[cols, kk]
                gemm(cog, cols, kk, go, false, src, true, gks, true);
            }
            if let Some(gx) = gx.as_mut() {
                let ks = &k[g * cog * kk..(g + 1) * cog * kk];
                if direct {
                    // gx[cig, cols] += kᵀ[cig, cog] · go[cog, cols]
                    gemm(kk, cog, cols, ks, true, go, false, &mut gx[xr], true);
                } else {
                    // col[kk, cols] = kᵀ[kk, cog] · go[cog, cols]
                    gemm(kk, cog, cols, ks, true, go, false, &mut col, false);
                    col2im(&col, cig, d.h, d.w, win, d.oh, d.ow, &mut gx[xr]);
                }
            }
        }
    }
    (gx, gk)
}

/// Transposed convolution, kernel layout `[cin, cout, kh, kw]`; `(d.h, d.w)`
/// is the input extent and `(d.oh, d.ow)` the (larger) output extent.
pub fn conv_transpose2d_forward<F: Real>(x: &[F], k: &[F], d: ConvDims, win: Window) -> Vec<F> {
    let kk = d.cout * win.kh * win.kw;
    let cols = d.h * d.w;
    let mut out = vec![F::zero(); d.batch * d.cout * d.oh * d.ow];
    let mut col = vec![F::zero(); kk * cols];
    for b in 0..d.batch {
        let xs = &x[b * d.cin * cols..(b + 1) * d.cin * cols];
        // col[kk, cols] = kᵀ[kk, cin] · x[cin, cols]
        gemm(kk, d.cin, cols, k, true, xs, false, &mut col, false);
        let os = &mut out[b * d.cout * d.oh * d.ow..(b + 1) * d.cout * d.oh * d.ow];
        col2im(&col, d.cout, d.oh, d.ow, win, d.h, d.w, os);
    }
    out
}

pub fn conv_transpose2d_backward<F: Real>(
    x: &[F],
    k: &[F],
    gout: &[F],
    d: ConvDims,
    win: Window,
    want_x: bool,
    want_k: bool,
) -> (Option<Vec<F>>, Option<Vec<F>>) {
    let kk = d.cout * win.kh * win.kw;
    let cols = d.h * d.w;
    let mut gx = want_x.then(|| vec![F::zero(); x.len()]);
    let mut gk = want_k.then(|| vec![F::zero(); k.len()]);
    let mut col = vec![F::zero(); kk * cols];
    for b in 0..d.batch {
        let go = &gout[b * d.cout * d.oh * d.ow..(b + 1) * d.cout * d.oh * d.ow];
        im2col(go, d.cout, d.oh, d.ow, win, d.h, d.w, &mut col);
        if let Some(gx) = gx.as_mut() {
            let gxs = &mut gx[b * d.cin * cols..(b + 1) * d.cin * cols];
            gemm(d.cin, kk, cols, k, false, &col, false, gxs, false);
        }
        if let Some(gk) = gk.as_mut() {
            let xs = &x[b * d.cin * cols..(b + 1) * d.cin * cols];
            // gk[cin, kk] += x[cin, cols] · colᵀ[cols, kk]
            gemm(d.cin, cols, kk, xs, false, &col, true, gk, true);
        }
    }
    (gx, gk)
}

/// Result of a group-norm forward pass, with what backward needs.
pub struct GroupNormOut<F> {
    pub y: Vec<F>,
    pub xhat: Vec<F>,
    pub rstd: Vec<F>,
}

/// `x` is `[batch, c, spatial]` flattened.
pub fn group_norm_forward<F: Real>(
    x: &[F],
    batch: usize,
    c: usize,
    spatial: usize,
    groups: usize,
    gamma: &[F],
    beta: &[F],
    eps: F,
) -> GroupNormOut<F> {
    let cpg = c / groups;
    let m = cpg * spatial;
    let mut y = vec![F::zero(); x.len()];
    let mut xhat = vec![F::zero(); x.len()];
    let mut rstd = vec![F::zero(); batch * groups];
    for b in 0..batch {
        for g in 0..groups {
            let lo = (b * c + g * cpg) * spatial;
            let seg = &x[lo..lo + m];
            // statistics accumulate in f64; constant segments then give exact zeros
            let mean64 = seg.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).sum::<f64>() / m as f64;
            let mean = lit::<F>(mean64);
            let var = seg
                .iter()
                .map(|&v| {
                    let d = (v - mean).to_f64().unwrap_or(f64::NAN);
                    d * d
                })
                .sum::<f64>()
                / m as f64;
            let r = F::one() / (lit::<F>(var) + eps).sqrt();
            rstd[b * groups + g] = r;
            for (i, &v) in seg.iter().enumerate() {
                let ch = g * cpg + i / spatial;
                let xh = (v - mean) * r;
                xhat[lo + i] = xh;
                y[lo + i] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    GroupNormOut { y, xhat, rstd }
}

/// Returns `(grad_x, grad_gamma, grad_beta)`.
#[allow(clippy::too_many_arguments)]
pub fn group_norm_backward<F: Real>(
    gy: &[F],
    xhat: &[F],
    rstd: &[F],
    gamma: &[F],
    batch: usize,
    c: usize,
    spatial: usize,
    groups: usize,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let cpg = c / groups;
    let m = cpg * spatial;
    let mf = lit::<F>(m as f64);
    let mut gx = vec![F::zero(); gy.len()];
    let mut ggamma = vec![F::zero(); c];
    let mut gbeta = vec![F::zero(); c];
    for b in 0..batch {
        for g in 0..groups {
            let lo = (b * c + g * cpg) * spatial;
            let mut sum_d = F::zero();
            let mut sum_dx = F::zero();
            for i in 0..m {
                let ch = g * cpg + i / spatial;
                let d = gy[lo + i] * gamma[ch];
                sum_d += d;
                sum_dx += d * xhat[lo + i];
                ggamma[ch] += gy[lo + i] * xhat[lo + i];
                gbeta[ch] += gy[lo + i];
            }
            let r = rstd[b * groups + g];
            for i in 0..m {
                let ch = g * cpg + i / spatial;
                let d = gy[lo + i] * gamma[ch];
                gx[lo + i] = r / mf * (mf * d - sum_d - xhat[lo + i] * sum_dx);
            }
        }
    }
    (gx, ggamma, gbeta)
}

/// 2×2 mean pooling with stride 2 over `[planes, h, w]`.
pub fn avg_pool2_forward<F: Real>(x: &[F], planes: usize, h: usize, w: usize) -> Vec<F> {
    let (oh, ow) = (h / 2, w / 2);
    let q = lit::<F>(0.25);
    let mut out = vec![F::zero(); planes * oh * ow];
    for p in 0..planes {
        let xs = &x[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                let s = xs[2 * y * w + 2 * xx]
                    + xs[2 * y * w + 2 * xx + 1]
                    + xs[(2 * y + 1) * w + 2 * xx]
                    + xs[(2 * y + 1) * w + 2 * xx + 1];
                out[(p * oh + y) * ow + xx] = s * q;
            }
        }
    }
    out
}

pub fn avg_pool2_backward<F: Real>(g: &[F], planes: usize, h: usize, w: usize) -> Vec<F> {
    let (oh, ow) = (h / 2, w / 2);
    let q = lit::<F>(0.25);
    let mut gx = vec![F::zero(); planes * h * w];
    for p in 0..planes {
        for y in 0..h {
            for x in 0..w {
                gx[(p * h + y) * w + x] = g[(p * oh + y / 2) * ow + x / 2] * q;
            }
        }
    }
    gx
}

/// Source taps for 2× bilinear upsampling along one axis of length `n`:
/// destination `i` samples `(i + 0.5)/2 − 0.5`, clamped to the border.
pub fn upsample_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|i| {
            let src = ((i as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            let frac = src - i0 as f64;
            (i0, i1, frac)
        })
        .collect()
}

pub fn upsample2_forward<F: Real>(x: &[F], planes: usize, h: usize, w: usize) -> Vec<F> {
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![F::zero(); planes * oh * ow];
    for p in 0..planes {
        let xs = &x[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let (fy1, fy0) = (lit::<F>(fy), lit::<F>(1.0 - fy));
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let (fx1, fx0) = (lit::<F>(fx), lit::<F>(1.0 - fx));
                let top = xs[y0 * w + x0] * fx0 + xs[y0 * w + x1] * fx1;
                let bot = xs[y1 * w + x0] * fx0 + xs[y1 * w + x1] * fx1;
                out[(p * oh + oy) * ow + ox] = top * fy0 + bot * fy1;
            }
        }
    }
    out
}

pub fn upsample2_backward<F: Real>(g: &[F], planes: usize, h: usize, w: usize) -> Vec<F> {
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let (oh, ow) = (2 * h, 2 * w);
    let mut gx = vec![F::zero(); planes * h * w];
    for p in 0..planes {
        let gs = &mut gx[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let (fy1, fy0) = (lit::<F>(fy), lit::<F>(1.0 - fy));
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let (fx1, fx0) = (lit::<F>(fx), lit::<F>(1.0 - fx));
                let v = g[(p * oh + oy) * ow + ox];
                gs[y0 * w + x0] += v * fy0 * fx0;
                gs[y0 * w + x1] += v * fy0 * fx1;
                gs[y1 * w + x0] += v * fy1 * fx0;
                gs[y1 * w + x1] += v * fy1 * fx1;
            }
        }
    }
    gx
}

/// `out = x.permute(perm)`: output axis `i` is input axis `perm[i]`.
pub fn permute<F: Real>(x: &[F], shape: &[usize], perm: &[usize]) -> Vec<F> {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = x.len();
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    if rank == 0 {
        out.push(x[0]);
        return out;
    }
    let last = rank - 1;
    let inner = out_shape[last];
    let s_last = strides[last];
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    loop {
        for j in 0..inner {
            out.push(x[base + j * s_last]);
        }
        if out.len() >= n {
            break;
        }
        let mut ax = last;
        loop {
            ax -= 1;
            idx[ax] += 1;
            base += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            base -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    out
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_transposes_matrix() {
        let x: Vec<f64> = (0..6).map(|v| v as f64).collect();
        let t = permute(&x, &[2, 3], &[1, 0]);
        assert_eq!(t, vec![0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        let back = permute(&t, &[3, 2], &inverse_permutation(&[1, 0]));
        assert_eq!(back, x);
    }

    #[test]
    fn upsample_taps_are_half_pixel() {
        let t = upsample_taps(4);
        assert_eq!(t[0], (0, 1, 0.0));
        assert_eq!(t[1], (0, 1, 0.25));
        assert_eq!(t[2], (0, 1, 0.75));
        assert_eq!((t[7].0, t[7].1), (3, 3));
    }

    #[test]
    fn conv_out_extent() {
        let w = Window { kh: 3, kw: 3, stride: 2, pad: 1, dilation: 1 };
        assert_eq!(w.conv_out(8, 3), Some(4));
        let w = Window { kh: 7, kw: 7, stride: 1, pad: 0, dilation: 3 };
        assert_eq!(w.conv_out(8, 7), None);
    }
}
