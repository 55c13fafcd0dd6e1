// SPDX-License-Identifier: Apache-2.0

//! Separable 2D discrete Fourier transform on split real/imaginary buffers.
//!
//! Power-of-two line lengths use an iterative radix-2 Cooley–Tukey pass;
//! any other length falls back to direct O(n²) summation. Both directions
//! are unnormalized; `inverse` only flips the exponent sign.

use crate::tensor::{lit, Real};

/// Precomputed twiddles and bit-reversal permutation for one line length.
struct Plan<F> {
    n: usize,
    radix2: bool,
    // e^{-j2πk/n} for k in 0..n (forward sign)
    cos: Vec<F>,
    sin: Vec<F>,
    rev: Vec<usize>,
}

impl<F: Real> Plan<F> {
    fn new(n: usize) -> Self {
        let radix2 = n.is_power_of_two();
        let (cos, sin) = (0..n)
            .map(|k| {
                let a = -2.0 * std::f64::consts::PI * k as f64 / n as f64;
                (lit::<F>(a.cos()), lit::<F>(a.sin()))
            })
            .unzip();
        let rev = if radix2 {
            let bits = n.trailing_zeros();
            (0..n)
                .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
                .collect()
        } else {
            Vec::new()
        };
        Plan {
            n,
            radix2,
            cos,
            sin,
            rev,
        }
    }

    fn run(&self, re: &mut [F], im: &mut [F], inverse: bool, scratch: &mut (Vec<F>, Vec<F>)) {
        if self.n <= 1 {
            return;
        }
        if self.radix2 {
            self.radix2_pass(re, im, inverse);
        } else {
            self.direct(re, im, inverse, scratch);
        }
    }

    fn radix2_pass(&self, re: &mut [F], im: &mut [F], inverse: bool) {
        let n = self.n;
        for i in 0..n {
            let j = self.rev[i];
            if j > i {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let step = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let wr = self.cos[k * step];
                    let wi = if inverse { -self.sin[k * step] } else { self.sin[k * step] };
                    let (a, b) = (start + k, start + k + half);
                    let tr = re[b] * wr - im[b] * wi;
                    let ti = re[b] * wi + im[b] * wr;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
            len *= 2;
        }
    }

    fn direct(&self, re: &mut [F], im: &mut [F], inverse: bool, scratch: &mut (Vec<F>, Vec<F>)) {
        let n = self.n;
        let (sr, si) = scratch;
        sr.clear();
        si.clear();
        for k in 0..n {
            let (mut ar, mut ai) = (F::zero(), F::zero());
            for x in 0..n {
                let t = (k * x) % n;
                let wr = self.cos[t];
                let wi = if inverse { -self.sin[t] } else { self.sin[t] };
                ar += re[x] * wr - im[x] * wi;
                ai += re[x] * wi + im[x] * wr;
            }
            sr.push(ar);
            si.push(ai);
        }
        re[..n].copy_from_slice(sr);
        im[..n].copy_from_slice(si);
    }
}

/// Whether a transform of this extent takes the radix-2 path.
pub fn is_fast_path(h: usize, w: usize) -> bool {
    h.is_power_of_two() && w.is_power_of_two()
}

/// In-place 2D DFT of `planes` stacked `h×w` planes.
pub fn fft2_planes<F: Real>(re: &mut [F], im: &mut [F], planes: usize, h: usize, w: usize, inverse: bool) {
    transform(re, im, planes, h, w, inverse, false);
}

/// Same transform forced through direct summation along both axes.
pub fn dft2_planes_direct<F: Real>(re: &mut [F], im: &mut [F], planes: usize, h: usize, w: usize, inverse: bool) {
    transform(re, im, planes, h, w, inverse, true);
}

fn transform<F: Real>(
    re: &mut [F],
    im: &mut [F],
    planes: usize,
    h: usize,
    w: usize,
    inverse: bool,
    force_direct: bool,
) {
    let mut row_plan = Plan::<F>::new(w);
    let mut col_plan = Plan::<F>::new(h);
    if force_direct {
        row_plan.radix2 = false;
        col_plan.radix2 = false;
    }
    let mut scratch = (Vec::with_capacity(h.max(w)), Vec::with_capacity(h.max(w)));
    let mut cr = vec![F::zero(); h];
    let mut ci = vec![F::zero(); h];
    for p in 0..planes {
        let base = p * h * w;
        for y in 0..h {
            let o = base + y * w;
            row_plan.run(&mut re[o..o + w], &mut im[o..o + w], inverse, &mut scratch);
        }
        for x in 0..w {
            for y in 0..h {
                cr[y] = re[base + y * w + x];
                ci[y] = im[base + y * w + x];
            }
            col_plan.run(&mut cr, &mut ci, inverse, &mut scratch);
            for y in 0..h {
                re[base + y * w + x] = cr[y];
                im[base + y * w + x] = ci[y];
            }
        }
    }
}
