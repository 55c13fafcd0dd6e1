// SPDX-License-Identifier: Apache-2.0

//! Wengert-list reverse-mode differentiation.
//!
//! Every op appends one node holding its forward value. `backward` walks the
//! list in strict reverse order and accumulates additively into each input's
//! gradient buffer. A tape is single-use: build a fresh one per forward pass.

use super::broadcast::Broadcast;
use super::kernels::{self, ConvDims, Window};
use super::{gemm, lit, numel, Real, Tensor};
use crate::error::{Error, Result};
use crate::spectral::fft;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Stride, padding, dilation and grouping of a 2D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec {
            stride: 1,
            padding: 0,
            dilation: 1,
            groups: 1,
        }
    }
}

impl ConvSpec {
    pub fn same(k: usize) -> Self {
        ConvSpec {
            padding: k / 2,
            ..Default::default()
        }
    }

    pub fn with_stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn with_dilation(mut self, d: usize) -> Self {
        self.dilation = d;
        self
    }

    pub fn with_groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }
}

enum Op<F> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    AddScalar(Var),
    Sigmoid(Var),
    Silu(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Matmul(Var, Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Conv2d {
        x: Var,
        k: Var,
        dims: ConvDims,
        win: Window,
    },
    ConvT2d {
        x: Var,
        k: Var,
        dims: ConvDims,
        win: Window,
    },
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        xhat: Vec<F>,
        rstd: Vec<F>,
    },
    AvgPool2(Var),
    Upsample2(Var),
    SumAxes(Var),
    Dft2 {
        re: Var,
        im: Option<Var>,
        inverse: bool,
    },
    Select(Var, usize),
    Flip2(Var),
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Recording of executed operations, differentiable in reverse.
pub struct Tape<F: Real = f32> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Vec<F>>>,
    backward_done: bool,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn op_name<F>(op: &Op<F>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::AddScalar(..) => "add_scalar",
        Op::Sigmoid(..) => "sigmoid",
        Op::Silu(..) => "silu",
        Op::Linear { .. } => "linear",
        Op::Matmul(..) => "matmul",
        Op::Reshape(..) => "reshape",
        Op::Permute(..) => "permute",
        Op::Conv2d { .. } => "conv2d",
        Op::ConvT2d { .. } => "conv_transpose2d",
        Op::GroupNorm { .. } => "group_norm",
        Op::AvgPool2(..) => "avg_pool2d",
        Op::Upsample2(..) => "bilinear_upsample2x",
        Op::SumAxes(..) => "sum",
        Op::Dft2 { inverse: false, .. } => "dft2d",
        Op::Dft2 { inverse: true, .. } => "idft2d",
        Op::Select(..) => "select",
        Op::Flip2(..) => "flip2",
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input: its gradient is kept after `backward`.
    pub fn leaf(&mut self, value: Tensor<F>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that takes no part in differentiation.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Copy of `v`'s value with the gradient path cut.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor<F>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.shape(v), g.clone()).expect("grad shape"))
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::numeric(format!(
                "{} produced a non-finite value",
                op_name(&op)
            )));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Result<(Tensor<F>, Broadcast)> {
        let (ta, tb) = (self.value(a), self.value(b));
        let bc = Broadcast::new(ta.shape(), tb.shape())?;
        let mut out = vec![F::zero(); numel(&bc.out_shape)];
        let (da, db) = (ta.data(), tb.data());
        bc.for_each(|o, ia, ib| out[o] = f(da[ia], db[ib]));
        Ok((Tensor::new(&bc.out_shape, out)?, bc))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _) = self.binary(a, b, |x, y| x + y)?;
        self.push(t, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _) = self.binary(a, b, |x, y| x - y)?;
        self.push(t, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _) = self.binary(a, b, |x, y| x * y)?;
        self.push(t, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let s = lit::<F>(s);
        let t = self.value(a).map(|x| x * s);
        self.push(t, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let s = lit::<F>(s);
        let t = self.value(a).map(|x| x + s);
        self.push(t, Op::AddScalar(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).map(sigmoid);
        self.push(t, Op::Sigmoid(a), &[a])
    }

    /// `x · sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).map(|x| x * sigmoid(x));
        self.push(t, Op::Silu(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    /// `x[..., in] · wᵀ + b` with `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if ws.len() != 2 || xs.last() != Some(&ws[1]) {
            return Err(Error::dim(format!("linear: input {xs:?} vs weight {ws:?}")));
        }
        let (dout, din) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return Err(Error::dim(format!(
                    "linear: bias {:?} vs {dout} outputs",
                    self.shape(b)
                )));
            }
        }
        let rows = numel(&xs) / din.max(1);
        let mut out = vec![F::zero(); rows * dout];
        gemm(
            rows,
            din,
            dout,
            self.value(x).data(),
            false,
            self.value(w).data(),
            true,
            &mut out,
            false,
        );
        if let Some(b) = b {
            let bd = self.value(b).data();
            for row in out.chunks_mut(dout) {
                row.iter_mut().zip(bd).for_each(|(o, &bb)| *o += bb);
            }
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = dout;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(Tensor::new(&shape, out)?, Op::Linear { x, w, b }, &inputs)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim(format!("matmul: {sa:?} × {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![F::zero(); m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        self.push(Tensor::new(&[m, n], out)?, Op::Matmul(a, b), &[a, b])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        self.push(t, Op::Reshape(a), &[a])
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let mut check = perm.to_vec();
        check.sort_unstable();
        if perm.len() != s.len() || check.iter().enumerate().any(|(i, &p)| i != p) {
            return Err(Error::dim(format!("permute {perm:?} on rank {}", s.len())));
        }
        let data = kernels::permute(self.value(a).data(), &s, perm);
        let shape: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
        self.push(Tensor::new(&shape, data)?, Op::Permute(a, perm.to_vec()), &[a])
    }

    /// Cross-correlation of `x: [B, Cin, H, W]` with `k: [Cout, Cin/groups, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, k: Var, spec: ConvSpec) -> Result<Var> {
        let (xs, ks) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        if xs.len() != 4 || ks.len() != 4 {
            return Err(Error::dim(format!("conv2d: input {xs:?}, kernel {ks:?}")));
        }
        let (b, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, cig, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        let g = spec.groups;
        if g == 0 || cin % g != 0 || cout % g != 0 || cig != cin / g {
            return Err(Error::dim(format!(
                "conv2d: groups {g} incompatible with input {xs:?} / kernel {ks:?}"
            )));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::dim(format!("conv2d: kernel extents must be odd, got {kh}×{kw}")));
        }
        if spec.stride == 0 || spec.dilation == 0 {
            return Err(Error::dim("conv2d: stride and dilation must be positive"));
        }
        let win = Window {
            kh,
            kw,
            stride: spec.stride,
            pad: spec.padding,
            dilation: spec.dilation,
        };
        let (oh, ow) = match (win.conv_out(h, kh), win.conv_out(w, kw)) {
            (Some(a), Some(c)) if a > 0 && c > 0 => (a, c),
            _ => return Err(Error::dim(format!("conv2d: empty output for input {xs:?}, kernel {ks:?}"))),
        };
        let dims = ConvDims {
            batch: b,
            cin,
            cout,
            h,
            w,
            oh,
            ow,
            groups: g,
        };
        let out = kernels::conv2d_forward(self.value(x).data(), self.value(k).data(), dims, win);
        self.push(
            Tensor::new(&[b, cout, oh, ow], out)?,
            Op::Conv2d { x, k, dims, win },
            &[x, k],
        )
    }

    /// Transposed convolution, `k: [Cin, Cout, kh, kw]`;
    /// output extent `(H − 1)·stride − 2·padding + kh`.
    pub fn conv_transpose2d(&mut self, x: Var, k: Var, stride: usize, padding: usize) -> Result<Var> {
        let (xs, ks) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        if xs.len() != 4 || ks.len() != 4 || xs[1] != ks[0] {
            return Err(Error::dim(format!("conv_transpose2d: input {xs:?}, kernel {ks:?}")));
        }
        if stride == 0 {
            return Err(Error::dim("conv_transpose2d: stride must be positive"));
        }
        let (b, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, kh, kw) = (ks[1], ks[2], ks[3]);
        let full_h = (h - 1) * stride + kh;
        let full_w = (w - 1) * stride + kw;
        if full_h <= 2 * padding || full_w <= 2 * padding {
            return Err(Error::dim(format!(
                "conv_transpose2d: empty output for input {xs:?}, kernel {ks:?}, padding {padding}"
            )));
        }
        let (oh, ow) = (full_h - 2 * padding, full_w - 2 * padding);
        let win = Window {
            kh,
            kw,
            stride,
            pad: padding,
            dilation: 1,
        };
        let dims = ConvDims {
            batch: b,
            cin,
            cout,
            h,
            w,
            oh,
            ow,
            groups: 1,
        };
        let out = kernels::conv_transpose2d_forward(self.value(x).data(), self.value(k).data(), dims, win);
        self.push(
            Tensor::new(&[b, cout, oh, ow], out)?,
            Op::ConvT2d { x, k, dims, win },
            &[x, k],
        )
    }

    /// Group normalization of `x: [B, C, ...]` followed by a per-channel affine map.
    pub fn group_norm(&mut self, x: Var, groups: usize, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return Err(Error::dim(format!("group_norm: input {xs:?}")));
        }
        let c = xs[1];
        if groups == 0 || c % groups != 0 {
            return Err(Error::config(format!("group_norm: {groups} groups do not divide {c} channels")));
        }
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::dim("group_norm: affine parameters must have one entry per channel"));
        }
        if eps <= 0.0 {
            return Err(Error::config("group_norm: eps must be positive"));
        }
        let spatial: usize = xs[2..].iter().product();
        let out = kernels::group_norm_forward(
            self.value(x).data(),
            xs[0],
            c,
            spatial,
            groups,
            self.value(gamma).data(),
            self.value(beta).data(),
            lit(eps),
        );
        self.push(
            Tensor::new(&xs, out.y)?,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                xhat: out.xhat,
                rstd: out.rstd,
            },
            &[x, gamma, beta],
        )
    }

    fn planes_hw(&self, a: Var, what: &str) -> Result<(usize, usize, usize)> {
        let s = self.shape(a);
        if s.len() < 2 {
            return Err(Error::dim(format!("{what}: needs at least 2 axes, got {s:?}")));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        Ok((numel(&s[..s.len() - 2]), h, w))
    }

    /// 2×2 average pooling with stride 2 over the last two axes.
    pub fn avg_pool2d(&mut self, a: Var) -> Result<Var> {
        let (p, h, w) = self.planes_hw(a, "avg_pool2d")?;
        if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
            return Err(Error::dim(format!("avg_pool2d: extents {h}×{w} must be even")));
        }
        let out = kernels::avg_pool2_forward(self.value(a).data(), p, h, w);
        let mut shape = self.shape(a).to_vec();
        let r = shape.len();
        shape[r - 2] = h / 2;
        shape[r - 1] = w / 2;
        self.push(Tensor::new(&shape, out)?, Op::AvgPool2(a), &[a])
    }

    /// 2× bilinear upsampling over the last two axes (half-pixel centers).
    pub fn bilinear_upsample2x(&mut self, a: Var) -> Result<Var> {
        let (p, h, w) = self.planes_hw(a, "bilinear_upsample2x")?;
        if h == 0 || w == 0 {
            return Err(Error::dim("bilinear_upsample2x: empty input"));
        }
        let out = kernels::upsample2_forward(self.value(a).data(), p, h, w);
        let mut shape = self.shape(a).to_vec();
        let r = shape.len();
        shape[r - 2] = 2 * h;
        shape[r - 1] = 2 * w;
        self.push(Tensor::new(&shape, out)?, Op::Upsample2(a), &[a])
    }

    /// Sum over `axes`, keeping them as extent-1 axes.
    pub fn sum_axes(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axes.iter().any(|&ax| ax >= s.len()) {
            return Err(Error::dim(format!("sum over axes {axes:?} of rank {}", s.len())));
        }
        let mut out_shape = s.clone();
        for &ax in axes {
            out_shape[ax] = 1;
        }
        let bc = Broadcast::new(&out_shape, &s)?;
        let mut out = vec![F::zero(); numel(&out_shape)];
        let d = self.value(a).data();
        bc.for_each(|o, ir, _| out[ir] += d[o]);
        self.push(Tensor::new(&out_shape, out)?, Op::SumAxes(a), &[a])
    }

    pub fn mean_axes(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let count: usize = axes.iter().filter_map(|&ax| s.get(ax)).product();
        let summed = self.sum_axes(a, axes)?;
        self.scale(summed, 1.0 / count.max(1) as f64)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let rank = self.shape(a).len();
        let all: Vec<usize> = (0..rank).collect();
        let s = self.sum_axes(a, &all)?;
        self.reshape(s, &[])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n.max(1) as f64)
    }

    /// Packed 2D DFT over the last two axes: the result has a new leading
    /// axis of extent 2 holding `[re, im]`. The forward transform is
    /// unnormalized, the inverse carries `1/(H·W)`.
    pub(crate) fn dft2(&mut self, re: Var, im: Option<Var>, inverse: bool) -> Result<Var> {
        let shape = self.shape(re).to_vec();
        if let Some(im) = im {
            if self.shape(im) != shape.as_slice() {
                return Err(Error::dim("dft2d: real and imaginary parts differ in shape"));
            }
        }
        let (p, h, w) = self.planes_hw(re, "dft2d")?;
        let mut r = self.value(re).data().to_vec();
        let mut i = match im {
            Some(im) => self.value(im).data().to_vec(),
            None => vec![F::zero(); r.len()],
        };
        fft::fft2_planes(&mut r, &mut i, p, h, w, inverse);
        if inverse {
            let s = lit::<F>(1.0 / (h * w) as f64);
            r.iter_mut().chain(i.iter_mut()).for_each(|v| *v *= s);
        }
        r.extend_from_slice(&i);
        let mut out_shape = vec![2];
        out_shape.extend_from_slice(&shape);
        let mut inputs = vec![re];
        inputs.extend(im);
        self.push(Tensor::new(&out_shape, r)?, Op::Dft2 { re, im, inverse }, &inputs)
    }

    /// Sub-tensor at `index` along the leading axis.
    pub fn select(&mut self, a: Var, index: usize) -> Result<Var> {
        let t = self.value(a).index_axis0(index)?;
        self.push(t, Op::Select(a, index), &[a])
    }

    /// Frequency reversal over the last two axes: `(u, v) → (−u mod H, −v mod W)`.
    pub fn flip2(&mut self, a: Var) -> Result<Var> {
        let (p, h, w) = self.planes_hw(a, "flip2")?;
        let data = flip2_data(self.value(a).data(), p, h, w);
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(&shape, data)?, Op::Flip2(a), &[a])
    }

    /// Populate gradients of the scalar `loss` with respect to every node
    /// that requires them. Callable once per tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::usage("backward already ran on this tape; record a new forward pass"));
        }
        if self.nodes.is_empty() {
            return Err(Error::usage("backward on an empty tape"));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contrib: Vec<F>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => g.iter_mut().zip(contrib).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn reduce_broadcast(&self, shape_out: &[usize], target: Var, other: Var, g: &[F], f: impl Fn(F, usize) -> F, target_is_a: bool) -> Vec<F> {
        let (sa, sb) = if target_is_a {
            (self.shape(target), self.shape(other))
        } else {
            (self.shape(other), self.shape(target))
        };
        let bc = Broadcast::new(sa, sb).expect("recorded shapes broadcast");
        debug_assert_eq!(bc.out_shape, shape_out);
        let mut out = vec![F::zero(); self.value(target).len()];
        bc.for_each(|o, ia, ib| {
            let (it, io) = if target_is_a { (ia, ib) } else { (ib, ia) };
            out[it] += f(g[o], io);
        });
        out
    }

    fn backprop_node(&mut self, i: usize, g: &[F]) {
        let node = &self.nodes[i];
        let out_shape = node.value.shape().to_vec();
        // Compute contributions first, then accumulate, to keep borrows simple.
        let mut contribs: Vec<(Var, Vec<F>)> = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let neg = matches!(node.op, Op::Sub(..));
                let (a, b) = (*a, *b);
                if self.wants(a) {
                    contribs.push((a, self.reduce_broadcast(&out_shape, a, b, g, |x, _| x, true)));
                }
                if self.wants(b) {
                    let gb = self.reduce_broadcast(&out_shape, b, a, g, |x, _| if neg { -x } else { x }, false);
                    contribs.push((b, gb));
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.wants(a) {
                    let bd = self.value(b).data();
                    contribs.push((a, self.reduce_broadcast(&out_shape, a, b, g, |x, ib| x * bd[ib], true)));
                }
                if self.wants(b) {
                    let ad = self.value(a).data();
                    contribs.push((b, self.reduce_broadcast(&out_shape, b, a, g, |x, ia| x * ad[ia], false)));
                }
            }
            Op::Scale(a, s) => contribs.push((*a, g.iter().map(|&x| x * *s).collect())),
            Op::AddScalar(a) | Op::Reshape(a) => contribs.push((*a, g.to_vec())),
            Op::Sigmoid(a) => {
                let y = node.value.data();
                contribs.push((
                    *a,
                    g.iter().zip(y).map(|(&gg, &yy)| gg * yy * (F::one() - yy)).collect(),
                ));
            }
            Op::Silu(a) => {
                let x = self.value(*a).data();
                contribs.push((
                    *a,
                    g.iter()
                        .zip(x)
                        .map(|(&gg, &xx)| {
                            let s = sigmoid(xx);
                            gg * (s + xx * s * (F::one() - s))
                        })
                        .collect(),
                ));
            }
            Op::Linear { x, w, b } => {
                let (x, w, b) = (*x, *w, *b);
                let ws = self.shape(w);
                let (dout, din) = (ws[0], ws[1]);
                let rows = self.value(x).len() / din.max(1);
                if self.wants(x) {
                    let mut gx = vec![F::zero(); rows * din];
                    gemm(rows, dout, din, g, false, self.value(w).data(), false, &mut gx, false);
                    contribs.push((x, gx));
                }
                if self.wants(w) {
                    let mut gw = vec![F::zero(); dout * din];
                    gemm(dout, rows, din, g, true, self.value(x).data(), false, &mut gw, false);
                    contribs.push((w, gw));
                }
                if let Some(b) = b.filter(|&b| self.wants(b)) {
                    let mut gb = vec![F::zero(); dout];
                    for row in g.chunks(dout) {
                        gb.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                    }
                    contribs.push((b, gb));
                }
            }
            Op::Matmul(a, b) => {
                let (a, b) = (*a, *b);
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                if self.wants(a) {
                    let mut ga = vec![F::zero(); m * k];
                    gemm(m, n, k, g, false, self.value(b).data(), true, &mut ga, false);
                    contribs.push((a, ga));
                }
                if self.wants(b) {
                    let mut gb = vec![F::zero(); k * n];
                    gemm(k, m, n, self.value(a).data(), true, g, false, &mut gb, false);
                    contribs.push((b, gb));
                }
            }
            Op::Permute(a, perm) => {
                let inv = kernels::inverse_permutation(perm);
                contribs.push((*a, kernels::permute(g, &out_shape, &inv)));
            }
            Op::Conv2d { x, k, dims, win } => {
                let (gx, gk) = kernels::conv2d_backward(
                    self.value(*x).data(),
                    self.value(*k).data(),
                    g,
                    *dims,
                    *win,
                    self.wants(*x),
                    self.wants(*k),
                );
                contribs.extend(gx.map(|v| (*x, v)));
                contribs.extend(gk.map(|v| (*k, v)));
            }
            Op::ConvT2d { x, k, dims, win } => {
                let (gx, gk) = kernels::conv_transpose2d_backward(
                    self.value(*x).data(),
                    self.value(*k).data(),
                    g,
                    *dims,
                    *win,
                    self.wants(*x),
                    self.wants(*k),
                );
                contribs.extend(gx.map(|v| (*x, v)));
                contribs.extend(gk.map(|v| (*k, v)));
            }
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                xhat,
                rstd,
            } => {
                let xs = self.shape(*x);
                let spatial: usize = xs[2..].iter().product();
                let (gx, ggamma, gbeta) = kernels::group_norm_backward(
                    g,
                    xhat,
                    rstd,
                    self.value(*gamma).data(),
                    xs[0],
                    xs[1],
                    spatial,
                    *groups,
                );
                contribs.push((*x, gx));
                contribs.push((*gamma, ggamma));
                contribs.push((*beta, gbeta));
            }
            Op::AvgPool2(a) => {
                let s = self.shape(*a);
                let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
                let p = numel(s) / (h * w);
                contribs.push((*a, kernels::avg_pool2_backward(g, p, h, w)));
            }
            Op::Upsample2(a) => {
                let s = self.shape(*a);
                let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
                let p = numel(s) / (h * w);
                contribs.push((*a, kernels::upsample2_backward(g, p, h, w)));
            }
            Op::SumAxes(a) => {
                let s = self.shape(*a).to_vec();
                let bc = Broadcast::new(&out_shape, &s).expect("recorded shapes broadcast");
                let mut ga = vec![F::zero(); numel(&s)];
                bc.for_each(|o, ir, _| ga[o] = g[ir]);
                contribs.push((*a, ga));
            }
            Op::Dft2 { re, im, inverse } => {
                let s = self.shape(*re);
                let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
                let p = numel(s) / (h * w);
                let n = numel(s);
                let mut gr = g[..n].to_vec();
                let mut gi = g[n..].to_vec();
                // Adjoint of the forward DFT is the conjugate transform; the
                // inverse's adjoint is the forward transform scaled by 1/HW.
                fft::fft2_planes(&mut gr, &mut gi, p, h, w, !*inverse);
                if *inverse {
                    let sc = lit::<F>(1.0 / (h * w) as f64);
                    gr.iter_mut().chain(gi.iter_mut()).for_each(|v| *v *= sc);
                }
                contribs.push((*re, gr));
                if let Some(im) = im {
                    contribs.push((*im, gi));
                }
            }
            Op::Select(a, index) => {
                let total = self.value(*a).len();
                let inner = g.len();
                let mut ga = vec![F::zero(); total];
                ga[index * inner..(index + 1) * inner].copy_from_slice(g);
                contribs.push((*a, ga));
            }
            Op::Flip2(a) => {
                let s = self.shape(*a);
                let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
                let p = numel(s) / (h * w);
                contribs.push((*a, flip2_data(g, p, h, w)));
            }
        }
        for (v, c) in contribs {
            self.accumulate(v, c);
        }
    }
}

fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

fn flip2_data<F: Real>(x: &[F], planes: usize, h: usize, w: usize) -> Vec<F> {
    let mut out = vec![F::zero(); x.len()];
    for p in 0..planes {
        for u in 0..h {
            let su = (h - u) % h;
            for v in 0..w {
                let sv = (w - v) % w;
                out[(p * h + u) * w + v] = x[(p * h + su) * w + sv];
            }
        }
    }
    out
}
