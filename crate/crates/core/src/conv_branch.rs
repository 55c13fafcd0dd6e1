// SPDX-License-Identifier: Apache-2.0

//! Convolutional branch: ConvNormSiLU encoder, high-frequency enhancement
//! blocks at the bottleneck, and a transposed-convolution decoder with
//! additive skips. Time is folded into channels: `[B, T·C, H, W]`.

use crate::error::{Error, Result};
use crate::freq_branch::add_channel_bias;
use crate::model::{strided_block, Bound, FcnetConfig, Init, ParamSpec};
use crate::tensor::{ConvSpec, Real, Tape, Var};

const NORM_EPS: f64 = 1e-5;

pub fn param_specs(cfg: &FcnetConfig) -> Vec<ParamSpec> {
    let ch = cfg.hidden;
    let cin = cfg.t * cfg.c;
    let mut v = Vec::new();
    for i in 0..cfg.encoder_depth {
        let inp = if i == 0 { cin } else { ch };
        let n = |s: &str| format!("conv.enc.{i}.{s}");
        v.extend([
            ParamSpec::new(n("w"), &[ch, inp, 3, 3], Init::fan_in(inp * 9)),
            ParamSpec::new(n("b"), &[ch], Init::Const(0.0)),
            ParamSpec::new(n("gn.gamma"), &[ch], Init::Const(1.0)),
            ParamSpec::new(n("gn.beta"), &[ch], Init::Const(0.0)),
        ]);
    }
    let r = ch / cfg.reduction;
    for j in 0..cfg.hfeb_blocks {
        let n = |s: &str| format!("conv.hfeb.{j}.{s}");
        v.extend([
            ParamSpec::new(n("ca.squeeze.w"), &[r, ch], Init::fan_in(ch)),
            ParamSpec::new(n("ca.squeeze.b"), &[r], Init::Const(0.0)),
            ParamSpec::new(n("ca.excite.w"), &[ch, r], Init::normal(0.02)),
            ParamSpec::new(n("ca.excite.b"), &[ch], Init::Const(2.0)),
            ParamSpec::new(n("sa.dw5.w"), &[ch, 1, 5, 5], Init::fan_in(25)),
            ParamSpec::new(n("sa.dw5.b"), &[ch], Init::Const(0.0)),
            ParamSpec::new(n("sa.dw7.w"), &[ch, 1, 7, 7], Init::fan_in(49)),
            ParamSpec::new(n("sa.dw7.b"), &[ch], Init::Const(0.0)),
            ParamSpec::new(n("sa.pw.w"), &[ch, ch, 1, 1], Init::normal(0.02)),
            ParamSpec::new(n("sa.pw.b"), &[ch], Init::Const(1.0)),
            ParamSpec::new(n("ta.fc.w"), &[ch, ch], Init::normal(0.02)),
            ParamSpec::new(n("ta.fc.b"), &[ch], Init::Const(1.0)),
            ParamSpec::new(n("fuse.w"), &[ch, ch, 1, 1], Init::Identity { std: 0.02 }),
            ParamSpec::new(n("fuse.b"), &[ch], Init::Const(0.0)),
        ]);
    }
    for j in 0..cfg.encoder_depth {
        let i = cfg.encoder_depth - 1 - j;
        let k = if strided_block(i) { 4 } else { 3 };
        let s = if strided_block(i) { 2 } else { 1 };
        let n = |s: &str| format!("conv.dec.{j}.{s}");
        v.extend([
            ParamSpec::new(n("w"), &[ch, ch, k, k], Init::fan_in(ch * k * k / (s * s))),
            ParamSpec::new(n("b"), &[ch], Init::Const(0.0)),
            ParamSpec::new(n("gn.gamma"), &[ch], Init::Const(1.0)),
            ParamSpec::new(n("gn.beta"), &[ch], Init::Const(0.0)),
        ]);
    }
    let out = cfg.t_prime * cfg.c;
    v.push(ParamSpec::new("conv.head.w", &[out, ch, 1, 1], Init::fan_in(ch)));
    v.push(ParamSpec::new("conv.head.b", &[out], Init::Const(0.0)));
    v
}

fn pget(p: &Bound, prefix: &str, name: &str) -> Result<Var> {
    p.get(&format!("{prefix}.{name}"))
}

fn norm_silu<F: Real>(tape: &mut Tape<F>, p: &Bound, prefix: &str, x: Var, groups: usize) -> Result<Var> {
    let y = tape.group_norm(x, groups, pget(p, prefix, "gn.gamma")?, pget(p, prefix, "gn.beta")?, NORM_EPS)?;
    tape.silu(y)
}

/// Encoder over `[B, T·C, H, W]`; returns the latent and the outputs of every
/// block but the last, finest first.
pub fn encoder_forward<F: Real>(tape: &mut Tape<F>, p: &Bound, cfg: &FcnetConfig, x: Var) -> Result<(Var, Vec<Var>)> {
    let s = tape.shape(x).to_vec();
    let stride = cfg.total_stride();
    if s.len() != 4 || s[2] % stride != 0 || s[3] % stride != 0 {
        return Err(Error::config(format!("encoder input {s:?} not divisible by stride {stride}")));
    }
    let mut skips = Vec::new();
    let mut z = x;
    for i in 0..cfg.encoder_depth {
        let prefix = format!("conv.enc.{i}");
        let spec = ConvSpec::same(3).with_stride(if strided_block(i) { 2 } else { 1 });
        let run = |tape: &mut Tape<F>| -> Result<Var> {
            let y = tape.conv2d(z, pget(p, &prefix, "w")?, spec)?;
            let y = add_channel_bias(tape, y, pget(p, &prefix, "b")?)?;
            norm_silu(tape, p, &prefix, y, cfg.norm_groups)
        };
        let y = run(tape).map_err(|e| e.at(&prefix))?;
        if i + 1 < cfg.encoder_depth {
            skips.push(y);
        }
        z = y;
    }
    Ok((z, skips))
}

/// `(F_l, F_h)` with `F_l = avgpool(F)` and `F_h = F − up(F_l)`.
pub fn freq_separate<F: Real>(tape: &mut Tape<F>, f: Var) -> Result<(Var, Var)> {
    let low = tape.avg_pool2d(f)?;
    let up = tape.bilinear_upsample2x(low)?;
    let high = tape.sub(f, up)?;
    Ok((low, high))
}

/// Squeeze-excite gate over channels.
pub fn channel_attention<F: Real>(tape: &mut Tape<F>, p: &Bound, prefix: &str, fh: Var) -> Result<Var> {
    let s = tape.shape(fh).to_vec();
    let g = tape.mean_axes(fh, &[2, 3])?;
    let g = tape.reshape(g, &[s[0], s[1]])?;
    let g = tape.linear(g, pget(p, prefix, "ca.squeeze.w")?, Some(pget(p, prefix, "ca.squeeze.b")?))?;
    let g = tape.silu(g)?;
    let g = tape.linear(g, pget(p, prefix, "ca.excite.w")?, Some(pget(p, prefix, "ca.excite.b")?))?;
    let g = tape.sigmoid(g)?;
    let g = tape.reshape(g, &[s[0], s[1], 1, 1])?;
    tape.mul(fh, g)
}

/// Spatial map from the large-kernel decomposition (DW 5×5, DW 7×7 at
/// dilation 3, pointwise).
pub fn spatial_attention<F: Real>(tape: &mut Tape<F>, p: &Bound, prefix: &str, fl: Var) -> Result<Var> {
    let ch = tape.shape(fl)[1];
    let a = tape.conv2d(fl, pget(p, prefix, "sa.dw5.w")?, ConvSpec::same(5).with_groups(ch))?;
    let a = add_channel_bias(tape, a, pget(p, prefix, "sa.dw5.b")?)?;
    let dilated = ConvSpec {
        padding: 9,
        ..ConvSpec::same(7).with_dilation(3).with_groups(ch)
    };
    let a = tape.conv2d(a, pget(p, prefix, "sa.dw7.w")?, dilated)?;
    let a = add_channel_bias(tape, a, pget(p, prefix, "sa.dw7.b")?)?;
    let a = tape.conv2d(a, pget(p, prefix, "sa.pw.w")?, ConvSpec::default())?;
    add_channel_bias(tape, a, pget(p, prefix, "sa.pw.b")?)
}

/// `F'_l = (SA ⊗ TA) ⊙ F_l`, TA a per-channel vector from pooled features.
pub fn tau_attention<F: Real>(tape: &mut Tape<F>, p: &Bound, prefix: &str, fl: Var) -> Result<Var> {
    let s = tape.shape(fl).to_vec();
    let sa = spatial_attention(tape, p, prefix, fl)?;
    let ta = tape.mean_axes(fl, &[2, 3])?;
    let ta = tape.reshape(ta, &[s[0], s[1]])?;
    let ta = tape.linear(ta, pget(p, prefix, "ta.fc.w")?, Some(pget(p, prefix, "ta.fc.b")?))?;
    let ta = tape.reshape(ta, &[s[0], s[1], 1, 1])?;
    let weight = tape.mul(sa, ta)?;
    tape.mul(weight, fl)
}

pub fn hfeb_forward<F: Real>(tape: &mut Tape<F>, p: &Bound, block: usize, f: Var) -> Result<Var> {
    let prefix = format!("conv.hfeb.{block}");
    let run = |tape: &mut Tape<F>| -> Result<Var> {
        let (low, high) = freq_separate(tape, f)?;
        let high = channel_attention(tape, p, &prefix, high)?;
        let low = tau_attention(tape, p, &prefix, low)?;
        let up = tape.bilinear_upsample2x(low)?;
        let mix = tape.add(high, up)?;
        let y = tape.conv2d(mix, pget(p, &prefix, "fuse.w")?, ConvSpec::default())?;
        add_channel_bias(tape, y, pget(p, &prefix, "fuse.b")?)
    };
    run(tape).map_err(|e| e.at(&prefix))
}

/// Mirrored decoder; the head maps hidden channels to `T'·C`.
pub fn decoder_forward<F: Real>(
    tape: &mut Tape<F>,
    p: &Bound,
    cfg: &FcnetConfig,
    latent: Var,
    skips: &[Var],
) -> Result<Var> {
    if skips.len() + 1 != cfg.encoder_depth {
        return Err(Error::dim(format!(
            "decoder expects {} skips, got {}",
            cfg.encoder_depth - 1,
            skips.len()
        )));
    }
    let mut z = latent;
    for j in 0..cfg.encoder_depth {
        let i = cfg.encoder_depth - 1 - j;
        let prefix = format!("conv.dec.{j}");
        let (stride, pad) = if strided_block(i) { (2, 1) } else { (1, 1) };
        let run = |tape: &mut Tape<F>| -> Result<Var> {
            let y = tape.conv_transpose2d(z, pget(p, &prefix, "w")?, stride, pad)?;
            let y = add_channel_bias(tape, y, pget(p, &prefix, "b")?)?;
            let mut y = norm_silu(tape, p, &prefix, y, cfg.norm_groups)?;
            if i > 0 {
                let skip = skips[i - 1];
                if tape.shape(skip) != tape.shape(y) {
                    return Err(Error::dim(format!(
                        "skip {:?} does not match decoder output {:?}",
                        tape.shape(skip),
                        tape.shape(y)
                    )));
                }
                y = tape.add(y, skip)?;
            }
            Ok(y)
        };
        z = run(tape).map_err(|e| e.at(&prefix))?;
    }
    let y = tape.conv2d(z, p.get("conv.head.w")?, ConvSpec::default())?;
    add_channel_bias(tape, y, p.get("conv.head.b")?).map_err(|e| e.at("conv.head"))
}

/// `F_out` for a batch `[B, T, C, H, W]`, shaped `[B, T', C, H, W]`.
pub fn conv_branch_forward<F: Real>(tape: &mut Tape<F>, p: &Bound, cfg: &FcnetConfig, x: Var) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if s.len() != 5 || s[1] != cfg.t || s[2] != cfg.c {
        return Err(Error::config(format!("input {s:?} does not match [B, {}, {}, H, W]", cfg.t, cfg.c)));
    }
    let (b, h, w) = (s[0], s[3], s[4]);
    let x = tape.reshape(x, &[b, cfg.t * cfg.c, h, w])?;
    let (mut z, skips) = encoder_forward(tape, p, cfg, x)?;
    if cfg.ablation.use_hfeb {
        for j in 0..cfg.hfeb_blocks {
            z = hfeb_forward(tape, p, j, z)?;
        }
    }
    let y = decoder_forward(tape, p, cfg, z, &skips)?;
    tape.reshape(y, &[b, cfg.t_prime, cfg.c, h, w])
}
