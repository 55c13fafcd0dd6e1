// SPDX-License-Identifier: Apache-2.0

//! Frequency branch: patch embedding, a stack of adaptive frequency filter
//! blocks over the token grid, and a linear map back to grid space.
//!
//! Tokens live channel-first as `[B·T, d, h, w]` between blocks so the
//! spectral transform and the ConvFFN both act on the trailing `(h, w)` axes.

use crate::error::{Error, Result};
use crate::model::{Bound, FcnetConfig, Init, ParamSpec};
use crate::spectral::{complex_mul_var, dft2d_var, hermitian_part_var, idft2d_var, SpectralVar};
use crate::tensor::{ConvSpec, Real, Tape, Var};

const FFN_RATIO: usize = 4;

pub fn param_specs(cfg: &FcnetConfig) -> Vec<ParamSpec> {
    let (h, w) = cfg.token_grid();
    let (d, p, c) = (cfg.embed_dim, cfg.patch, cfg.c);
    let hid = FFN_RATIO * d;
    let mut v = vec![
        ParamSpec::new("freq.embed.proj", &[d, p * p * c], Init::fan_in(p * p * c)),
        ParamSpec::new("freq.embed.pos", &[cfg.t, h, w, d], Init::normal(0.02)),
    ];
    for l in 0..cfg.affb_blocks {
        let n = |s: &str| format!("freq.affb.{l}.{s}");
        v.extend([
            ParamSpec::new(n("filter_re"), &[d, h, w], Init::Normal { mean: 1.0, std: 0.02 }),
            ParamSpec::new(n("filter_im"), &[d, h, w], Init::normal(0.02)),
            ParamSpec::new(n("fc1.w"), &[hid, d, 1, 1], Init::fan_in(d)),
            ParamSpec::new(n("fc1.b"), &[hid], Init::Const(0.0)),
            ParamSpec::new(n("dw.w"), &[hid, 1, 3, 3], Init::fan_in(9)),
            ParamSpec::new(n("dw.b"), &[hid], Init::Const(0.0)),
            ParamSpec::new(n("fc2.w"), &[d, hid, 1, 1], Init::normal(0.02)),
            ParamSpec::new(n("fc2.b"), &[d], Init::Const(0.0)),
        ]);
    }
    v.push(ParamSpec::new("freq.depatch.w", &[p * p * c, d], Init::fan_in(d)));
    v.push(ParamSpec::new("freq.depatch.b", &[p * p * c], Init::Const(0.0)));
    if cfg.time_projection {
        v.push(ParamSpec::new("freq.time.w", &[cfg.t_prime, cfg.t], Init::fan_in(cfg.t)));
        v.push(ParamSpec::new("freq.time.b", &[cfg.t_prime], Init::Const(0.0)));
    }
    v
}

fn grid_dims<F: Real>(tape: &Tape<F>, x: Var, cfg: &FcnetConfig) -> Result<(usize, usize)> {
    let s = tape.shape(x);
    if s.len() != 5 || s[2] != cfg.c || s[3] != cfg.h || s[4] != cfg.w {
        return Err(Error::config(format!(
            "input {s:?} does not match [B, T, {}, {}, {}]",
            cfg.c, cfg.h, cfg.w
        )));
    }
    if cfg.h % cfg.patch != 0 || cfg.w % cfg.patch != 0 {
        return Err(Error::config(format!("patch {} does not divide {}×{}", cfg.patch, cfg.h, cfg.w)));
    }
    Ok((s[0], s[1]))
}

/// `[B, T, C, H, W]` → tokens `[B·T, d, h, w]` with position embedding added.
pub fn patch_embed<F: Real>(tape: &mut Tape<F>, p: &Bound, cfg: &FcnetConfig, x: Var) -> Result<Var> {
    let (b, t) = grid_dims(tape, x, cfg)?;
    if t != cfg.t {
        return Err(Error::config(format!("input has {t} days, model expects {}", cfg.t)));
    }
    let (ps, c, d) = (cfg.patch, cfg.c, cfg.embed_dim);
    let (h, w) = cfg.token_grid();
    let n = b * t;
    let x = tape.reshape(x, &[n, c, h, ps, w, ps])?;
    let x = tape.permute(x, &[0, 2, 4, 1, 3, 5])?;
    let x = tape.reshape(x, &[n, h, w, c * ps * ps])?;
    let tok = tape.linear(x, p.get("freq.embed.proj")?, None)?;
    let tok = tape.reshape(tok, &[b, t, h, w, d])?;
    let tok = tape.add(tok, p.get("freq.embed.pos")?)?;
    let tok = tape.permute(tok, &[0, 1, 4, 2, 3])?;
    tape.reshape(tok, &[n, d, h, w])
}

/// Tokens `[B·T, d, h, w]` → grid `[B, T, C, H, W]`.
pub fn depatchify<F: Real>(tape: &mut Tape<F>, p: &Bound, cfg: &FcnetConfig, tokens: Var, batch: usize) -> Result<Var> {
    let s = tape.shape(tokens).to_vec();
    let (ps, c) = (cfg.patch, cfg.c);
    let (n, h, w) = (s[0], s[2], s[3]);
    let t = n / batch;
    let x = tape.permute(tokens, &[0, 2, 3, 1])?;
    let x = tape.linear(x, p.get("freq.depatch.w")?, Some(p.get("freq.depatch.b")?))?;
    let x = tape.reshape(x, &[n, h, w, c, ps, ps])?;
    let x = tape.permute(x, &[0, 3, 1, 4, 2, 5])?;
    tape.reshape(x, &[batch, t, c, h * ps, w * ps])
}

/// Spectral filtering of every `(h, w)` plane with a Hermitian-symmetrised
/// complex filter, so the inverse transform stays real.
pub fn spectral_filter<F: Real>(tape: &mut Tape<F>, x: Var, filter: SpectralVar) -> Result<Var> {
    let f = dft2d_var(tape, x)?;
    let filt = hermitian_part_var(tape, filter)?;
    let g = complex_mul_var(tape, f, filt)?;
    idft2d_var(tape, g)
}

/// `FC(SiLU(DW(FC(s)))) + s` on channel-first tokens.
pub fn conv_ffn<F: Real>(tape: &mut Tape<F>, p: &Bound, prefix: &str, s: Var) -> Result<Var> {
    let k = |n: &str| p.get(&format!("{prefix}.{n}"));
    let hid = tape.shape(k("fc1.w")?)[0];
    let a = tape.conv2d(s, k("fc1.w")?, ConvSpec::default())?;
    let a = add_channel_bias(tape, a, k("fc1.b")?)?;
    let a = tape.conv2d(a, k("dw.w")?, ConvSpec::same(3).with_groups(hid))?;
    let a = add_channel_bias(tape, a, k("dw.b")?)?;
    let a = tape.silu(a)?;
    let a = tape.conv2d(a, k("fc2.w")?, ConvSpec::default())?;
    let a = add_channel_bias(tape, a, k("fc2.b")?)?;
    tape.add(a, s)
}

/// Broadcast a `[C]` bias over `[N, C, H, W]`.
pub fn add_channel_bias<F: Real>(tape: &mut Tape<F>, x: Var, b: Var) -> Result<Var> {
    let c = tape.shape(b)[0];
    let b = tape.reshape(b, &[c, 1, 1])?;
    tape.add(x, b)
}

pub fn affb_forward<F: Real>(tape: &mut Tape<F>, p: &Bound, block: usize, tokens: Var) -> Result<Var> {
    let prefix = format!("freq.affb.{block}");
    let filter = SpectralVar {
        re: p.get(&format!("{prefix}.filter_re"))?,
        im: p.get(&format!("{prefix}.filter_im"))?,
    };
    let s = spectral_filter(tape, tokens, filter).map_err(|e| e.at(&prefix))?;
    conv_ffn(tape, p, &prefix, s).map_err(|e| e.at(&prefix))
}

/// Per-pixel linear map `[B, T, C, H, W]` → `[B, T', C, H, W]`.
fn time_project<F: Real>(tape: &mut Tape<F>, p: &Bound, x: Var) -> Result<Var> {
    let x = tape.permute(x, &[0, 2, 3, 4, 1])?;
    let x = tape.linear(x, p.get("freq.time.w")?, Some(p.get("freq.time.b")?))?;
    tape.permute(x, &[0, 4, 1, 2, 3])
}

/// `S_out` for a batch `[B, T, C, H, W]`, shaped `[B, T', C, H, W]`.
pub fn freq_branch_forward<F: Real>(tape: &mut Tape<F>, p: &Bound, cfg: &FcnetConfig, x: Var) -> Result<Var> {
    if cfg.affb_blocks == 0 {
        return Err(Error::config("the AFFB stack needs at least one block"));
    }
    if cfg.t_prime != cfg.t && !cfg.time_projection {
        return Err(Error::config(format!(
            "T' = {} differs from T = {} without a time projection",
            cfg.t_prime, cfg.t
        )));
    }
    let batch = tape.shape(x)[0];
    let mut tok = patch_embed(tape, p, cfg, x).map_err(|e| e.at("freq.embed"))?;
    for l in 0..cfg.affb_blocks {
        tok = affb_forward(tape, p, l, tok)?;
    }
    let out = depatchify(tape, p, cfg, tok, batch).map_err(|e| e.at("freq.depatch"))?;
    if cfg.time_projection {
        time_project(tape, p, out).map_err(|e| e.at("freq.time"))
    } else {
        Ok(out)
    }
}
