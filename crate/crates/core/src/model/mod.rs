// SPDX-License-Identifier: Apache-2.0

//! Full network: `Y = refine(F_out + S_out)` with ablation toggles,
//! deterministic initialisation and checkpoints.

mod checkpoint;
mod config;
mod params;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CKPT_MAGIC, CKPT_VERSION};
pub use config::{fnv1a, strided_block, Ablation, FcnetConfig, FreqTarget};
pub use params::{Bound, Init, ModelParams, ParamSpec};

use crate::conv_branch::{self, conv_branch_forward};
use crate::error::{Error, Result};
use crate::freq_branch::{self, add_channel_bias, freq_branch_forward};
use crate::tensor::{ConvSpec, Real, Tape, Tensor, Var};

/// Every parameter of the network in a stable order.
pub fn param_specs(cfg: &FcnetConfig) -> Vec<ParamSpec> {
    let mut v = freq_branch::param_specs(cfg);
    v.extend(conv_branch::param_specs(cfg));
    let ch = cfg.t_prime * cfg.c;
    v.extend([
        ParamSpec::new("refine.dw1.w", &[ch, 1, 3, 3], Init::fan_in(9)),
        ParamSpec::new("refine.dw1.b", &[ch], Init::Const(0.0)),
        ParamSpec::new("refine.dw2.w", &[ch, 1, 3, 3], Init::normal(0.02)),
        ParamSpec::new("refine.dw2.b", &[ch], Init::Const(0.0)),
    ]);
    v
}

pub fn init_params(cfg: &FcnetConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    ModelParams::from_specs(&param_specs(cfg), seed, cfg.fingerprint())
}

/// Refuse parameters built for another configuration.
pub fn check_params(params: &ModelParams, cfg: &FcnetConfig) -> Result<()> {
    if params.fingerprint() != cfg.fingerprint() {
        return Err(Error::config(format!(
            "parameters belong to config {:08x}, model is {:08x}",
            params.fingerprint(),
            cfg.fingerprint()
        )));
    }
    params.check_against(&param_specs(cfg))
}

/// `Z + DW3(SiLU(DW3(Z)))` over `[B, T'·C, H, W]`.
pub fn refine<F: Real>(tape: &mut Tape<F>, p: &Bound, z: Var) -> Result<Var> {
    let ch = tape.shape(z)[1];
    let spec = ConvSpec::same(3).with_groups(ch);
    let a = tape.conv2d(z, p.get("refine.dw1.w")?, spec)?;
    let a = add_channel_bias(tape, a, p.get("refine.dw1.b")?)?;
    let a = tape.silu(a)?;
    let a = tape.conv2d(a, p.get("refine.dw2.w")?, spec)?;
    let a = add_channel_bias(tape, a, p.get("refine.dw2.b")?)?;
    tape.add(z, a)
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOut {
    /// Refined prediction `[B, T', C, H, W]`, unclamped.
    pub y: Var,
    /// Frequency-branch output, absent when AFFB is disabled.
    pub s_out: Option<Var>,
    pub f_out: Var,
}

impl ForwardOut {
    /// Tensor the frequency loss supervises, if any.
    pub fn freq_target(&self, cfg: &FcnetConfig) -> Option<Var> {
        match (cfg.freq_target, self.s_out) {
            (FreqTarget::FreqBranch, Some(s)) => Some(s),
            _ => Some(self.y),
        }
    }
}

/// Batched forward over `x: [B, T, C, H, W]`.
pub fn fcnet_forward_var<F: Real>(tape: &mut Tape<F>, p: &Bound, cfg: &FcnetConfig, x: Var) -> Result<ForwardOut> {
    let s = tape.shape(x).to_vec();
    if s.len() != 5 || s[1..] != [cfg.t, cfg.c, cfg.h, cfg.w] {
        return Err(Error::config(format!(
            "input {s:?} does not match [B, {}, {}, {}, {}]",
            cfg.t, cfg.c, cfg.h, cfg.w
        )));
    }
    if !tape.value(x).is_finite() {
        return Err(Error::numeric("input: non-finite value"));
    }
    let b = s[0];
    let f_out = conv_branch_forward(tape, p, cfg, x)?;
    let s_out = if cfg.ablation.use_affb {
        Some(freq_branch_forward(tape, p, cfg, x)?)
    } else {
        None
    };
    let fused = match s_out {
        Some(s) => tape.add(f_out, s).map_err(|e| e.at("fuse"))?,
        None => f_out,
    };
    let ch = cfg.t_prime * cfg.c;
    let z = tape.reshape(fused, &[b, ch, cfg.h, cfg.w])?;
    let y = refine(tape, p, z).map_err(|e| e.at("refine"))?;
    let y = tape.reshape(y, &[b, cfg.t_prime, cfg.c, cfg.h, cfg.w])?;
    Ok(ForwardOut { y, s_out, f_out })
}

/// Inference forward on plain tensors. Accepts `[T, C, H, W]` or a batch
/// `[B, T, C, H, W]` and returns the matching unclamped prediction.
pub fn fcnet_forward(params: &ModelParams, cfg: &FcnetConfig, x: &Tensor<f32>) -> Result<Tensor<f32>> {
    check_params(params, cfg)?;
    let single = x.rank() == 4;
    let batched = if single {
        let mut shape = vec![1];
        shape.extend_from_slice(x.shape());
        x.clone().reshape(&shape)?
    } else {
        x.clone()
    };
    let mut tape = Tape::<f32>::new();
    let p = params.bind_frozen(&mut tape);
    let xv = tape.constant(batched);
    let out = fcnet_forward_var(&mut tape, &p, cfg, xv)?;
    let y = tape.value(out.y).clone();
    if single {
        y.index_axis0(0)
    } else {
        Ok(y)
    }
}
