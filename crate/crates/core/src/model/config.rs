// SPDX-License-Identifier: Apache-2.0

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::DEFAULT_LAMBDA;

/// Which tensor the frequency loss compares against the truth spectrum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FreqTarget {
    #[default]
    FreqBranch,
    Prediction,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    pub use_affb: bool,
    pub use_hfeb: bool,
    pub use_freq_loss: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            use_affb: true,
            use_hfeb: true,
            use_freq_loss: true,
        }
    }
}

impl Ablation {
    pub fn label(&self) -> String {
        let mut off = Vec::new();
        if !self.use_affb {
            off.push("AFFB");
        }
        if !self.use_hfeb {
            off.push("HFEB");
        }
        if !self.use_freq_loss {
            off.push("L_freq");
        }
        if off.is_empty() {
            "full".into()
        } else {
            format!("w/o {}", off.join("&"))
        }
    }
}

/// Architecture and objective hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct FcnetConfig {
    pub t: usize,
    pub t_prime: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub patch: usize,
    pub embed_dim: usize,
    pub affb_blocks: usize,
    pub hfeb_blocks: usize,
    pub encoder_depth: usize,
    /// Channel width of the convolutional branch.
    pub hidden: usize,
    pub norm_groups: usize,
    /// Channel reduction of the squeeze-excite gate.
    pub reduction: usize,
    /// Per-pixel linear map over time in the frequency branch, needed when `T' ≠ T`.
    pub time_projection: bool,
    pub lambda: f64,
    pub freq_target: FreqTarget,
    pub ablation: Ablation,
}

impl Default for FcnetConfig {
    fn default() -> Self {
        FcnetConfig {
            t: 14,
            t_prime: 14,
            c: 1,
            h: 64,
            w: 64,
            patch: 4,
            embed_dim: 64,
            affb_blocks: 8,
            hfeb_blocks: 8,
            encoder_depth: 4,
            hidden: 32,
            norm_groups: 8,
            reduction: 4,
            time_projection: false,
            lambda: DEFAULT_LAMBDA,
            freq_target: FreqTarget::FreqBranch,
            ablation: Ablation::default(),
        }
    }
}

/// Encoder blocks that halve resolution.
pub fn strided_block(i: usize) -> bool {
    i == 1 || i == 2
}

impl FcnetConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("T", self.t),
            ("T_prime", self.t_prime),
            ("C", self.c),
            ("patch", self.patch),
            ("embed_dim", self.embed_dim),
            ("encoder_depth", self.encoder_depth),
            ("hidden", self.hidden),
            ("norm_groups", self.norm_groups),
            ("reduction", self.reduction),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if !self.h.is_power_of_two() || !self.w.is_power_of_two() {
            return Err(Error::config(format!("grid {}×{} must be powers of two", self.h, self.w)));
        }
        if self.h % self.patch != 0 || self.w % self.patch != 0 {
            return Err(Error::config(format!(
                "patch {} does not divide grid {}×{}",
                self.patch, self.h, self.w
            )));
        }
        if self.affb_blocks == 0 {
            return Err(Error::config("the AFFB stack needs at least one block"));
        }
        let stride = self.total_stride();
        if self.h % (2 * stride) != 0 || self.w % (2 * stride) != 0 {
            return Err(Error::config(format!(
                "grid {}×{} must be divisible by twice the encoder stride {stride}",
                self.h, self.w
            )));
        }
        if self.hidden % self.norm_groups != 0 {
            return Err(Error::config(format!(
                "norm_groups {} does not divide hidden {}",
                self.norm_groups, self.hidden
            )));
        }
        if self.hidden % self.reduction != 0 {
            return Err(Error::config(format!(
                "reduction {} does not divide hidden {}",
                self.reduction, self.hidden
            )));
        }
        if self.t_prime != self.t && !self.time_projection {
            return Err(Error::config(format!(
                "T' = {} differs from T = {} without a time projection",
                self.t_prime, self.t
            )));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::config(format!("lambda must be a finite non-negative number, got {}", self.lambda)));
        }
        Ok(())
    }

    /// Frequency-loss weight actually applied: zero when the term is ablated.
    pub fn effective_lambda(&self) -> f64 {
        if self.ablation.use_freq_loss {
            self.lambda
        } else {
            0.0
        }
    }

    pub fn total_stride(&self) -> usize {
        (0..self.encoder_depth).filter(|&i| strided_block(i)).map(|_| 2).product()
    }

    pub fn token_grid(&self) -> (usize, usize) {
        (self.h / self.patch, self.w / self.patch)
    }

    /// Stable `key=value` rendering of every hyperparameter.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        let fields: [(&str, String); 17] = [
            ("T", self.t.to_string()),
            ("T_prime", self.t_prime.to_string()),
            ("C", self.c.to_string()),
            ("H", self.h.to_string()),
            ("W", self.w.to_string()),
            ("patch", self.patch.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("affb_blocks", self.affb_blocks.to_string()),
            ("hfeb_blocks", self.hfeb_blocks.to_string()),
            ("encoder_depth", self.encoder_depth.to_string()),
            ("hidden", self.hidden.to_string()),
            ("norm_groups", self.norm_groups.to_string()),
            ("reduction", self.reduction.to_string()),
            ("time_projection", self.time_projection.to_string()),
            ("lambda", format!("{:?}", self.lambda)),
            (
                "freq_target",
                match self.freq_target {
                    FreqTarget::FreqBranch => "freq_branch".into(),
                    FreqTarget::Prediction => "prediction".into(),
                },
            ),
            (
                "ablation",
                format!(
                    "{},{},{}",
                    self.ablation.use_affb, self.ablation.use_hfeb, self.ablation.use_freq_loss
                ),
            ),
        ];
        for (k, v) in fields {
            writeln!(s, "{k}={v}").unwrap();
        }
        s
    }

    pub fn fingerprint(&self) -> u32 {
        fnv1a(self.canonical_text().as_bytes())
    }
}

/// 32-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u32 {
    bytes.iter().fold(0x811c_9dc5u32, |h, &b| (h ^ b as u32).wrapping_mul(0x0100_0193))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a(b""), 0x811c9dc5);
        assert_eq!(fnv1a(b"a"), 0xe40c292c);
        assert_eq!(fnv1a(b"foobar"), 0xbf9cf968);
    }

    #[test]
    fn default_is_valid_and_fingerprint_tracks_changes() {
        let c = FcnetConfig::default();
        c.validate().unwrap();
        assert_eq!(c.total_stride(), 4);
        let mut d = c.clone();
        d.ablation.use_hfeb = false;
        assert_ne!(c.fingerprint(), d.fingerprint());
        assert_eq!(c.fingerprint(), FcnetConfig::default().fingerprint());
    }

    #[test]
    fn validation_errors() {
        let bad = |f: fn(&mut FcnetConfig)| {
            let mut c = FcnetConfig::default();
            f(&mut c);
            matches!(c.validate(), Err(Error::Config(_)))
        };
        assert!(bad(|c| c.h = 48));
        assert!(bad(|c| c.patch = 3));
        assert!(bad(|c| c.affb_blocks = 0));
        assert!(bad(|c| c.t_prime = 7));
        assert!(bad(|c| c.norm_groups = 5));
        assert!(bad(|c| c.lambda = -1.0));
        let mut ok = FcnetConfig::default();
        ok.t_prime = 7;
        ok.time_projection = true;
        ok.validate().unwrap();
    }
}
