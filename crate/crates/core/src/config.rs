// SPDX-License-Identifier: Apache-2.0

//! JSON run configuration: model shape, training budget and ablation toggles.
//!
//! ```json
//! {
//!   "version": 1,
//!   "model": {"T": 14, "T_prime": 14, "C": 1, "H": 64, "W": 64, "patch": 4,
//!             "embed_dim": 64, "affb_blocks": 8, "hfeb_blocks": 8,
//!             "encoder_depth": 4, "lambda": 0.1},
//!   "train": {"steps": 2000, "batch": 4, "lr": 0.001, "seed": 0},
//!   "ablation": {"use_affb": true, "use_hfeb": true, "use_freq_loss": true}
//! }
//! ```
//!
//! Every key is optional and falls back to the defaults above; unknown keys
//! are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Ablation, FcnetConfig, FreqTarget};
use crate::trainer::TrainConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "T_prime")]
    pub t_prime: usize,
    #[serde(rename = "C")]
    pub c: usize,
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "W")]
    pub w: usize,
    pub patch: usize,
    pub embed_dim: usize,
    pub affb_blocks: usize,
    pub hfeb_blocks: usize,
    pub encoder_depth: usize,
    pub lambda: f64,
    pub hidden: usize,
    pub norm_groups: usize,
    pub reduction: usize,
    pub time_projection: bool,
    pub freq_target: FreqTarget,
}

impl Default for ModelSection {
    fn default() -> Self {
        let c = FcnetConfig::default();
        ModelSection {
            t: c.t,
            t_prime: c.t_prime,
            c: c.c,
            h: c.h,
            w: c.w,
            patch: c.patch,
            embed_dim: c.embed_dim,
            affb_blocks: c.affb_blocks,
            hfeb_blocks: c.hfeb_blocks,
            encoder_depth: c.encoder_depth,
            lambda: c.lambda,
            hidden: c.hidden,
            norm_groups: c.norm_groups,
            reduction: c.reduction,
            time_projection: c.time_projection,
            freq_target: c.freq_target,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub min_lr: f64,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    /// `null` disables clipping.
    pub clip_norm: Option<f64>,
    pub log_every: usize,
    pub val_every: usize,
    /// Day offset between consecutive training windows.
    pub window_stride: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            steps: t.steps,
            batch: t.batch,
            lr: t.lr,
            seed: t.seed,
            min_lr: t.min_lr,
            warmup_fraction: t.warmup_fraction,
            weight_decay: t.optimizer.weight_decay,
            clip_norm: t.clip_norm,
            log_every: t.log_every,
            val_every: t.val_every,
            window_stride: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "schema_version")]
    pub version: u32,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub ablation: Ablation,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: SCHEMA_VERSION,
            model: ModelSection::default(),
            train: TrainSection::default(),
            ablation: Ablation::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?;
        if cfg.version != SCHEMA_VERSION {
            return Err(Error::config(format!(
                "config: version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.version
            )));
        }
        cfg.model().validate()?;
        cfg.train().validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
        Self::from_json(&text).map_err(|e| e.at(&path.display().to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn model(&self) -> FcnetConfig {
        let m = &self.model;
        FcnetConfig {
            t: m.t,
            t_prime: m.t_prime,
            c: m.c,
            h: m.h,
            w: m.w,
            patch: m.patch,
            embed_dim: m.embed_dim,
            affb_blocks: m.affb_blocks,
            hfeb_blocks: m.hfeb_blocks,
            encoder_depth: m.encoder_depth,
            hidden: m.hidden,
            norm_groups: m.norm_groups,
            reduction: m.reduction,
            time_projection: m.time_projection,
            lambda: m.lambda,
            freq_target: m.freq_target,
            ablation: self.ablation,
        }
    }

    pub fn train(&self) -> TrainConfig {
        let t = &self.train;
        let mut tc = TrainConfig {
            steps: t.steps,
            batch: t.batch,
            lr: t.lr,
            min_lr: t.min_lr,
            warmup_fraction: t.warmup_fraction,
            clip_norm: t.clip_norm,
            seed: t.seed,
            log_every: t.log_every,
            val_every: t.val_every,
            ..TrainConfig::default()
        };
        tc.optimizer.weight_decay = t.weight_decay;
        tc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
        assert_eq!(RunConfig::default().model(), FcnetConfig::default());
    }

    #[test]
    fn unknown_key_is_named() {
        let e = RunConfig::from_json(r#"{"model": {"embed_dims": 8}}"#).unwrap_err();
        assert!(matches!(&e, Error::Config(m) if m.contains("embed_dims")), "{e}");
    }

    #[test]
    fn json_roundtrip() {
        let mut c = RunConfig::default();
        c.train.steps = 17;
        c.ablation.use_hfeb = false;
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }
}
