// SPDX-License-Identifier: Apache-2.0

//! Inference: one forecast window, or several chained by feeding each
//! window's output back in as the next input.

use crate::data::SicSequence;
use crate::error::{Error, Result};
use crate::model::{fcnet_forward, FcnetConfig, ModelParams};
use crate::tensor::Tensor;

/// Forecast the `T'` days after `x`, clamped to `[0, 1]` with land zeroed.
pub fn predict(params: &ModelParams, cfg: &FcnetConfig, x: &SicSequence) -> Result<SicSequence> {
    if x.days() != cfg.t {
        return Err(Error::config(format!("input has {} days, the model expects {}", x.days(), cfg.t)));
    }
    let y = fcnet_forward(params, cfg, x.data())?;
    SicSequence::sanitized(y, x.mask().clone(), x.start_day() + cfg.t as u32)
}

/// Forecasts for several inputs sharing one grid, run as a single batch.
pub fn predict_batch(params: &ModelParams, cfg: &FcnetConfig, xs: &[SicSequence]) -> Result<Vec<SicSequence>> {
    if xs.is_empty() {
        return Ok(Vec::new());
    }
    if let Some(x) = xs.iter().find(|x| x.days() != cfg.t) {
        return Err(Error::config(format!("input has {} days, the model expects {}", x.days(), cfg.t)));
    }
    let batch = Tensor::stack(&xs.iter().map(|x| x.data().clone()).collect::<Vec<_>>())?;
    let y = fcnet_forward(params, cfg, &batch)?;
    xs.iter()
        .enumerate()
        .map(|(i, x)| SicSequence::sanitized(y.index_axis0(i)?, x.mask().clone(), x.start_day() + cfg.t as u32))
        .collect()
}

/// `steps + 1` chained windows, `(steps + 1)·T'` days in total.
pub fn predict_recursive(params: &ModelParams, cfg: &FcnetConfig, x: &SicSequence, steps: usize) -> Result<SicSequence> {
    if cfg.t_prime != cfg.t {
        return Err(Error::config(format!(
            "recursive forecasting needs T' = T, got T' = {} and T = {}",
            cfg.t_prime, cfg.t
        )));
    }
    let mut windows = Vec::with_capacity(steps + 1);
    let mut input = x.clone();
    for _ in 0..=steps {
        let y = predict(params, cfg, &input)?;
        input = y.clone();
        windows.push(y);
    }
    SicSequence::concat(&windows)
}
