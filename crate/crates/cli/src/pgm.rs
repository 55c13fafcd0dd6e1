// SPDX-License-Identifier: Apache-2.0

//! Binary greyscale (P5) images.

use std::path::Path;

use fcnet_core::{Error, Result};

/// Limits of the difference colour scale.
pub const DIFF_RANGE: f32 = 0.2;

pub fn encode(h: usize, w: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn write(path: &Path, h: usize, w: usize, pixels: &[u8]) -> Result<()> {
    std::fs::write(path, encode(h, w, pixels)).map_err(|e| Error::io_at(path, e))
}

/// SIC in `[0, 1]` to a grey level.
pub fn level(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Signed difference, `[−0.2, 0.2]` onto `[0, 255]`; zero sits at 128.
pub fn diff_level(d: f32) -> u8 {
    (((d + DIFF_RANGE) / (2.0 * DIFF_RANGE)).clamp(0.0, 1.0) * 255.0).round() as u8
}
