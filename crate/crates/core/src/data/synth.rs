// SPDX-License-Identifier: Apache-2.0

//! Synthetic daily sea-ice archive.
//!
//! The field is a central cap whose radius swings with a 365-day period,
//! perturbed by drifting Gaussian anomalies and by travelling band-limited
//! waves that only live near the edge. Land is an irregular outer ring.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Mask, SicSequence};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const YEAR: f64 = 365.0;
const LAND_FRACTION: f64 = 0.25;
const CAP_MEAN: f64 = 0.41;
const CAP_SWING: f64 = 0.29;
const EDGE_SCALE: f64 = 0.045;
const BLOB_STEP: f64 = 0.006;

struct Mode {
    kx: f64,
    ky: f64,
    phase: f64,
    omega: f64,
    amp: f64,
}

impl Mode {
    fn at(&self, x: f64, y: f64, t: f64) -> f64 {
        self.amp * (PI * (self.kx * x + self.ky * y) + self.phase + self.omega * t).cos()
    }
}

struct Blob {
    x: f64,
    y: f64,
    amp: f64,
    sigma: f64,
    period: f64,
    phase: f64,
}

fn modes(rng: &mut ChaCha8Rng, n: usize, k_lo: f64, k_hi: f64, omega: f64, total: f64) -> Vec<Mode> {
    let amp = total / (n as f64).sqrt();
    (0..n)
        .map(|_| {
            let k = rng.random_range(k_lo..k_hi);
            let dir = rng.random_range(0.0..2.0 * PI);
            Mode {
                kx: k * dir.cos(),
                ky: k * dir.sin(),
                phase: rng.random_range(0.0..2.0 * PI),
                omega: if omega > 0.0 { rng.random_range(0.5 * omega..omega) } else { 0.0 },
                amp,
            }
        })
        .collect()
}

fn land_mask(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Mask {
    let relief = modes(rng, 6, 1.0, 3.0, 0.0, 0.18);
    let mut score: Vec<(f64, usize)> = (0..h * w)
        .map(|cell| {
            let (x, y) = coords(cell, h, w);
            let r = (x * x + y * y).sqrt();
            let bump: f64 = relief.iter().map(|m| m.at(x, y, 0.0)).sum();
            (r + bump, cell)
        })
        .collect();
    score.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let land = ((h * w) as f64 * LAND_FRACTION).round() as usize;
    let mut ocean = vec![true; h * w];
    for &(_, cell) in &score[..land] {
        ocean[cell] = false;
    }
    Mask::new(h, w, ocean).expect("mask extent")
}

fn coords(cell: usize, h: usize, w: usize) -> (f64, f64) {
    let (i, j) = (cell / w, cell % w);
    (
        (j as f64 + 0.5) / w as f64 * 2.0 - 1.0,
        (i as f64 + 0.5) / h as f64 * 2.0 - 1.0,
    )
}

/// Deterministic archive of `days` daily fields on an `h × w` grid.
pub fn synth_generate(days: usize, h: usize, w: usize, seed: u64) -> Result<SicSequence> {
    if !h.is_power_of_two() || !w.is_power_of_two() || h < 4 || w < 4 {
        return Err(Error::config(format!(
            "synthetic grid must be powers of two of at least 4, got {h}×{w}"
        )));
    }
    if days == 0 {
        return Err(Error::config("synthetic archive needs at least one day"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = land_mask(h, w, &mut rng);

    let lobes = [
        (2.0, rng.random_range(0.06..0.12), rng.random_range(0.0..2.0 * PI)),
        (3.0, rng.random_range(0.03..0.07), rng.random_range(0.0..2.0 * PI)),
    ];
    let waves = modes(&mut rng, 8, 4.0, 8.0, 0.06, 0.35);
    let n_blobs = rng.random_range(2..=5);
    let mut blobs: Vec<Blob> = (0..n_blobs)
        .map(|_| {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            Blob {
                x: rng.random_range(-0.6..0.6),
                y: rng.random_range(-0.6..0.6),
                amp: sign * rng.random_range(0.12..0.25),
                sigma: rng.random_range(0.1..0.2),
                period: rng.random_range(40.0..120.0),
                phase: rng.random_range(0.0..2.0 * PI),
            }
        })
        .collect();
    let step = Normal::new(0.0, BLOB_STEP).expect("finite step");

    let xy: Vec<(f64, f64)> = (0..h * w).map(|c| coords(c, h, w)).collect();
    let mut data = Vec::with_capacity(days * h * w);
    for day in 0..days {
        let t = day as f64;
        let season = (2.0 * PI * t / YEAR).cos();
        let radius = CAP_MEAN + CAP_SWING * season;
        let interior = 0.9 + 0.05 * season;
        for (cell, &(x, y)) in xy.iter().enumerate() {
            if !mask.is_ocean(cell) {
                data.push(0.0f32);
                continue;
            }
            let r = (x * x + y * y).sqrt();
            let theta = y.atan2(x);
            let shape: f64 = lobes.iter().map(|&(k, a, p)| a * (k * theta + p).cos()).sum();
            let base = interior / (1.0 + ((r * (1.0 + shape) - radius) / EDGE_SCALE).exp());
            let edge = 4.0 * base * (1.0 - base);
            let wave: f64 = waves.iter().map(|m| m.at(x, y, t)).sum();
            let anomaly: f64 = blobs
                .iter()
                .map(|b| {
                    let d2 = (x - b.x).powi(2) + (y - b.y).powi(2);
                    let pulse = 0.75 + 0.25 * (2.0 * PI * t / b.period + b.phase).sin();
                    b.amp * pulse * (-d2 / (2.0 * b.sigma * b.sigma)).exp()
                })
                .sum();
            data.push((base + edge * wave + (0.25 + 0.75 * base) * anomaly).clamp(0.0, 1.0) as f32);
        }
        for b in &mut blobs {
            b.x = reflect(b.x + step.sample(&mut rng));
            b.y = reflect(b.y + step.sample(&mut rng));
        }
    }
    SicSequence::new(Tensor::new(&[days, 1, h, w], data)?, mask, 0)
}

fn reflect(v: f64) -> f64 {
    const LIM: f64 = 0.8;
    if v > LIM {
        2.0 * LIM - v
    } else if v < -LIM {
        -2.0 * LIM - v
    } else {
        v
    }
}
