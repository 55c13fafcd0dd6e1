// SPDX-License-Identifier: Apache-2.0

//! Forecast skill over masked grids: MAE, RMSE, NSE, and the ice-edge family
//! (SIE, IIEE, BACC).
//!
//! Fields are `[T, C, H, W]` tensors; a "day" is one leading index. Spatial
//! means are taken first, then the temporal mean.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::data::{Mask, SicSequence};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ice presence requires SIC strictly above this value.
pub const ICE_THRESHOLD: f32 = 0.15;
/// Area of one 25 km grid cell in km².
pub const CELL_AREA_KM2: f64 = 625.0;

pub const CSV_HEADER: &str = "day,mae,rmse,nse,bacc,sie_pred,sie_true";

/// Per-day values and their temporal mean.
#[derive(Clone, Debug, PartialEq)]
pub struct PerDay {
    pub days: Vec<f64>,
    pub mean: f64,
}

impl PerDay {
    fn from_days(days: Vec<f64>) -> Self {
        let mean = days.iter().sum::<f64>() / days.len() as f64;
        PerDay { days, mean }
    }
}

/// Boolean `[H, W]` grid, e.g. an ice map or the active region.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryGrid {
    h: usize,
    w: usize,
    cells: Vec<bool>,
}

impl BinaryGrid {
    pub fn new(h: usize, w: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != h * w {
            return Err(Error::dim(format!("{} cells for a {h}×{w} grid", cells.len())));
        }
        Ok(BinaryGrid { h, w, cells })
    }

    pub fn filled(h: usize, w: usize, value: bool) -> Self {
        BinaryGrid {
            h,
            w,
            cells: vec![value; h * w],
        }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.cells[y * self.w + x]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    fn same_grid(&self, other: &BinaryGrid) -> Result<()> {
        if (self.h, self.w) != (other.h, other.w) {
            return Err(Error::dim(format!(
                "grids {}×{} and {}×{} differ",
                self.h, self.w, other.h, other.w
            )));
        }
        Ok(())
    }

    fn union_with(&mut self, other: &BinaryGrid) {
        for (a, &b) in self.cells.iter_mut().zip(&other.cells) {
            *a |= b;
        }
    }
}

fn check_pair(pred: &Tensor<f32>, truth: &Tensor<f32>, mask: &Mask) -> Result<(usize, usize)> {
    if pred.shape() != truth.shape() {
        return Err(Error::dim(format!("pred {:?} vs truth {:?}", pred.shape(), truth.shape())));
    }
    let s = pred.shape();
    if s.len() != 4 || s[2] != mask.height() || s[3] != mask.width() {
        return Err(Error::dim(format!(
            "fields {s:?} do not match a [T, C, {}, {}] layout",
            mask.height(),
            mask.width()
        )));
    }
    if mask.ocean_count() == 0 {
        return Err(Error::usage("metric over an empty mask"));
    }
    Ok((s[0], s[1] * s[2] * s[3]))
}

/// Masked per-day mean of `f(p − g)`.
fn per_day(pred: &Tensor<f32>, truth: &Tensor<f32>, mask: &Mask, f: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
    let (days, stride) = check_pair(pred, truth, mask)?;
    let hw = mask.cells().len();
    let ocean = mask.cells();
    let mut out = Vec::with_capacity(days);
    for t in 0..days {
        let p = &pred.data()[t * stride..(t + 1) * stride];
        let g = &truth.data()[t * stride..(t + 1) * stride];
        let (mut acc, mut n) = (0.0f64, 0usize);
        for (i, (&a, &b)) in p.iter().zip(g).enumerate() {
            if ocean[i % hw] {
                acc += f(a as f64 - b as f64);
                n += 1;
            }
        }
        out.push(acc / n as f64);
    }
    Ok(out)
}

pub fn mae(pred: &Tensor<f32>, truth: &Tensor<f32>, mask: &Mask) -> Result<PerDay> {
    per_day(pred, truth, mask, f64::abs).map(PerDay::from_days)
}

pub fn rmse(pred: &Tensor<f32>, truth: &Tensor<f32>, mask: &Mask) -> Result<PerDay> {
    let mse = per_day(pred, truth, mask, |d| d * d)?;
    Ok(PerDay::from_days(mse.into_iter().map(f64::sqrt).collect()))
}

/// Nash–Sutcliffe efficiency over all masked space-time cells.
pub fn nse(pred: &Tensor<f32>, truth: &Tensor<f32>, mask: &Mask) -> Result<f64> {
    check_pair(pred, truth, mask)?;
    let hw = mask.cells().len();
    let ocean = mask.cells();
    let cells = || {
        pred.data()
            .iter()
            .zip(truth.data())
            .enumerate()
            .filter(|(i, _)| ocean[i % hw])
            .map(|(_, (&p, &g))| (p as f64, g as f64))
    };
    let (sum, n) = cells().fold((0.0, 0usize), |(s, n), (_, g)| (s + g, n + 1));
    let mean = sum / n as f64;
    let (err, var) = cells().fold((0.0, 0.0), |(e, v), (p, g)| (e + (p - g) * (p - g), v + (g - mean) * (g - mean)));
    if var == 0.0 {
        return Err(Error::UndefinedMetric("NSE needs a truth field with nonzero variance".into()));
    }
    Ok(1.0 - err / var)
}

/// Ice map of one `[H, W]` plane: ocean cells with SIC above `threshold`.
pub fn ice_edge(plane: &[f32], mask: &Mask, threshold: f32) -> Result<BinaryGrid> {
    if plane.len() != mask.cells().len() {
        return Err(Error::dim(format!("plane of {} cells vs mask of {}", plane.len(), mask.cells().len())));
    }
    let cells = plane
        .iter()
        .zip(mask.cells())
        .map(|(&v, &o)| o && v > threshold)
        .collect();
    BinaryGrid::new(mask.height(), mask.width(), cells)
}

/// Integrated ice-edge error: area where the two ice maps disagree.
pub fn iiee(pred: &BinaryGrid, truth: &BinaryGrid, cell_area: f64) -> Result<f64> {
    pred.same_grid(truth)?;
    let n = pred.cells.iter().zip(&truth.cells).filter(|(a, b)| a != b).count();
    Ok(n as f64 * cell_area)
}

/// `(1 − IIEE / active_area) · 100`.
pub fn bacc_from_areas(iiee: f64, active_area: f64) -> Result<f64> {
    if active_area <= 0.0 {
        return Err(Error::UndefinedMetric("BACC over an empty active region".into()));
    }
    if iiee > active_area {
        return Err(Error::usage(format!("IIEE {iiee} exceeds the active area {active_area}")));
    }
    Ok((1.0 - iiee / active_area) * 100.0)
}

/// BACC with the edge error counted inside `active` only.
pub fn bacc(pred: &BinaryGrid, truth: &BinaryGrid, active: &BinaryGrid, cell_area: f64) -> Result<f64> {
    pred.same_grid(truth)?;
    pred.same_grid(active)?;
    let n = (0..pred.cells.len())
        .filter(|&i| active.cells[i] && pred.cells[i] != truth.cells[i])
        .count();
    bacc_from_areas(n as f64 * cell_area, active.count() as f64 * cell_area)
}

/// Sea-ice extent of one plane.
pub fn sie(plane: &[f32], mask: &Mask, cell_area: f64, threshold: f32) -> Result<f64> {
    Ok(ice_edge(plane, mask, threshold)?.count() as f64 * cell_area)
}

/// Union of daily ice maps over a record; the region BACC is scored on.
pub fn active_region(record: &SicSequence, threshold: f32) -> Result<BinaryGrid> {
    let mask = record.mask();
    let mut acc = BinaryGrid::filled(mask.height(), mask.width(), false);
    for t in 0..record.days() {
        acc.union_with(&ice_edge(record.day(t), mask, threshold)?);
    }
    Ok(acc)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DayMetrics {
    pub day: usize,
    pub mae: f64,
    pub rmse: f64,
    /// `None` when that day's truth has zero variance.
    pub nse: Option<f64>,
    pub bacc: f64,
    pub sie_pred: f64,
    pub sie_true: f64,
}

/// Per-lead-day rows plus the aggregate over the evaluation window.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<DayMetrics>,
    pub mae: f64,
    pub rmse: f64,
    pub nse: f64,
    pub bacc: f64,
    pub sie_pred: f64,
    pub sie_true: f64,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), |v| v.to_string())
}

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.day,
                r.mae,
                r.rmse,
                fmt_opt(r.nse),
                r.bacc,
                r.sie_pred,
                r.sie_true
            );
        }
        let _ = writeln!(
            s,
            "ALL,{},{},{},{},{},{}",
            self.mae, self.rmse, self.nse, self.bacc, self.sie_pred, self.sie_true
        );
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io_at(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io_at(path, e))
    }
}

/// Full evaluation of a single-channel forecast against the truth.
pub fn evaluate(pred: &Tensor<f32>, truth: &Tensor<f32>, mask: &Mask, active: &BinaryGrid) -> Result<MetricsReport> {
    let (days, _) = check_pair(pred, truth, mask)?;
    if pred.shape()[1] != 1 {
        return Err(Error::dim(format!("ice-edge metrics need C = 1, got {}", pred.shape()[1])));
    }
    let m = mae(pred, truth, mask)?;
    let r = rmse(pred, truth, mask)?;
    let pooled = nse(pred, truth, mask)?;
    let hw = mask.cells().len();
    let mut rows = Vec::with_capacity(days);
    for t in 0..days {
        let p = &pred.data()[t * hw..(t + 1) * hw];
        let g = &truth.data()[t * hw..(t + 1) * hw];
        let pb = ice_edge(p, mask, ICE_THRESHOLD)?;
        let gb = ice_edge(g, mask, ICE_THRESHOLD)?;
        let day_p = Tensor::new(&[1, 1, mask.height(), mask.width()], p.to_vec())?;
        let day_g = Tensor::new(&[1, 1, mask.height(), mask.width()], g.to_vec())?;
        let day_nse = match nse(&day_p, &day_g, mask) {
            Ok(v) => Some(v),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        rows.push(DayMetrics {
            day: t,
            mae: m.days[t],
            rmse: r.days[t],
            nse: day_nse,
            bacc: bacc(&pb, &gb, active, CELL_AREA_KM2)?,
            sie_pred: pb.count() as f64 * CELL_AREA_KM2,
            sie_true: gb.count() as f64 * CELL_AREA_KM2,
        });
    }
    let mean = |f: fn(&DayMetrics) -> f64| rows.iter().map(f).sum::<f64>() / days as f64;
    Ok(MetricsReport {
        mae: m.mean,
        rmse: r.mean,
        nse: pooled,
        bacc: mean(|r| r.bacc),
        sie_pred: mean(|r| r.sie_pred),
        sie_true: mean(|r| r.sie_true),
        rows,
    })
}
