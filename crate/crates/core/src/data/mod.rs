// SPDX-License-Identifier: Apache-2.0

//! Sea-ice sequences, land/ocean masks, chronological splits and windowing.

mod sicg;
mod synth;

pub use sicg::{decode_sicg, encode_sicg, read_sicg, write_sicg, SICG_HEADER_LEN, SICG_MAGIC, SICG_VERSION};
pub use synth::synth_generate;

use std::ops::Range;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Binary land/ocean mask; `true` marks an ocean cell that metrics and
/// losses see.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    h: usize,
    w: usize,
    ocean: Vec<bool>,
}

impl Mask {
    pub fn new(h: usize, w: usize, ocean: Vec<bool>) -> Result<Self> {
        if ocean.len() != h * w {
            return Err(Error::dim(format!("mask of {} cells for a {h}×{w} grid", ocean.len())));
        }
        Ok(Mask { h, w, ocean })
    }

    pub fn all_ocean(h: usize, w: usize) -> Self {
        Mask {
            h,
            w,
            ocean: vec![true; h * w],
        }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn is_ocean(&self, cell: usize) -> bool {
        self.ocean[cell]
    }

    pub fn cells(&self) -> &[bool] {
        &self.ocean
    }

    pub fn ocean_count(&self) -> usize {
        self.ocean.iter().filter(|&&o| o).count()
    }

    /// `[H, W]` tensor of 1 (ocean) and 0 (land).
    pub fn to_tensor<F: Real>(&self) -> Tensor<F> {
        Tensor::new(
            &[self.h, self.w],
            self.ocean.iter().map(|&o| if o { F::one() } else { F::zero() }).collect(),
        )
        .expect("mask shape")
    }
}

/// Daily concentration fields `[T, C, H, W]` in `[0, 1]` with their mask.
/// Land cells hold exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SicSequence {
    data: Tensor<f32>,
    mask: Mask,
    start_day: u32,
}

impl SicSequence {
    /// Validating constructor: rank-4 data, single channel, values in
    /// `[0, 1]` on ocean and exactly 0 on land.
    pub fn new(data: Tensor<f32>, mask: Mask, start_day: u32) -> Result<Self> {
        let seq = Self::from_raw(data, mask, start_day)?;
        if let Some((i, v)) = seq.first_invalid() {
            return Err(Error::dim(format!("element {i} holds {v}, outside the SIC contract")));
        }
        Ok(seq)
    }

    /// Shape-checked constructor that does not enforce the value range.
    pub(crate) fn from_raw(data: Tensor<f32>, mask: Mask, start_day: u32) -> Result<Self> {
        let s = data.shape();
        if s.len() != 4 {
            return Err(Error::dim(format!("SIC sequence must be [T, C, H, W], got {s:?}")));
        }
        if s[1] != 1 {
            return Err(Error::dim(format!("SIC sequence carries a single variable, got C = {}", s[1])));
        }
        if s[2] != mask.h || s[3] != mask.w {
            return Err(Error::dim(format!(
                "grid {}×{} does not match mask {}×{}",
                s[2], s[3], mask.h, mask.w
            )));
        }
        Ok(SicSequence {
            data,
            mask,
            start_day,
        })
    }

    /// First element violating the value contract, if any.
    pub(crate) fn first_invalid(&self) -> Option<(usize, f32)> {
        let hw = self.mask.h * self.mask.w;
        self.data.data().iter().enumerate().find_map(|(i, &v)| {
            let ok = if self.mask.ocean[i % hw] {
                (0.0..=1.0).contains(&v)
            } else {
                v == 0.0
            };
            (!ok).then_some((i, v))
        })
    }

    /// Clamp into `[0, 1]` and zero land cells.
    pub fn sanitized(data: Tensor<f32>, mask: Mask, start_day: u32) -> Result<Self> {
        let hw = mask.h * mask.w;
        let mut data = data;
        for (i, v) in data.data_mut().iter_mut().enumerate() {
            *v = if mask.ocean[i % hw] { v.clamp(0.0, 1.0) } else { 0.0 };
        }
        Self::new(data, mask, start_day)
    }

    pub fn data(&self) -> &Tensor<f32> {
        &self.data
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn start_day(&self) -> u32 {
        self.start_day
    }

    pub fn days(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.mask.h
    }

    pub fn width(&self) -> usize {
        self.mask.w
    }

    /// Flattened `[C, H, W]` field for day offset `t`.
    pub fn day(&self, t: usize) -> &[f32] {
        let n = self.channels() * self.mask.h * self.mask.w;
        &self.data.data()[t * n..(t + 1) * n]
    }

    /// `len` consecutive days starting at offset `from`.
    pub fn slice_days(&self, from: usize, len: usize) -> Result<SicSequence> {
        if from + len > self.days() || len == 0 {
            return Err(Error::usage(format!(
                "day range {from}..{} outside a {}-day sequence",
                from + len,
                self.days()
            )));
        }
        let n = self.channels() * self.mask.h * self.mask.w;
        let mut shape = self.data.shape().to_vec();
        shape[0] = len;
        let data = Tensor::new(&shape, self.data.data()[from * n..(from + len) * n].to_vec())?;
        Ok(SicSequence {
            data,
            mask: self.mask.clone(),
            start_day: self.start_day + from as u32,
        })
    }

    /// Join sequences that follow one another day by day.
    pub fn concat(parts: &[SicSequence]) -> Result<SicSequence> {
        let first = parts.first().ok_or_else(|| Error::usage("concat of zero sequences"))?;
        let mut data = Vec::new();
        let mut next = first.start_day;
        for p in parts {
            if p.mask != first.mask {
                return Err(Error::dim("concat: masks differ"));
            }
            if p.start_day != next {
                return Err(Error::dim(format!(
                    "concat: expected day {next}, sequence starts at {}",
                    p.start_day
                )));
            }
            next += p.days() as u32;
            data.extend_from_slice(p.data.data());
        }
        let mut shape = first.data.shape().to_vec();
        shape[0] = parts.iter().map(|p| p.days()).sum();
        Ok(SicSequence {
            data: Tensor::new(&shape, data)?,
            mask: first.mask.clone(),
            start_day: first.start_day,
        })
    }
}

/// Chronological train/validation/test day ranges (offsets into an archive).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
    pub stride: usize,
}

/// Which part of a [`DatasetSplit`] to draw windows from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subset {
    Train,
    Val,
    Test,
}

impl DatasetSplit {
    pub fn new(train: Range<usize>, val: Range<usize>, test: Range<usize>, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::config("window stride must be positive"));
        }
        if train.start > train.end || val.start > val.end || test.start > test.end {
            return Err(Error::config("split ranges must not be reversed"));
        }
        if train.end > val.start || val.end > test.start {
            return Err(Error::config(format!(
                "split ranges must be disjoint and ordered: {train:?} < {val:?} < {test:?}"
            )));
        }
        Ok(DatasetSplit {
            train,
            val,
            test,
            stride,
        })
    }

    /// Two thirds for training, one sixth each for validation and test,
    /// mirroring a 20/5/5-year record.
    pub fn chronological(days: usize, stride: usize) -> Result<Self> {
        let train_end = days * 2 / 3;
        let val_end = train_end + (days - train_end) / 2;
        Self::new(0..train_end, train_end..val_end, val_end..days, stride)
    }

    pub fn range(&self, subset: Subset) -> Range<usize> {
        match subset {
            Subset::Train => self.train.clone(),
            Subset::Val => self.val.clone(),
            Subset::Test => self.test.clone(),
        }
    }

    /// Windows drawn from one subset at the split's stride.
    pub fn windows(
        &self,
        archive: &SicSequence,
        subset: Subset,
        t_in: usize,
        t_out: usize,
    ) -> Result<Vec<WindowPair>> {
        window_range(archive, self.range(subset), t_in, t_out, self.stride)
    }
}

/// One input/target pair: `x` covers days `[t−T+1, t]`, `y` days `[t+1, t+T']`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowPair {
    pub x: SicSequence,
    pub y: SicSequence,
}

/// Number of windows a range of `len` days yields.
pub fn window_count(len: usize, t_in: usize, t_out: usize, stride: usize) -> usize {
    if len < t_in + t_out || stride == 0 {
        0
    } else {
        (len - t_in - t_out) / stride + 1
    }
}

/// Sliding `(X, Y)` windows over the whole archive.
pub fn window(archive: &SicSequence, t_in: usize, t_out: usize, stride: usize) -> Result<Vec<WindowPair>> {
    window_range(archive, 0..archive.days(), t_in, t_out, stride)
}

/// Sliding windows confined to the day offsets in `range`, so that no pair
/// reaches across a split boundary.
pub fn window_range(
    archive: &SicSequence,
    range: Range<usize>,
    t_in: usize,
    t_out: usize,
    stride: usize,
) -> Result<Vec<WindowPair>> {
    if t_in == 0 || t_out == 0 || stride == 0 {
        return Err(Error::usage("window lengths and stride must be positive"));
    }
    if range.end > archive.days() {
        return Err(Error::usage(format!(
            "range {range:?} exceeds a {}-day archive",
            archive.days()
        )));
    }
    let len = range.end.saturating_sub(range.start);
    if len < t_in + t_out {
        return Err(Error::usage(format!(
            "{len} days cannot hold a {t_in} → {t_out} window"
        )));
    }
    (0..window_count(len, t_in, t_out, stride))
        .map(|k| {
            let from = range.start + k * stride;
            Ok(WindowPair {
                x: archive.slice_days(from, t_in)?,
                y: archive.slice_days(from + t_in, t_out)?,
            })
        })
        .collect()
}
