//! One- and two-dimensional histograms with half-open bins `[lo, hi)`.
//!
//! Values equal to `hi` go to overflow, values below `lo` and NaN go to
//! underflow.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Histogram1D {
    pub nbins: u32,
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
}

impl Histogram1D {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.underflow + self.overflow
    }
}

/// Where a single coordinate falls along an axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinSlot {
    Under,
    Bin(usize),
    Over,
}

/// Bin for `v` on an axis of `nbins` bins over `[lo, hi)`.
pub fn bin_slot(v: f64, nbins: u32, lo: f64, hi: f64) -> BinSlot {
    if v.is_nan() || v < lo {
        return BinSlot::Under;
    }
    if v >= hi {
        return BinSlot::Over;
    }
    let idx = ((v - lo) / (hi - lo) * nbins as f64).floor() as usize;
    // rounding can push values just below hi onto nbins
    BinSlot::Bin(idx.min(nbins as usize - 1))
}

pub fn build_hist1d(values: &[f64], nbins: u32, lo: f64, hi: f64) -> Histogram1D {
    assert!(
        nbins >= 1 && lo < hi,
        "axis parameters must be validated upstream"
    );
    let mut h = Histogram1D {
        nbins,
        lo,
        hi,
        counts: vec![0; nbins as usize],
        underflow: 0,
        overflow: 0,
    };
    for &v in values {
        match bin_slot(v, nbins, lo, hi) {
            BinSlot::Under => h.underflow += 1,
            BinSlot::Over => h.overflow += 1,
            BinSlot::Bin(i) => h.counts[i] += 1,
        }
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub nbins: u32,
    pub lo: f64,
    pub hi: f64,
}

/// Grid is row-major by y: cell `(ix, iy)` lives at `counts[iy * nx + ix]`.
///
/// A pair outside the grid is tallied once. If x is out of range it is
/// charged to the x under/overflow; otherwise to the y under/overflow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Histogram2D {
    pub x: Axis,
    pub y: Axis,
    pub counts: Vec<u64>,
    pub x_underflow: u64,
    pub x_overflow: u64,
    pub y_underflow: u64,
    pub y_overflow: u64,
}

impl Histogram2D {
    pub fn cell(&self, ix: usize, iy: usize) -> u64 {
        self.counts[iy * self.x.nbins as usize + ix]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>()
            + self.x_underflow
            + self.x_overflow
            + self.y_underflow
            + self.y_overflow
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("x has {x} values but y has {y}")]
pub struct LengthMismatch {
    pub x: usize,
    pub y: usize,
}

pub fn build_hist2d(
    xs: &[f64],
    ys: &[f64],
    x: Axis,
    y: Axis,
) -> Result<Histogram2D, LengthMismatch> {
    if xs.len() != ys.len() {
        return Err(LengthMismatch {
            x: xs.len(),
            y: ys.len(),
        });
    }
    assert!(x.nbins >= 1 && x.lo < x.hi && y.nbins >= 1 && y.lo < y.hi);
    let mut h = Histogram2D {
        x,
        y,
        counts: vec![0; x.nbins as usize * y.nbins as usize],
        x_underflow: 0,
        x_overflow: 0,
        y_underflow: 0,
        y_overflow: 0,
    };
    for (&vx, &vy) in xs.iter().zip(ys) {
        match (
            bin_slot(vx, x.nbins, x.lo, x.hi),
            bin_slot(vy, y.nbins, y.lo, y.hi),
        ) {
            (BinSlot::Under, _) => h.x_underflow += 1,
            (BinSlot::Over, _) => h.x_overflow += 1,
            (_, BinSlot::Under) => h.y_underflow += 1,
            (_, BinSlot::Over) => h.y_overflow += 1,
            (BinSlot::Bin(ix), BinSlot::Bin(iy)) => h.counts[iy * x.nbins as usize + ix] += 1,
        }
    }
    Ok(h)
}
