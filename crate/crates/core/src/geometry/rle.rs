use serde::{Deserialize, Serialize};

use super::{BoundingBox, ImageSize};
use crate::error::{Error, Result};

/// Dense binary mask, column-major: pixel `(x, y)` lives at `x * height + y`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitmap {
    size: ImageSize,
    bits: Vec<bool>,
}

impl Bitmap {
    pub fn new(size: ImageSize) -> Self {
        Self {
            size,
            bits: vec![false; size.area() as usize],
        }
    }

    /// Wraps column-major pixel data.
    pub fn from_column_major(size: ImageSize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() as u64 != size.area() {
            return Err(Error::Rle(format!(
                "bitmap has {} pixels, expected {}",
                bits.len(),
                size.area()
            )));
        }
        Ok(Self { size, bits })
    }

    pub fn size(&self) -> ImageSize {
        self.size
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    fn index(&self, x: u32, y: u32) -> usize {
        x as usize * self.size.height as usize + y as usize
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[self.index(x, y)]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let i = self.index(x, y);
        self.bits[i] = value;
    }

    pub fn count_ones(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }
}

/// Run-length mask over the column-major pixel order.
///
/// `counts` alternates background and foreground runs, starting with a
/// background run that may be empty. No other run is empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RleJson", into = "RleJson")]
pub struct RleMask {
    size: ImageSize,
    counts: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RleJson {
    /// `[height, width]`
    size: [u32; 2],
    counts: Vec<u32>,
}

impl TryFrom<RleJson> for RleMask {
    type Error = Error;

    fn try_from(v: RleJson) -> Result<Self> {
        let size = ImageSize::new(v.size[1], v.size[0])?;
        RleMask::from_counts(size, v.counts)
    }
}

impl From<RleMask> for RleJson {
    fn from(m: RleMask) -> Self {
        RleJson {
            size: [m.size.height, m.size.width],
            counts: m.counts,
        }
    }
}

/// Accumulates `(value, length)` segments into canonical counts.
struct RunBuilder {
    counts: Vec<u32>,
    current: bool,
}

impl RunBuilder {
    fn new() -> Self {
        Self {
            counts: vec![0],
            current: false,
        }
    }

    fn push(&mut self, value: bool, len: u32) {
        if len == 0 {
            return;
        }
        if value != self.current {
            self.counts.push(0);
            self.current = value;
        }
        *self.counts.last_mut().expect("builder starts with a run") += len;
    }

    fn finish(self, size: ImageSize) -> RleMask {
        RleMask {
            size,
            counts: self.counts,
        }
    }
}

impl RleMask {
    /// Validates raw counts against the canonical form.
    pub fn from_counts(size: ImageSize, counts: Vec<u32>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::Rle("counts must not be empty".into()));
        }
        if let Some(pos) = counts.iter().skip(1).position(|&c| c == 0) {
            return Err(Error::Rle(format!("zero-length run at position {}", pos + 1)));
        }
        if counts.len() == 1 && counts[0] == 0 {
            return Err(Error::Rle("single empty run".into()));
        }
        let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
        if total != size.area() {
            return Err(Error::Rle(format!(
                "counts sum to {total}, expected {}x{} = {}",
                size.width,
                size.height,
                size.area()
            )));
        }
        Ok(Self { size, counts })
    }

    pub fn empty(size: ImageSize) -> Self {
        Self {
            size,
            counts: vec![size.area() as u32],
        }
    }

    pub fn full(size: ImageSize) -> Self {
        Self {
            size,
            counts: vec![0, size.area() as u32],
        }
    }

    pub fn encode(bitmap: &Bitmap) -> Self {
        let mut builder = RunBuilder::new();
        let mut run_value = false;
        let mut run_len = 0u32;
        for &b in bitmap.bits() {
            if b != run_value {
                builder.push(run_value, run_len);
                run_value = b;
                run_len = 0;
            }
            run_len += 1;
        }
        builder.push(run_value, run_len);
        builder.finish(bitmap.size())
    }

    pub fn decode(&self) -> Bitmap {
        let mut bits = Vec::with_capacity(self.size.area() as usize);
        for (i, &c) in self.counts.iter().enumerate() {
            bits.extend(std::iter::repeat_n(i % 2 == 1, c as usize));
        }
        Bitmap {
            size: self.size,
            bits,
        }
    }

    /// Rasterizes an integer box, clipped to the image.
    pub fn from_box(b: &BoundingBox, size: ImageSize) -> Self {
        let c = b.clamp(size);
        let h = size.height;
        let mut builder = RunBuilder::new();
        for x in 0..size.width {
            let xi = i64::from(x);
            if c.h > 0 && xi >= c.x && xi < c.right() {
                builder.push(false, c.y as u32);
                builder.push(true, c.h as u32);
                builder.push(false, h - c.bottom() as u32);
            } else {
                builder.push(false, h);
            }
        }
        builder.finish(size)
    }

    pub fn size(&self) -> ImageSize {
        self.size
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| u64::from(c)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.len() == 1
    }

    pub fn complement(&self) -> Self {
        let counts = if self.counts[0] == 0 {
            self.counts[1..].to_vec()
        } else {
            std::iter::once(0).chain(self.counts.iter().copied()).collect()
        };
        Self {
            size: self.size,
            counts,
        }
    }

    /// Pixelwise boolean combination, computed on runs.
    pub fn combine(&self, other: &RleMask, op: impl Fn(bool, bool) -> bool) -> Result<RleMask> {
        self.size.ensure_same(&other.size)?;
        let mut builder = RunBuilder::new();
        walk_runs(self, other, |a, b, len| builder.push(op(a, b), len));
        Ok(builder.finish(self.size))
    }

    pub fn intersection_area(&self, other: &RleMask) -> Result<u64> {
        self.size.ensure_same(&other.size)?;
        let mut area = 0u64;
        walk_runs(self, other, |a, b, len| {
            if a && b {
                area += u64::from(len);
            }
        });
        Ok(area)
    }

    /// Fraction of `b`'s pixels covered by this mask; 0 for an empty box.
    pub fn box_coverage(&self, b: &BoundingBox) -> f64 {
        let boxed = RleMask::from_box(b, self.size);
        let area = boxed.area();
        if area == 0 {
            return 0.0;
        }
        let inter = self.intersection_area(&boxed).expect("same size by construction");
        inter as f64 / area as f64
    }

    /// Tight bounding box of the foreground, if any.
    pub fn bbox(&self) -> Option<BoundingBox> {
        let h = u64::from(self.size.height);
        let (mut x0, mut y0, mut x1, mut y1) = (u64::MAX, u64::MAX, 0u64, 0u64);
        let mut pos = 0u64;
        for (i, &c) in self.counts.iter().enumerate() {
            let c = u64::from(c);
            if i % 2 == 1 {
                let first = pos;
                let last = pos + c - 1;
                let (cx0, cy0) = (first / h, first % h);
                let (cx1, cy1) = (last / h, last % h);
                x0 = x0.min(cx0);
                x1 = x1.max(cx1 + 1);
                if cx0 == cx1 {
                    y0 = y0.min(cy0);
                    y1 = y1.max(cy1 + 1);
                } else {
                    // crossing a column boundary touches both the last and the first row
                    y0 = 0;
                    y1 = h;
                }
            }
            pos += c;
        }
        if x0 == u64::MAX {
            return None;
        }
        Some(BoundingBox {
            x: x0 as i64,
            y: y0 as i64,
            w: (x1 - x0) as i64,
            h: (y1 - y0) as i64,
        })
    }
}

/// Calls `f(a_value, b_value, len)` for each maximal segment where neither
/// mask changes value.
fn walk_runs(a: &RleMask, b: &RleMask, mut f: impl FnMut(bool, bool, u32)) {
    let (ca, cb) = (&a.counts, &b.counts);
    let (mut i, mut j) = (0usize, 0usize);
    let (mut ra, mut rb) = (ca[0], cb[0]);
    loop {
        while ra == 0 {
            i += 1;
            if i >= ca.len() {
                return;
            }
            ra = ca[i];
        }
        while rb == 0 {
            j += 1;
            if j >= cb.len() {
                return;
            }
            rb = cb[j];
        }
        let len = ra.min(rb);
        f(i % 2 == 1, j % 2 == 1, len);
        ra -= len;
        rb -= len;
    }
}

/// `|a ∩ b| / |a ∪ b|`; 0 when both are empty.
pub fn mask_iou(a: &RleMask, b: &RleMask) -> Result<f64> {
    let inter = a.intersection_area(b)?;
    let union = a.area() + b.area() - inter;
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

/// Pixelwise OR of one or more same-size masks.
pub fn mask_union(masks: &[RleMask]) -> Result<RleMask> {
    let (first, rest) = masks
        .split_first()
        .ok_or_else(|| Error::Geometry("union of zero masks".into()))?;
    rest.iter()
        .try_fold(first.clone(), |acc, m| acc.combine(m, |a, b| a || b))
}

pub fn mask_area(mask: &RleMask) -> u64 {
    mask.area()
}
