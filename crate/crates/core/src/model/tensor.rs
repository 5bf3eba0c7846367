use crate::error::{Error, Result};
use crate::geometry::{Bitmap, ImageSize, RleMask};
use crate::scalar::Scalar;

/// A single-channel map, row-major (`y * width + x`).
#[derive(Debug, Clone, PartialEq)]
pub struct HeatMap<T> {
    width: u32,
    height: u32,
    values: Vec<T>,
}

impl<T: Scalar> HeatMap<T> {
    pub fn new(width: u32, height: u32, values: Vec<T>) -> Result<Self> {
        if values.len() != width as usize * height as usize {
            return Err(Error::Model(format!(
                "heat map {width}x{height} needs {} values, got {}",
                width as usize * height as usize,
                values.len()
            )));
        }
        Ok(Self { width, height, values })
    }

    pub fn filled(width: u32, height: u32, value: T) -> Self {
        Self {
            width,
            height,
            values: vec![value; width as usize * height as usize],
        }
    }

    /// 1 inside the mask, 0 outside, at the mask's own size.
    pub fn from_mask(mask: &RleMask) -> Self {
        let size = mask.size();
        Self::from_mask_resampled(mask, size.width, size.height)
    }

    /// Nearest-neighbour resampling of a mask onto a `width × height` grid:
    /// each cell reads the source pixel under its centre.
    pub fn from_mask_resampled(mask: &RleMask, width: u32, height: u32) -> Self {
        let size = mask.size();
        let bits = mask.decode();
        let xs = nearest_index(width, size.width);
        let ys = nearest_index(height, size.height);
        let mut values = Vec::with_capacity(width as usize * height as usize);
        for &sy in &ys {
            for &sx in &xs {
                values.push(if bits.get(sx, sy) { T::one() } else { T::zero() });
            }
        }
        Self { width, height, values }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn get(&self, x: u32, y: u32) -> T {
        self.values[y as usize * self.width as usize + x as usize]
    }

    pub fn upsample_nearest(&self, width: u32, height: u32) -> Self {
        let xs = nearest_index(width, self.width);
        let ys = nearest_index(height, self.height);
        let mut values = Vec::with_capacity(width as usize * height as usize);
        for &sy in &ys {
            let row = sy as usize * self.width as usize;
            for &sx in &xs {
                values.push(self.values[row + sx as usize]);
            }
        }
        Self { width, height, values }
    }

    /// Pixels with value `≥ threshold` become foreground.
    pub fn threshold(&self, threshold: T) -> RleMask {
        let size = ImageSize {
            width: self.width,
            height: self.height,
        };
        let mut bits = Bitmap::new(size);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) >= threshold {
                    bits.set(x, y, true);
                }
            }
        }
        RleMask::encode(&bits)
    }
}

/// For each of `dst` cells, the index of the `src` cell under its centre.
pub(crate) fn nearest_index(dst: u32, src: u32) -> Vec<u32> {
    (0..dst)
        .map(|i| ((2 * i as u64 + 1) * src as u64 / (2 * dst as u64)).min(src as u64 - 1) as u32)
        .collect()
}

/// `n` channels of `height × width`, channel-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStack<T> {
    n: usize,
    width: u32,
    height: u32,
    values: Vec<T>,
}

impl<T: Scalar> ChannelStack<T> {
    pub fn zeros(n: usize, width: u32, height: u32) -> Self {
        Self {
            n,
            width,
            height,
            values: vec![T::zero(); n * width as usize * height as usize],
        }
    }

    pub fn new(n: usize, width: u32, height: u32, values: Vec<T>) -> Result<Self> {
        if values.len() != n * width as usize * height as usize {
            return Err(Error::Model(format!(
                "channel stack {n}x{height}x{width} needs {} values, got {}",
                n * width as usize * height as usize,
                values.len()
            )));
        }
        Ok(Self { n, width, height, values })
    }

    pub fn n_channels(&self) -> usize {
        self.n
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let p = self.pixels();
        &self.values[c * p..(c + 1) * p]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let p = self.pixels();
        &mut self.values[c * p..(c + 1) * p]
    }

    pub fn channel_map(&self, c: usize) -> HeatMap<T> {
        HeatMap {
            width: self.width,
            height: self.height,
            values: self.channel(c).to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundingBox;

    #[test]
    fn mask_round_trip_through_heat_map() {
        let size = ImageSize::new(7, 5).unwrap();
        let m = RleMask::from_box(&BoundingBox::new(1, 2, 3, 2).unwrap(), size);
        let h = HeatMap::<f64>::from_mask(&m);
        assert_eq!(h.get(1, 2), 1.0);
        assert_eq!(h.get(0, 2), 0.0);
        assert_eq!(h.threshold(0.5), m);
    }

    #[test]
    fn nearest_resampling() {
        assert_eq!(nearest_index(4, 2), vec![0, 0, 1, 1]);
        assert_eq!(nearest_index(2, 4), vec![1, 3]);
        assert_eq!(nearest_index(3, 3), vec![0, 1, 2]);
        let h = HeatMap::new(2, 1, vec![0.25f32, 0.75]).unwrap();
        assert_eq!(h.upsample_nearest(4, 2).values(), &[0.25, 0.25, 0.75, 0.75, 0.25, 0.25, 0.75, 0.75]);
    }

    #[test]
    fn threshold_is_inclusive() {
        let h = HeatMap::new(2, 1, vec![0.5f64, 0.4]).unwrap();
        assert_eq!(h.threshold(0.5).area(), 1);
    }
}
