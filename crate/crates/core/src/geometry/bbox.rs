use serde::{Deserialize, Serialize};

use super::ImageSize;
use crate::error::{Error, Result};

/// Axis-aligned integer box `(x, y, w, h)`; serialized as `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[i64; 4]", into = "[i64; 4]")]
pub struct BoundingBox {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

impl BoundingBox {
    pub fn new(x: i64, y: i64, w: i64, h: i64) -> Result<Self> {
        if w < 0 || h < 0 {
            return Err(Error::Geometry(format!(
                "box extents must be non-negative, got w={w} h={h}"
            )));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn area(&self) -> u64 {
        (self.w as u64) * (self.h as u64)
    }

    pub fn right(&self) -> i64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> i64 {
        self.y + self.h
    }

    /// Center in continuous pixel coordinates.
    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + self.w as f64 / 2.0,
            self.y as f64 + self.h as f64 / 2.0,
        )
    }

    /// Intersects the box with the image rectangle. Boxes entirely outside
    /// collapse to a zero-area box on the nearest border.
    pub fn clamp(&self, size: ImageSize) -> BoundingBox {
        let (iw, ih) = (i64::from(size.width), i64::from(size.height));
        let x0 = self.x.clamp(0, iw);
        let y0 = self.y.clamp(0, ih);
        let x1 = self.right().clamp(0, iw);
        let y1 = self.bottom().clamp(0, ih);
        BoundingBox {
            x: x0,
            y: y0,
            w: (x1 - x0).max(0),
            h: (y1 - y0).max(0),
        }
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> u64 {
        let w = (self.right().min(other.right()) - self.x.max(other.x)).max(0);
        let h = (self.bottom().min(other.bottom()) - self.y.max(other.y)).max(0);
        (w as u64) * (h as u64)
    }

    /// Smallest box containing both.
    pub fn hull(&self, other: &BoundingBox) -> BoundingBox {
        let x = self.x.min(other.x);
        let y = self.y.min(other.y);
        BoundingBox {
            x,
            y,
            w: self.right().max(other.right()) - x,
            h: self.bottom().max(other.bottom()) - y,
        }
    }
}

impl TryFrom<[i64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(v: [i64; 4]) -> Result<Self> {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [i64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

/// `|a ∩ b| / |a ∪ b|`, zero when both boxes are degenerate.
pub fn box_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: i64, y: i64, w: i64, h: i64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn iou_examples() {
        assert_eq!(box_iou(&bx(0, 0, 10, 10), &bx(0, 0, 10, 10)), 1.0);
        assert_eq!(box_iou(&bx(0, 0, 5, 5), &bx(10, 10, 5, 5)), 0.0);
        assert_eq!(box_iou(&bx(0, 0, 0, 0), &bx(3, 3, 0, 0)), 0.0);
    }

    #[test]
    fn iou_half_overlap_matches_pixel_count() {
        // 20x10 grid brute force: count pixels in a, b, both.
        let a = bx(0, 0, 10, 10);
        let b = bx(5, 0, 10, 10);
        let inside = |r: &BoundingBox, x: i64, y: i64| x >= r.x && x < r.right() && y >= r.y && y < r.bottom();
        let (mut inter, mut union) = (0u32, 0u32);
        for y in 0..10 {
            for x in 0..20 {
                let (ia, ib) = (inside(&a, x, y), inside(&b, x, y));
                inter += u32::from(ia && ib);
                union += u32::from(ia || ib);
            }
        }
        assert_eq!((inter, union), (50, 150));
        assert_eq!(box_iou(&a, &b), 1.0 / 3.0);
    }

    #[test]
    fn negative_extent_rejected() {
        assert!(BoundingBox::new(0, 0, -1, 3).is_err());
        assert!(serde_json::from_str::<BoundingBox>("[0,0,2,-2]").is_err());
    }

    #[test]
    fn clamp_is_explicit() {
        let size = ImageSize::new(10, 8).unwrap();
        assert_eq!(bx(-3, 2, 6, 10).clamp(size), bx(0, 2, 3, 6));
        assert_eq!(bx(20, 20, 5, 5).clamp(size).area(), 0);
        assert_eq!(bx(1, 1, 2, 2).clamp(size), bx(1, 1, 2, 2));
    }
}
