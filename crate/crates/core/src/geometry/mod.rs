//! Exact pixel-grid geometry: boxes, polygons, run-length masks and IoU.
//!
//! Pixel `(x, y)` covers the unit square `[x, x+1) × [y, y+1)`. Masks are
//! stored column-major (column 0 top to bottom, then column 1, …).

mod bbox;
mod polygon;
mod rle;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bbox::{box_iou, BoundingBox};
pub use polygon::{Point, PolygonRegion};
pub use rle::{mask_area, mask_iou, mask_union, Bitmap, RleMask};

/// Image (or channel) extent in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Geometry(format!(
                "image size must be positive, got {width}x{height}"
            )));
        }
        Ok(Self { width, height })
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height)
    }

    pub(crate) fn ensure_same(&self, other: &ImageSize) -> Result<()> {
        if self != other {
            return Err(Error::SizeMismatch {
                left_w: self.width,
                left_h: self.height,
                right_w: other.width,
                right_h: other.height,
            });
        }
        Ok(())
    }
}
