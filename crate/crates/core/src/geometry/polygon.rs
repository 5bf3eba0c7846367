use serde::{Deserialize, Serialize};

use super::{Bitmap, ImageSize, RleMask};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point<T> {
    pub x: T,
    pub y: T,
}

impl<T> Point<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }
}

/// One annotated region: a set of closed rings filled with the even-odd rule.
#[derive(Debug, Clone, PartialEq)]
pub struct PolygonRegion<T> {
    rings: Vec<Vec<Point<T>>>,
    size: ImageSize,
}

impl<T: Scalar> PolygonRegion<T> {
    pub fn new(rings: Vec<Vec<Point<T>>>, size: ImageSize) -> Result<Self> {
        for (i, ring) in rings.iter().enumerate() {
            if ring.len() < 3 {
                return Err(Error::Geometry(format!(
                    "ring {i} has {} vertices, need at least 3",
                    ring.len()
                )));
            }
            if ring.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
                return Err(Error::Geometry(format!("ring {i} has a non-finite vertex")));
            }
        }
        Ok(Self { rings, size })
    }

    /// Builds from flat `[x0, y0, x1, y1, …]` coordinate lists, one per ring.
    pub fn from_flat(rings: &[Vec<T>], size: ImageSize) -> Result<Self> {
        let rings = rings
            .iter()
            .enumerate()
            .map(|(i, flat)| {
                if flat.len() % 2 != 0 {
                    return Err(Error::Geometry(format!(
                        "ring {i} has an odd number of coordinates"
                    )));
                }
                Ok(flat.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(rings, size)
    }

    pub fn rings(&self) -> &[Vec<Point<T>>] {
        &self.rings
    }

    pub fn size(&self) -> ImageSize {
        self.size
    }

    /// Even-odd fill sampled at pixel centers `(x + 0.5, y + 0.5)`.
    pub fn rasterize(&self) -> RleMask {
        let ImageSize { width, height } = self.size;
        let mut bitmap = Bitmap::new(self.size);
        let half = T::of(0.5);
        let mut crossings: Vec<T> = Vec::new();
        for y in 0..height {
            let cy = T::of(f64::from(y)) + half;
            crossings.clear();
            for ring in &self.rings {
                let mut j = ring.len() - 1;
                for i in 0..ring.len() {
                    let (a, b) = (ring[i], ring[j]);
                    if (a.y > cy) != (b.y > cy) {
                        crossings.push((b.x - a.x) * (cy - a.y) / (b.y - a.y) + a.x);
                    }
                    j = i;
                }
            }
            if crossings.is_empty() {
                continue;
            }
            crossings.sort_by(|p, q| p.partial_cmp(q).expect("finite crossings"));
            // pixel inside iff an odd number of crossings lie strictly right of its center
            let mut at_or_left = 0usize;
            for x in 0..width {
                let cx = T::of(f64::from(x)) + half;
                while at_or_left < crossings.len() && crossings[at_or_left] <= cx {
                    at_or_left += 1;
                }
                if (crossings.len() - at_or_left) % 2 == 1 {
                    bitmap.set(x, y, true);
                }
            }
        }
        RleMask::encode(&bitmap)
    }
}
