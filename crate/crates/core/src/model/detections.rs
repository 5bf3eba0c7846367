//! Precomputed instance detections and their projection onto score channels.

use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::ChannelStack;
use crate::error::{Error, Result};
use crate::geometry::RleMask;
use crate::scalar::Scalar;

pub const MAX_DETECTIONS: usize = 100;
pub const MAX_ATTRIBUTES: usize = 20;

/// One detected instance. The mask is at channel resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub category_index: usize,
    pub score: f64,
    pub rle: RleMask,
    /// `(attribute index, score)` pairs.
    #[serde(default)]
    pub attributes: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageDetections {
    pub image_id: u64,
    pub detections: Vec<DetectionRecord>,
}

impl ImageDetections {
    pub fn validate(&self) -> Result<()> {
        let bad = |message: String| Error::Record {
            image_id: self.image_id.to_string(),
            field: "detections".into(),
            message,
        };
        if self.detections.len() > MAX_DETECTIONS {
            return Err(bad(format!(
                "{} detections exceed the limit of {MAX_DETECTIONS}",
                self.detections.len()
            )));
        }
        for (i, d) in self.detections.iter().enumerate() {
            if !(0.0..=1.0).contains(&d.score) {
                return Err(bad(format!("detection {i}: score {} outside [0, 1]", d.score)));
            }
            if d.attributes.len() > MAX_ATTRIBUTES {
                return Err(bad(format!(
                    "detection {i}: {} attributes exceed the limit of {MAX_ATTRIBUTES}",
                    d.attributes.len()
                )));
            }
            if let Some((_, s)) = d.attributes.iter().find(|(_, s)| !(0.0..=1.0).contains(s)) {
                return Err(bad(format!("detection {i}: attribute score {s} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

pub fn parse_detections(reader: impl BufRead) -> Result<Vec<ImageDetections>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ImageDetections = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_detections(path: &Path) -> Result<Vec<ImageDetections>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_detections(std::io::BufReader::new(file))
}

/// Pixelwise max of `score` into channel `c` under `mask`.
fn project<T: Scalar>(stack: &mut ChannelStack<T>, c: usize, mask: &RleMask, score: f64) -> Result<()> {
    let (w, h) = (stack.width(), stack.height());
    let size = mask.size();
    if size.width != w || size.height != h {
        return Err(Error::SizeMismatch {
            left_w: size.width,
            left_h: size.height,
            right_w: w,
            right_h: h,
        });
    }
    let s = T::of(score);
    let channel = stack.channel_mut(c);
    // walk the column-major runs directly
    let mut pos = 0usize;
    for (k, &run) in mask.counts().iter().enumerate() {
        if k % 2 == 1 {
            for p in pos..pos + run as usize {
                let (x, y) = (p / h as usize, p % h as usize);
                let v = &mut channel[y * w as usize + x];
                if s > *v {
                    *v = s;
                }
            }
        }
        pos += run as usize;
    }
    Ok(())
}

/// Category channels: `C[c_i] = max(C[c_i], s_i)` under each mask `m_i`.
pub fn build_channels<T: Scalar>(
    detections: &[DetectionRecord],
    n_categories: usize,
    width: u32,
    height: u32,
) -> Result<ChannelStack<T>> {
    let mut stack = ChannelStack::zeros(n_categories, width, height);
    for d in detections {
        if d.category_index >= n_categories {
            return Err(Error::Model(format!(
                "category index {} out of range for {n_categories} channels",
                d.category_index
            )));
        }
        project(&mut stack, d.category_index, &d.rle, d.score)?;
    }
    Ok(stack)
}

/// Attribute channels: each detection's attribute scores projected under its mask.
pub fn build_attribute_channels<T: Scalar>(
    detections: &[DetectionRecord],
    n_attributes: usize,
    width: u32,
    height: u32,
) -> Result<ChannelStack<T>> {
    let mut stack = ChannelStack::zeros(n_attributes, width, height);
    for d in detections {
        for &(a, s) in &d.attributes {
            if a >= n_attributes {
                return Err(Error::Model(format!(
                    "attribute index {a} out of range for {n_attributes} channels"
                )));
            }
            project(&mut stack, a, &d.rle, s)?;
        }
    }
    Ok(stack)
}
