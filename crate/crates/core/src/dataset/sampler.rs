//! Stratified box sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::box_iou;
use crate::scene_graph::{relative_size, SceneGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerParams {
    /// Boxes smaller than this fraction of the image are never sampled.
    pub r_min: f64,
    /// Boxes larger than this fraction of the image are never sampled.
    pub r_max: f64,
    /// A box overlapping a pooled box by more than this IoU is not pooled.
    pub overlap_iou: f64,
    pub weight_cap: f64,
    /// Divisor applied to same-category weights after each draw.
    pub category_penalty: f64,
    pub boxes_per_image_target: usize,
}

impl Default for SamplerParams {
    fn default() -> Self {
        Self {
            r_min: 0.02,
            r_max: 0.9,
            overlap_iou: 0.2,
            weight_cap: 0.1,
            category_penalty: 5.0,
            boxes_per_image_target: 5,
        }
    }
}

impl SamplerParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.r_min && self.r_min < self.r_max && self.r_max <= 1.0) {
            return Err(Error::Config(format!(
                "sampler: need 0 <= r_min < r_max <= 1, got r_min={} r_max={}",
                self.r_min, self.r_max
            )));
        }
        if !(self.overlap_iou > 0.0 && self.overlap_iou < 1.0) {
            return Err(Error::Config(format!(
                "sampler: overlap_iou must lie in (0, 1), got {}",
                self.overlap_iou
            )));
        }
        if !(self.category_penalty > 1.0) {
            return Err(Error::Config(format!(
                "sampler: category_penalty must exceed 1, got {}",
                self.category_penalty
            )));
        }
        if !(self.weight_cap > 0.0) {
            return Err(Error::Config("sampler: weight_cap must be positive".into()));
        }
        Ok(())
    }
}

/// `√min(cap, r)`: boxes below the cap are drawn less often.
pub fn sample_weight(r: f64, cap: f64) -> f64 {
    r.min(cap).max(0.0).sqrt()
}

/// Indices (into `graph.objects`) of the candidate pool, in input order.
pub fn build_pool(graph: &SceneGraph, params: &SamplerParams) -> Vec<usize> {
    let mut pool: Vec<usize> = Vec::new();
    for (i, obj) in graph.objects.iter().enumerate() {
        let r = relative_size(&obj.bbox, graph.image_size);
        if r < params.r_min || r > params.r_max {
            continue;
        }
        let overlaps = pool
            .iter()
            .any(|&p| box_iou(&graph.objects[p].bbox, &obj.bbox) > params.overlap_iou);
        if !overlaps {
            pool.push(i);
        }
    }
    pool
}

/// Draws up to `boxes_per_image_target` object ids without replacement.
pub fn sample_boxes<R: Rng + ?Sized>(
    graph: &SceneGraph,
    params: &SamplerParams,
    rng: &mut R,
) -> Vec<u64> {
    let pool = build_pool(graph, params);
    let mut weights: Vec<f64> = pool
        .iter()
        .map(|&i| sample_weight(relative_size(&graph.objects[i].bbox, graph.image_size), params.weight_cap))
        .collect();
    let mut remaining: Vec<bool> = vec![true; pool.len()];
    let draws = pool.len().min(params.boxes_per_image_target);
    let mut picked = Vec::with_capacity(draws);
    for _ in 0..draws {
        let Some(k) = draw_index(&weights, &remaining, rng) else {
            break;
        };
        remaining[k] = false;
        let drawn = &graph.objects[pool[k]];
        picked.push(drawn.id);
        for (j, &i) in pool.iter().enumerate() {
            if remaining[j] && graph.objects[i].names.iter().any(|n| drawn.has_name(n)) {
                weights[j] /= params.category_penalty;
            }
        }
    }
    picked
}

/// One categorical draw over the remaining entries.
fn draw_index<R: Rng + ?Sized>(weights: &[f64], remaining: &[bool], rng: &mut R) -> Option<usize> {
    let live = || weights.iter().zip(remaining).enumerate().filter(|(_, (_, r))| **r);
    let total: f64 = live().map(|(_, (w, _))| *w).sum();
    if total <= 0.0 {
        // all remaining weights are zero: fall back to uniform over what is left
        let n = remaining.iter().filter(|r| **r).count();
        if n == 0 {
            return None;
        }
        let pick = rng.random_range(0..n);
        return live().nth(pick).map(|(i, _)| i);
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = None;
    for (i, (w, _)) in live() {
        acc += *w;
        last = Some(i);
        if u < acc {
            return Some(i);
        }
    }
    last
}
