//! Size, count, frequency and stuff/object subset tags.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::task::{PhraseTask, SubsetTag};
use crate::error::Result;
use crate::scene_graph::CategoryVocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubsetParams {
    /// Target area fraction below which a task is `small`.
    pub small_below: f64,
    /// Target area fraction above which a task is `large`.
    pub large_above: f64,
    /// Instance count at which `multi` becomes `many`.
    pub many_from: usize,
    /// Categories ranked at or above this are `freq_1_100`.
    pub top_rank: usize,
    /// Categories ranked at or above this (and below `top_rank`) are `freq_101_500`.
    pub mid_rank: usize,
}

impl Default for SubsetParams {
    fn default() -> Self {
        Self {
            small_below: 0.02,
            large_above: 0.2,
            many_from: 5,
            top_rank: 100,
            mid_rank: 500,
        }
    }
}

/// Replaces the size, count, frequency and stuff/object tags of an annotated task.
/// Categories absent from the vocabulary count as rare.
pub fn assign_subsets(
    task: &PhraseTask,
    vocab: &CategoryVocabulary,
    stuff: &HashSet<String>,
    params: &SubsetParams,
) -> Result<PhraseTask> {
    let gt = task.ground_truth()?;
    let mut out = task.clone();
    out.subset_tags.retain(|t| {
        !(t.is_size() || t.is_count() || t.is_frequency() || matches!(t, SubsetTag::Stuff | SubsetTag::Obj))
    });

    let fraction = gt.area() as f64 / task.image_size.area() as f64;
    out.subset_tags.insert(if fraction < params.small_below {
        SubsetTag::Small
    } else if fraction > params.large_above {
        SubsetTag::Large
    } else {
        SubsetTag::Mid
    });

    let n = task.instances.len();
    out.subset_tags.insert(match n {
        1 => SubsetTag::Single,
        n if n < params.many_from => SubsetTag::Multi,
        _ => SubsetTag::Many,
    });

    out.subset_tags.insert(match vocab.rank(&task.structure.category) {
        Some(r) if r <= params.top_rank => SubsetTag::Freq1To100,
        Some(r) if r <= params.mid_rank => SubsetTag::Freq101To500,
        _ => SubsetTag::Freq500Plus,
    });

    out.subset_tags.insert(if stuff.contains(&task.structure.category) {
        SubsetTag::Stuff
    } else {
        SubsetTag::Obj
    });
    Ok(out)
}
