//! Region-grounding metrics and the category-substitution baseline.
//!
//! Per pair `t` with intersection `I_t` and union `U_t`:
//! `cum-IoU = ΣI / ΣU`, `mean-IoU = mean(I_t / U_t)`, and `Pr@k` is the
//! fraction of pairs with `I_t / U_t ≥ k`. A pair where both masks are empty
//! scores IoU 1. Intersections and unions are exact integers; per-pair IoUs
//! are summed in sorted order so the mean does not depend on task order.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{PhraseTask, SubsetTag};
use crate::error::{Error, Result};
use crate::geometry::RleMask;
use crate::scene_graph::CategoryVocabulary;

pub const PR_THRESHOLDS: [f64; 3] = [0.5, 0.7, 0.9];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub task_id: String,
    pub rle: RleMask,
}

/// Intersection and union of one prediction against its ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub intersection: u64,
    pub union: u64,
}

impl PairCounts {
    pub fn of(pred: &RleMask, truth: &RleMask) -> Result<Self> {
        let intersection = pred.intersection_area(truth)?;
        Ok(Self {
            intersection,
            union: pred.area() + truth.area() - intersection,
        })
    }

    pub fn iou(&self) -> f64 {
        if self.union == 0 {
            1.0
        } else {
            self.intersection as f64 / self.union as f64
        }
    }

    pub fn is_empty_pair(&self) -> bool {
        self.union == 0
    }
}

/// Metrics over a set of pairs; `None` when the set is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n_pairs: usize,
    pub mean_iou: Option<f64>,
    pub cum_iou: Option<f64>,
    #[serde(rename = "pr@0.5")]
    pub pr_50: Option<f64>,
    #[serde(rename = "pr@0.7")]
    pub pr_70: Option<f64>,
    #[serde(rename = "pr@0.9")]
    pub pr_90: Option<f64>,
    pub total_intersection: u64,
    pub total_union: u64,
}

impl Metrics {
    pub fn from_pairs(pairs: &[PairCounts]) -> Self {
        let n = pairs.len();
        let total_intersection: u64 = pairs.iter().map(|p| p.intersection).sum();
        let total_union: u64 = pairs.iter().map(|p| p.union).sum();
        if n == 0 {
            return Self {
                n_pairs: 0,
                mean_iou: None,
                cum_iou: None,
                pr_50: None,
                pr_70: None,
                pr_90: None,
                total_intersection,
                total_union,
            };
        }
        let mut ious: Vec<f64> = pairs.iter().map(PairCounts::iou).collect();
        ious.sort_by(f64::total_cmp);
        let mean = ious.iter().sum::<f64>() / n as f64;
        let cum = if total_union == 0 {
            0.0
        } else {
            total_intersection as f64 / total_union as f64
        };
        let pr = |k: f64| ious.iter().filter(|&&v| v >= k).count() as f64 / n as f64;
        Self {
            n_pairs: n,
            mean_iou: Some(mean),
            cum_iou: Some(cum),
            pr_50: Some(pr(PR_THRESHOLDS[0])),
            pr_70: Some(pr(PR_THRESHOLDS[1])),
            pr_90: Some(pr(PR_THRESHOLDS[2])),
            total_intersection,
            total_union,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: Metrics,
    /// One block per subset tag, keyed by the tag string.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub subsets: BTreeMap<String, Metrics>,
    /// Pairs where prediction and ground truth are both empty (scored IoU 1).
    pub empty_pairs: usize,
    pub empty_pair_iou: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Pairs each task with its prediction and computes `I`/`U` in parallel.
/// The result is in task order.
pub fn pair_counts(tasks: &[PhraseTask], predictions: &[PredictionRecord]) -> Result<Vec<PairCounts>> {
    let mut by_id: HashMap<&str, &PredictionRecord> = HashMap::with_capacity(predictions.len());
    for p in predictions {
        if by_id.insert(p.task_id.as_str(), p).is_some() {
            return Err(Error::Evaluation(format!("duplicate prediction for task {}", p.task_id)));
        }
    }
    let mut seen = std::collections::HashSet::with_capacity(tasks.len());
    for t in tasks {
        if !seen.insert(t.task_id.as_str()) {
            return Err(Error::Evaluation(format!("duplicate task {}", t.task_id)));
        }
        if !by_id.contains_key(t.task_id.as_str()) {
            return Err(Error::Evaluation(format!("missing prediction for task {}", t.task_id)));
        }
    }
    if let Some(stray) = predictions.iter().find(|p| !seen.contains(p.task_id.as_str())) {
        log::warn!("prediction for unknown task {} ignored", stray.task_id);
    }
    tasks
        .par_iter()
        .map(|t| {
            let truth = t.ground_truth()?;
            let pred = &by_id[t.task_id.as_str()].rle;
            PairCounts::of(pred, &truth).map_err(|e| Error::Task {
                task_id: t.task_id.clone(),
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn evaluate(tasks: &[PhraseTask], predictions: &[PredictionRecord]) -> Result<EvalReport> {
    let pairs = pair_counts(tasks, predictions)?;
    Ok(EvalReport {
        overall: Metrics::from_pairs(&pairs),
        subsets: BTreeMap::new(),
        empty_pairs: pairs.iter().filter(|p| p.is_empty_pair()).count(),
        empty_pair_iou: 1.0,
        warnings: Vec::new(),
    })
}

/// As [`evaluate`], plus one block per known subset tag. `unknown_tags` lists
/// tags found in the input that are not recognized; each becomes a warning.
pub fn evaluate_by_subset(
    tasks: &[PhraseTask],
    predictions: &[PredictionRecord],
    unknown_tags: &[String],
) -> Result<EvalReport> {
    let pairs = pair_counts(tasks, predictions)?;
    let mut report = EvalReport {
        overall: Metrics::from_pairs(&pairs),
        subsets: BTreeMap::new(),
        empty_pairs: pairs.iter().filter(|p| p.is_empty_pair()).count(),
        empty_pair_iou: 1.0,
        warnings: Vec::new(),
    };
    for tag in SubsetTag::ALL {
        let sub: Vec<PairCounts> = tasks
            .iter()
            .zip(&pairs)
            .filter(|(t, _)| t.has_tag(tag))
            .map(|(_, p)| *p)
            .collect();
        report.subsets.insert(tag.as_str().to_string(), Metrics::from_pairs(&sub));
    }
    let mut unknown: Vec<&String> = unknown_tags.iter().collect();
    unknown.sort();
    unknown.dedup();
    for tag in unknown {
        log::warn!("unknown subset tag {tag:?} ignored");
        report.warnings.push(format!("unknown subset tag {tag:?} ignored"));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstitutionEntry {
    pub source: String,
    pub substitute: String,
    /// Training tasks naming the source.
    pub n_tasks: usize,
    /// Training mean-IoU of the substitute's channel on those tasks.
    pub mean_iou: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubstitutionMap {
    pub entries: BTreeMap<String, SubstitutionEntry>,
}

impl SubstitutionMap {
    /// The substitute for `source`; unmapped categories map to themselves.
    pub fn substitute<'a>(&'a self, source: &'a str) -> &'a str {
        self.entries
            .get(source)
            .map(|e| e.substitute.as_str())
            .unwrap_or(source)
    }
}

/// Thresholded per-category channel masks of one task, indexed by vocabulary position.
pub type ChannelMasks = BTreeMap<String, Vec<RleMask>>;

/// Picks, for each training task naming `source`, the vocabulary category
/// whose channel mask has the highest IoU with the ground truth (ties to the
/// lower position); the substitute is the most frequent pick (ties to the
/// lower position, i.e. the more frequent category).
pub fn best_substitute(
    source: &str,
    tasks: &[PhraseTask],
    channel_masks: &ChannelMasks,
    vocab: &CategoryVocabulary,
) -> Result<SubstitutionEntry> {
    let relevant: Vec<&PhraseTask> = tasks.iter().filter(|t| t.structure.category == source).collect();
    let per_task: Vec<Vec<f64>> = relevant
        .par_iter()
        .map(|t| {
            let masks = channel_masks.get(&t.task_id).ok_or_else(|| Error::Task {
                task_id: t.task_id.clone(),
                message: "no channel masks".into(),
            })?;
            if masks.len() != vocab.len() {
                return Err(Error::Task {
                    task_id: t.task_id.clone(),
                    message: format!("expected {} channel masks, found {}", vocab.len(), masks.len()),
                });
            }
            let truth = t.ground_truth()?;
            masks
                .iter()
                .map(|m| PairCounts::of(m, &truth).map(|p| p.iou()))
                .collect()
        })
        .collect::<Result<_>>()?;

    if per_task.is_empty() || vocab.is_empty() {
        return Ok(SubstitutionEntry {
            source: source.to_string(),
            substitute: source.to_string(),
            n_tasks: 0,
            mean_iou: None,
        });
    }

    let mut votes = vec![0usize; vocab.len()];
    for ious in &per_task {
        let mut best = 0;
        for (k, &v) in ious.iter().enumerate() {
            if v > ious[best] {
                best = k;
            }
        }
        votes[best] += 1;
    }
    let mut winner = 0;
    for (k, &v) in votes.iter().enumerate() {
        if v > votes[winner] {
            winner = k;
        }
    }
    let mut achieved: Vec<f64> = per_task.iter().map(|ious| ious[winner]).collect();
    achieved.sort_by(f64::total_cmp);
    Ok(SubstitutionEntry {
        source: source.to_string(),
        substitute: vocab.name(winner).expect("winner in range").to_string(),
        n_tasks: per_task.len(),
        mean_iou: Some(achieved.iter().sum::<f64>() / achieved.len() as f64),
    })
}

/// [`best_substitute`] for every category named by a training task.
pub fn build_substitution_map(
    tasks: &[PhraseTask],
    channel_masks: &ChannelMasks,
    vocab: &CategoryVocabulary,
) -> Result<SubstitutionMap> {
    let mut sources: Vec<&str> = tasks.iter().map(|t| t.structure.category.as_str()).collect();
    sources.sort_unstable();
    sources.dedup();
    let mut map = SubstitutionMap::default();
    for s in sources {
        map.entries
            .insert(s.to_string(), best_substitute(s, tasks, channel_masks, vocab)?);
    }
    Ok(map)
}
