//! Annotator verification against scene-graph boxes.
//!
//! Each annotation is scored by `IoP + 0.8 × IoU` against the union of the
//! task's boxes. A worker with at least 10 annotations is trusted when the mean
//! score reaches `max(0.7, 0.95 − 0.05 × n)`; workers below 10 annotations are
//! ignored. Only trusted workers' annotations are kept, and one annotation per
//! task is then chosen at random.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{mask_union, BoundingBox, ImageSize, PolygonRegion, RleMask};
use crate::scalar::Scalar;
use crate::seed::stage_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QcParams {
    pub iou_coefficient: f64,
    pub threshold_floor: f64,
    pub threshold_start: f64,
    pub threshold_step: f64,
    pub min_annotations: usize,
}

impl Default for QcParams {
    fn default() -> Self {
        Self {
            iou_coefficient: 0.8,
            threshold_floor: 0.7,
            threshold_start: 0.95,
            threshold_step: 0.05,
            min_annotations: 10,
        }
    }
}

/// `IoP + coefficient × IoU` of an annotation mask against the union of boxes.
/// An empty annotation scores 0.
pub fn agreement(ann: &RleMask, vg_boxes: &[BoundingBox], iou_coefficient: f64) -> f64 {
    let polygon_area = ann.area();
    if polygon_area == 0 || vg_boxes.is_empty() {
        return 0.0;
    }
    let size = ann.size();
    let boxes: Vec<RleMask> = vg_boxes.iter().map(|b| RleMask::from_box(b, size)).collect();
    let target = mask_union(&boxes).expect("same size by construction");
    let inter = ann.intersection_area(&target).expect("same size by construction");
    let union = polygon_area + target.area() - inter;
    let iop = inter as f64 / polygon_area as f64;
    let iou = inter as f64 / union as f64;
    iop + iou_coefficient * iou
}

/// `max(floor, start − step × n)`.
pub fn worker_threshold(n_annotations: usize, params: &QcParams) -> f64 {
    params
        .threshold_floor
        .max(params.threshold_start - params.threshold_step * n_annotations as f64)
}

/// One worker's submission for one task; each polygon is a separate region.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation<T> {
    pub task_id: String,
    pub worker_id: String,
    pub polygons: Vec<PolygonRegion<T>>,
}

/// File layout: polygons as flat `[x0, y0, x1, y1, …]` rings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub task_id: String,
    pub worker_id: String,
    pub polygons: Vec<Vec<f64>>,
}

impl AnnotationRecord {
    pub fn into_annotation(&self, size: ImageSize) -> Result<Annotation<f64>> {
        let polygons = self
            .polygons
            .iter()
            .map(|flat| PolygonRegion::from_flat(std::slice::from_ref(flat), size))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Task {
                task_id: self.task_id.clone(),
                message: format!("worker {}: {e}", self.worker_id),
            })?;
        Ok(Annotation {
            task_id: self.task_id.clone(),
            worker_id: self.worker_id.clone(),
            polygons,
        })
    }
}

impl<T: Scalar> Annotation<T> {
    /// Union of the rasterized polygons; empty when there are none.
    pub fn mask(&self, size: ImageSize) -> Result<RleMask> {
        let masks: Vec<RleMask> = self.polygons.iter().map(|p| p.rasterize()).collect();
        if masks.is_empty() {
            return Ok(RleMask::empty(size));
        }
        let m = mask_union(&masks)?;
        size.ensure_same(&m.size())?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerRecord<T> {
    pub worker_id: String,
    pub annotations: Vec<Annotation<T>>,
    pub agreement_scores: Vec<f64>,
}

impl<T> WorkerRecord<T> {
    pub fn mean_agreement(&self) -> f64 {
        if self.agreement_scores.is_empty() {
            return 0.0;
        }
        self.agreement_scores.iter().sum::<f64>() / self.agreement_scores.len() as f64
    }
}

/// What a task contributes to scoring: its image size and reference boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskReference {
    pub image_size: ImageSize,
    pub vg_boxes: Vec<BoundingBox>,
}

/// Scores every annotation (in parallel) and groups them by worker, sorted by
/// worker id, preserving input order within a worker.
pub fn score_workers<T: Scalar>(
    annotations: Vec<Annotation<T>>,
    tasks: &BTreeMap<String, TaskReference>,
    params: &QcParams,
) -> Result<Vec<WorkerRecord<T>>> {
    let scores: Vec<f64> = annotations
        .par_iter()
        .map(|a| {
            let task = tasks.get(&a.task_id).ok_or_else(|| Error::Task {
                task_id: a.task_id.clone(),
                message: format!("annotation from worker {} references an unknown task", a.worker_id),
            })?;
            let mask = a.mask(task.image_size)?;
            Ok(agreement(&mask, &task.vg_boxes, params.iou_coefficient))
        })
        .collect::<Result<_>>()?;

    let mut by_worker: BTreeMap<String, WorkerRecord<T>> = BTreeMap::new();
    for (a, s) in annotations.into_iter().zip(scores) {
        let rec = by_worker
            .entry(a.worker_id.clone())
            .or_insert_with(|| WorkerRecord {
                worker_id: a.worker_id.clone(),
                annotations: Vec::new(),
                agreement_scores: Vec::new(),
            });
        rec.annotations.push(a);
        rec.agreement_scores.push(s);
    }
    Ok(by_worker.into_values().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrustStatus {
    Trusted,
    Untrusted,
    /// Too few annotations to judge.
    Ignored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerTrust {
    pub worker_id: String,
    pub n_annotations: usize,
    pub mean_agreement: f64,
    pub threshold: f64,
    pub status: TrustStatus,
}

impl WorkerTrust {
    pub fn trusted(&self) -> bool {
        self.status == TrustStatus::Trusted
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustReport {
    pub workers: Vec<WorkerTrust>,
    pub workers_trusted: usize,
    pub workers_untrusted: usize,
    pub workers_ignored: usize,
    pub annotations_kept: usize,
    /// Annotations from workers judged untrustworthy by score.
    pub annotations_removed: usize,
    /// Annotations from workers with too few annotations.
    pub annotations_ignored: usize,
}

impl TrustReport {
    pub fn is_trusted(&self, worker_id: &str) -> bool {
        self.workers
            .iter()
            .any(|w| w.worker_id == worker_id && w.trusted())
    }
}

pub fn verify_workers<T>(records: &[WorkerRecord<T>], params: &QcParams) -> TrustReport {
    let mut report = TrustReport {
        workers: Vec::with_capacity(records.len()),
        workers_trusted: 0,
        workers_untrusted: 0,
        workers_ignored: 0,
        annotations_kept: 0,
        annotations_removed: 0,
        annotations_ignored: 0,
    };
    for rec in records {
        let n = rec.agreement_scores.len();
        let mean = rec.mean_agreement();
        let threshold = worker_threshold(n, params);
        let status = if n < params.min_annotations {
            report.workers_ignored += 1;
            report.annotations_ignored += n;
            TrustStatus::Ignored
        } else if mean >= threshold {
            report.workers_trusted += 1;
            report.annotations_kept += n;
            TrustStatus::Trusted
        } else {
            report.workers_untrusted += 1;
            report.annotations_removed += n;
            TrustStatus::Untrusted
        };
        report.workers.push(WorkerTrust {
            worker_id: rec.worker_id.clone(),
            n_annotations: n,
            mean_agreement: mean,
            threshold,
            status,
        });
    }
    report
}

/// Picks one item uniformly.
pub fn choose_one<'a, A, R: Rng + ?Sized>(items: &'a [A], rng: &mut R) -> Option<&'a A> {
    match items.len() {
        0 => None,
        1 => Some(&items[0]),
        n => Some(&items[rng.random_range(0..n)]),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DedupOutcome<A> {
    pub selected: BTreeMap<String, A>,
    /// Tasks left with no annotation.
    pub dropped: usize,
}

/// Keeps one annotation per task, chosen with a per-task stream derived from `seed`.
pub fn dedup<A: Clone>(per_task: &BTreeMap<String, Vec<A>>, seed: u64) -> DedupOutcome<A> {
    let mut out = DedupOutcome {
        selected: BTreeMap::new(),
        dropped: 0,
    };
    for (task_id, anns) in per_task {
        let mut rng = stage_rng(seed, "dedup", task_id);
        match choose_one(anns, &mut rng) {
            Some(a) => {
                out.selected.insert(task_id.clone(), a.clone());
            }
            None => out.dropped += 1,
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;

    fn size() -> ImageSize {
        ImageSize::new(20, 20).unwrap()
    }

    fn bx(x: i64, y: i64, w: i64, h: i64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn agreement_examples() {
        let b = bx(0, 0, 10, 10);
        let exact = RleMask::from_box(&b, size());
        assert_eq!(agreement(&exact, &[b], 0.8), 1.8);
        let disjoint = RleMask::from_box(&bx(12, 12, 5, 5), size());
        assert_eq!(agreement(&disjoint, &[b], 0.8), 0.0);
        // 50 pixels fully inside a 100-pixel box: IoP 1, IoU 0.5
        let inside = RleMask::from_box(&bx(0, 0, 5, 10), size());
        assert!((agreement(&inside, &[b], 0.8) - 1.4).abs() < 1e-15);
        assert_eq!(agreement(&RleMask::empty(size()), &[b], 0.8), 0.0);
    }

    #[test]
    fn agreement_uses_box_union() {
        let boxes = [bx(0, 0, 5, 5), bx(5, 0, 5, 5)];
        let ann = RleMask::from_box(&bx(0, 0, 10, 5), size());
        assert_eq!(agreement(&ann, &boxes, 0.8), 1.8);
    }

    #[test]
    fn threshold_examples() {
        let p = QcParams::default();
        assert!((worker_threshold(1, &p) - 0.90).abs() < 1e-12);
        assert!((worker_threshold(3, &p) - 0.80).abs() < 1e-12);
        assert_eq!(worker_threshold(10, &p), 0.70);
        assert_eq!(worker_threshold(0, &p), 0.95);
    }

    fn worker(id: &str, scores: Vec<f64>) -> WorkerRecord<f64> {
        WorkerRecord {
            worker_id: id.into(),
            annotations: vec![],
            agreement_scores: scores,
        }
    }

    #[test]
    fn trust_decisions() {
        let p = QcParams::default();
        let report = verify_workers(
            &[
                worker("few", vec![1.8; 9]),
                worker("good", vec![1.8; 12]),
                worker("bad", vec![0.0; 20]),
                worker("edge", vec![0.7; 10]),
            ],
            &p,
        );
        let status: Vec<TrustStatus> = report.workers.iter().map(|w| w.status).collect();
        assert_eq!(
            status,
            vec![
                TrustStatus::Ignored,
                TrustStatus::Trusted,
                TrustStatus::Untrusted,
                TrustStatus::Trusted
            ]
        );
        assert_eq!(report.annotations_ignored, 9);
        assert_eq!(report.annotations_kept, 22);
        assert_eq!(report.annotations_removed, 20);
        assert!(report.is_trusted("good") && !report.is_trusted("few"));
    }

    #[test]
    fn scoring_groups_by_worker() {
        let poly = |x0: f64| {
            PolygonRegion::new(
                vec![vec![
                    Point::new(x0, 0.0),
                    Point::new(x0 + 10.0, 0.0),
                    Point::new(x0 + 10.0, 10.0),
                    Point::new(x0, 10.0),
                ]],
                size(),
            )
            .unwrap()
        };
        let tasks = BTreeMap::from([(
            "t1".to_string(),
            TaskReference {
                image_size: size(),
                vg_boxes: vec![bx(0, 0, 10, 10)],
            },
        )]);
        let anns = vec![
            Annotation { task_id: "t1".into(), worker_id: "w2".into(), polygons: vec![poly(0.0)] },
            Annotation { task_id: "t1".into(), worker_id: "w1".into(), polygons: vec![poly(10.0)] },
        ];
        let recs = score_workers(anns, &tasks, &QcParams::default()).unwrap();
        assert_eq!(recs[0].worker_id, "w1");
        assert_eq!(recs[0].agreement_scores, vec![0.0]);
        assert_eq!(recs[1].agreement_scores, vec![1.8]);

        let stray = vec![Annotation { task_id: "nope".into(), worker_id: "w".into(), polygons: vec![poly(0.0)] }];
        assert!(score_workers(stray, &tasks, &QcParams::default()).is_err());
    }

    #[test]
    fn dedup_examples() {
        let per_task = BTreeMap::from([
            ("one".to_string(), vec!["a"]),
            ("two".to_string(), vec!["b", "c"]),
            ("zero".to_string(), vec![]),
        ]);
        let out = dedup(&per_task, 42);
        assert_eq!(out.selected["one"], "a");
        assert_eq!(out.dropped, 1);
        assert!(!out.selected.contains_key("zero"));
        for _ in 0..5 {
            assert_eq!(dedup(&per_task, 42).selected["two"], out.selected["two"]);
        }
    }

    #[test]
    fn record_conversion() {
        let rec = AnnotationRecord {
            task_id: "t".into(),
            worker_id: "w".into(),
            polygons: vec![vec![0.0, 0.0, 4.0, 0.0, 4.0, 4.0], vec![1.0, 1.0]],
        };
        assert!(rec.into_annotation(size()).is_err());
        let rec = AnnotationRecord { polygons: vec![vec![0.0, 0.0, 4.0, 0.0, 4.0, 4.0]], ..rec };
        assert_eq!(rec.into_annotation(size()).unwrap().polygons.len(), 1);
    }
}
