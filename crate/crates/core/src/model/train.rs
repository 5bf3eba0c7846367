//! Two-stage SGD training, threshold selection and prediction.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::detections::{build_attribute_channels, build_channels, ImageDetections};
use super::network::{forward, loss_and_grad, ImageChannels, PhraseWords, Sample, Stage};
use super::params::ModelParams;
use super::tensor::HeatMap;
use crate::dataset::PhraseTask;
use crate::error::{Error, Result};
use crate::eval::{Metrics, PairCounts, PredictionRecord};
use crate::geometry::RleMask;
use crate::scalar::Scalar;
use crate::seed::stage_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Epochs training the category and attribute modules alone.
    pub pretrain_epochs: usize,
    /// Epochs training everything end to end.
    pub finetune_epochs: usize,
    pub positive_weight_cap: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 16,
            pretrain_epochs: 10,
            finetune_epochs: 30,
            positive_weight_cap: 20.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("train: learning_rate must be a non-negative number".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("train: momentum must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train: batch_size must be positive".into()));
        }
        if !(self.positive_weight_cap >= 1.0) {
            return Err(Error::Config("train: positive_weight_cap must be at least 1".into()));
        }
        Ok(())
    }
}

/// Standardized channels for every image referenced by `tasks`.
pub fn image_channels<T: Scalar>(
    tasks: &[PhraseTask],
    detections: &[ImageDetections],
    params: &ModelParams<T>,
) -> Result<HashMap<u64, Arc<ImageChannels<T>>>> {
    let cfg = &params.config;
    let by_image: HashMap<u64, &ImageDetections> = detections.iter().map(|d| (d.image_id, d)).collect();
    let mut images: Vec<u64> = tasks.iter().map(|t| t.image_id).collect();
    images.sort_unstable();
    images.dedup();
    images
        .par_iter()
        .map(|&id| {
            let dets = by_image.get(&id).ok_or_else(|| Error::Record {
                image_id: id.to_string(),
                field: "detections".into(),
                message: "no detection record for this image".into(),
            })?;
            let (w, h) = (cfg.channel_width, cfg.channel_height);
            let cats = build_channels::<T>(&dets.detections, params.dims.n_categories, w, h)?;
            let atts = build_attribute_channels::<T>(&dets.detections, params.dims.n_attributes, w, h)?;
            Ok((id, Arc::new(ImageChannels::new(&cats, &atts, cfg.norm_epsilon))))
        })
        .collect()
}

/// Builds standardized channels per image and one sample per task.
pub fn prepare_samples<T: Scalar>(
    tasks: &[PhraseTask],
    detections: &[ImageDetections],
    params: &ModelParams<T>,
    positive_weight_cap: f64,
) -> Result<Vec<Sample<T>>> {
    let channels = image_channels(tasks, detections, params)?;
    tasks
        .iter()
        .map(|t| {
            Ok(Sample::new(
                t.task_id.clone(),
                Arc::clone(&channels[&t.image_id]),
                PhraseWords::from_structure(&t.structure, &params.words),
                &t.ground_truth()?,
                positive_weight_cap,
            ))
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss per epoch, pretraining stage.
    pub pretrain_epoch_losses: Vec<f64>,
    pub finetune_epoch_losses: Vec<f64>,
    /// Every batch loss in order, both stages.
    pub step_losses: Vec<f64>,
}

fn dropout_mask<T: Scalar>(len: usize, rate: f64, seed: u64, key: &str) -> Option<Vec<T>> {
    if rate <= 0.0 {
        return None;
    }
    let mut rng = stage_rng(seed, "dropout", key);
    let keep = T::of(1.0 / (1.0 - rate));
    Some(
        (0..len)
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect(),
    )
}

/// Runs one stage of minibatch SGD with momentum.
fn run_stage<T: Scalar>(
    samples: &[Sample<T>],
    params: &mut ModelParams<T>,
    cfg: &TrainConfig,
    seed: u64,
    stage: Stage,
    epochs: usize,
    report: &mut TrainReport,
) -> Result<()> {
    let name = match stage {
        Stage::Modules => "pretrain",
        Stage::Joint => "finetune",
    };
    let lr = T::of(cfg.learning_rate);
    let mu = T::of(cfg.momentum);
    let mut velocity = vec![T::zero(); params.n_params()];
    let hidden = params.config.ensemble_hidden;
    let rate = params.config.ensemble_dropout;
    let mut step = 0usize;
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut stage_rng(seed, "shuffle", &format!("{name}/{epoch}")));
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<(T, Vec<T>)> = batch
                .par_iter()
                .map(|&i| {
                    let s = &samples[i];
                    let mask = match stage {
                        Stage::Joint => dropout_mask(hidden, rate, seed, &format!("{epoch}/{}", s.task_id)),
                        Stage::Modules => None,
                    };
                    loss_and_grad(params, s, stage, mask)
                })
                .collect::<Result<_>>()?;
            let scale = T::one() / T::of(batch.len() as f64);
            let mut loss = T::zero();
            let mut grad = vec![T::zero(); params.n_params()];
            for (l, g) in &results {
                loss += *l;
                for (acc, v) in grad.iter_mut().zip(g) {
                    *acc += *v;
                }
            }
            let loss = (loss * scale).as_f64();
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    stage: name.into(),
                    step,
                    loss,
                });
            }
            for ((p, v), g) in params.values.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = mu * *v + *g * scale;
                *p -= lr * *v;
            }
            if let Some(bad) = params.values.iter().position(|v| !v.is_finite()) {
                log::error!("parameter {bad} became non-finite");
                return Err(Error::Diverged {
                    stage: name.into(),
                    step,
                    loss: f64::NAN,
                });
            }
            report.step_losses.push(loss);
            epoch_loss += loss;
            batches += 1;
            step += 1;
        }
        let mean = epoch_loss / batches.max(1) as f64;
        log::info!("{name} epoch {epoch}: loss {mean:.5}");
        match stage {
            Stage::Modules => report.pretrain_epoch_losses.push(mean),
            Stage::Joint => report.finetune_epoch_losses.push(mean),
        }
    }
    Ok(())
}

/// Pretrains the category and attribute modules, then fine-tunes the whole
/// model. Batches are processed in parallel and reduced in a fixed order.
pub fn train<T: Scalar>(
    samples: &[Sample<T>],
    params: &mut ModelParams<T>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainReport> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Model("training set is empty".into()));
    }
    let mut report = TrainReport::default();
    run_stage(samples, params, cfg, seed, Stage::Modules, cfg.pretrain_epochs, &mut report)?;
    run_stage(samples, params, cfg, seed, Stage::Joint, cfg.finetune_epochs, &mut report)?;
    Ok(report)
}

/// Combined heat map at channel resolution.
pub fn predict_heat_map<T: Scalar>(params: &ModelParams<T>, channels: &ImageChannels<T>, words: &PhraseWords) -> Result<HeatMap<T>> {
    let f = forward(params, channels, words, Stage::Joint, None)?;
    HeatMap::new(
        params.config.channel_width,
        params.config.channel_height,
        f.output().expect("joint pass has an output").to_vec(),
    )
}

/// Binary mask at `image_size`, thresholded with the model's threshold.
pub fn predict<T: Scalar>(
    params: &ModelParams<T>,
    sample: &Sample<T>,
    image_width: u32,
    image_height: u32,
) -> Result<RleMask> {
    let map = predict_heat_map(params, &sample.channels, &sample.words)?;
    Ok(map
        .upsample_nearest(image_width, image_height)
        .threshold(T::of(params.threshold)))
}

/// One mask per task, in task order. Tasks need no ground truth.
pub fn predict_tasks<T: Scalar>(
    params: &ModelParams<T>,
    tasks: &[PhraseTask],
    detections: &[ImageDetections],
) -> Result<Vec<PredictionRecord>> {
    let channels = image_channels(tasks, detections, params)?;
    tasks
        .par_iter()
        .map(|t| {
            let words = PhraseWords::from_structure(&t.structure, &params.words);
            let map = predict_heat_map(params, &channels[&t.image_id], &words)?;
            let size = t.image_size;
            Ok(PredictionRecord {
                task_id: t.task_id.clone(),
                rle: map
                    .upsample_nearest(size.width, size.height)
                    .threshold(T::of(params.threshold)),
            })
        })
        .collect()
}

/// The grid `k / 20`, `k = 1..19`.
pub fn threshold_grid() -> Vec<f64> {
    (1..20).map(|k| k as f64 / 20.0).collect()
}

/// Grid threshold maximizing validation mean-IoU; ties go to the lower one.
pub fn select_threshold<T: Scalar>(scores: &[(HeatMap<T>, RleMask)]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Model("validation set is empty".into()));
    }
    for (m, t) in scores {
        let size = t.size();
        if (m.width(), m.height()) != (size.width, size.height) {
            return Err(Error::SizeMismatch {
                left_w: m.width(),
                left_h: m.height(),
                right_w: size.width,
                right_h: size.height,
            });
        }
    }
    let grid = threshold_grid();
    let truths: Vec<Vec<bool>> = scores
        .par_iter()
        .map(|(m, t)| {
            let bits = t.decode();
            // row-major to match the heat map
            let (w, h) = (m.width(), m.height());
            (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| bits.get(x, y)).collect()
        })
        .collect();
    let per_threshold: Vec<f64> = grid
        .par_iter()
        .map(|&th| {
            let th = T::of(th);
            let pairs: Vec<PairCounts> = scores
                .iter()
                .zip(&truths)
                .map(|((m, _), truth)| {
                    let (mut i, mut u) = (0u64, 0u64);
                    for (&v, &t) in m.values().iter().zip(truth) {
                        let p = v >= th;
                        i += (p && t) as u64;
                        u += (p || t) as u64;
                    }
                    PairCounts {
                        intersection: i,
                        union: u,
                    }
                })
                .collect();
            Metrics::from_pairs(&pairs).mean_iou.unwrap_or(0.0)
        })
        .collect();
    let mut best = 0;
    for (k, &v) in per_threshold.iter().enumerate() {
        if v > per_threshold[best] {
            best = k;
        }
    }
    Ok(grid[best])
}
