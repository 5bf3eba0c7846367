use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use forge_core::dataset::{
    assign_subsets, generate_phrase_with_heuristic, refine_instances, sample_boxes, Heuristic, PhraseTask,
    RefineEvent,
};
use forge_core::eval::{build_substitution_map, evaluate_by_subset, ChannelMasks, Metrics, PairCounts, PredictionRecord, SubstitutionMap};
use forge_core::geometry::ImageSize;
use forge_core::io;
use forge_core::model::{
    build_attribute_channels, build_channels, load_detections, load_embedding_table, predict_heat_map,
    predict_tasks, prepare_samples, select_threshold, train, ImageDetections, WordIndex,
};
use forge_core::qc::{dedup, score_workers, verify_workers, AnnotationRecord, TaskReference, TrustReport};
use forge_core::scene_graph::{build_vocabulary, load_scene_graphs, SceneGraph};
use forge_core::seed::stage_rng;
use forge_core::ModelParams;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::manifest::Run;

/// Boxes drawn for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub image_id: u64,
    pub box_ids: Vec<u64>,
}

fn graphs(run: &mut Run, path: &Path) -> Result<Vec<SceneGraph>> {
    let loaded = load_scene_graphs(run.input("graphs", path))?;
    if loaded.dangling_relationships > 0 {
        run.warn(format!(
            "{} relationships point at unknown objects and were dropped",
            loaded.dangling_relationships
        ));
    }
    Ok(loaded.graphs)
}

fn tasks(run: &mut Run, role: &str, path: &Path) -> Result<Vec<PhraseTask>> {
    let (tasks, unknown) = io::load_tasks(run.input(role, path))?;
    let unknown: BTreeSet<String> = unknown.into_iter().collect();
    for tag in unknown {
        run.warn(format!("{}: unknown subset tag {tag:?} ignored", path.display()));
    }
    Ok(tasks)
}

pub fn sample(run: &mut Run, input: &Path, output: &Path, report: Option<&Path>) -> Result<()> {
    let graphs = graphs(run, input)?;
    let params = &run.config().sampler;
    let seed = run.seed();
    let records: Vec<SampleRecord> = graphs
        .par_iter()
        .map(|g| {
            let mut rng = stage_rng(seed, "sample", &g.image_id.to_string());
            SampleRecord {
                image_id: g.image_id,
                box_ids: sample_boxes(g, params, &mut rng),
            }
        })
        .collect();
    io::write_jsonl(run.output("samples", output), &records)?;
    if let Some(r) = report {
        let boxes: usize = records.iter().map(|s| s.box_ids.len()).sum();
        let summary = serde_json::json!({
            "images": records.len(),
            "boxes": boxes,
            "images_without_boxes": records.iter().filter(|s| s.box_ids.is_empty()).count(),
        });
        io::write_json(run.output("report", r), &summary)?;
    }
    Ok(())
}

pub fn phrases(
    run: &mut Run,
    input: &Path,
    samples: &Path,
    output: &Path,
    vocab: Option<&Path>,
    report: Option<&Path>,
) -> Result<()> {
    let graphs = graphs(run, input)?;
    let samples: Vec<SampleRecord> = io::read_jsonl(run.input("samples", samples))?;
    let by_id: HashMap<u64, &SceneGraph> = graphs.iter().map(|g| (g.image_id, g)).collect();
    let seed = run.seed();
    let mut jobs = Vec::new();
    for s in &samples {
        let g = by_id
            .get(&s.image_id)
            .with_context(|| format!("sample for image {} which has no scene graph", s.image_id))?;
        jobs.extend(s.box_ids.iter().map(|&b| (*g, b)));
    }
    let generated: Vec<(PhraseTask, Heuristic)> = jobs
        .par_iter()
        .map(|&(g, b)| {
            let mut rng = stage_rng(seed, "phrases", &PhraseTask::task_id_for(g.image_id, b));
            generate_phrase_with_heuristic(g, b, &mut rng)
        })
        .collect::<forge_core::Result<_>>()?;
    let tasks: Vec<PhraseTask> = generated.iter().map(|(t, _)| t.clone()).collect();
    io::write_tasks(run.output("tasks", output), &tasks)?;
    if let Some(v) = vocab {
        let vocabulary = build_vocabulary(&graphs, run.config().phrases.vocabulary_min_frequency);
        io::write_vocabulary(run.output("vocabulary", v), &vocabulary)?;
    }
    if let Some(r) = report {
        let mut by_heuristic: BTreeMap<&str, usize> = Heuristic::ALL.iter().map(|h| (h.name(), 0)).collect();
        for (_, h) in &generated {
            *by_heuristic.entry(h.name()).or_default() += 1;
        }
        let summary = serde_json::json!({
            "tasks": tasks.len(),
            "heuristics": by_heuristic,
            "with_attributes": tasks.iter().filter(|t| t.structure.has_attributes()).count(),
            "with_relationships": tasks.iter().filter(|t| t.structure.has_relationships()).count(),
        });
        io::write_json(run.output("report", r), &summary)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct QcSummary {
    #[serde(flatten)]
    trust: TrustReport,
    annotations_unknown_task: usize,
    tasks_selected: usize,
    tasks_without_trusted_annotation: usize,
}

pub fn qc(run: &mut Run, input: &Path, tasks_path: &Path, output: &Path, report: Option<&Path>) -> Result<()> {
    let records: Vec<AnnotationRecord> = io::read_jsonl(run.input("annotations", input))?;
    let tasks = tasks(run, "tasks", tasks_path)?;
    let refs: BTreeMap<String, TaskReference> = tasks
        .iter()
        .map(|t| {
            (
                t.task_id.clone(),
                TaskReference {
                    image_size: t.image_size,
                    vg_boxes: t.vg_boxes.clone(),
                },
            )
        })
        .collect();

    let mut known = Vec::with_capacity(records.len());
    let mut unknown = 0usize;
    for r in &records {
        match refs.get(&r.task_id) {
            Some(t) => known.push((r, r.into_annotation(t.image_size)?)),
            None => unknown += 1,
        }
    }
    if unknown > 0 {
        run.warn(format!("{unknown} annotations reference unknown tasks and were skipped"));
    }
    let (kept_records, annotations): (Vec<&AnnotationRecord>, Vec<_>) = known.into_iter().unzip();
    let workers = score_workers(annotations, &refs, &run.config().qc)?;
    let trust = verify_workers(&workers, &run.config().qc);

    let mut per_task: BTreeMap<String, Vec<AnnotationRecord>> = BTreeMap::new();
    for r in kept_records {
        if trust.is_trusted(&r.worker_id) {
            per_task.entry(r.task_id.clone()).or_default().push(r.clone());
        }
    }
    let outcome = dedup(&per_task, run.seed());
    let selected: Vec<&AnnotationRecord> = outcome.selected.values().collect();
    io::write_jsonl(run.output("selected", output), &selected)?;
    if let Some(r) = report {
        let summary = QcSummary {
            tasks_selected: selected.len(),
            tasks_without_trusted_annotation: tasks.len().saturating_sub(selected.len()),
            trust,
            annotations_unknown_task: unknown,
        };
        io::write_json(run.output("report", r), &summary)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct TaskProvenance {
    task_id: String,
    worker_id: String,
    instances: usize,
    events: Vec<RefineEvent>,
}

#[derive(Debug, Serialize)]
struct RefineSummary {
    tasks_in: usize,
    tasks_refined: usize,
    tasks_unannotated: usize,
    tasks_empty: usize,
    provenance: Vec<TaskProvenance>,
}

fn stuff_list(run: &mut Run, config_path: Option<&Path>) -> Result<HashSet<String>> {
    let Some(rel) = run.config().stuff_list.clone() else {
        return Ok(HashSet::new());
    };
    // relative paths resolve against the config file's directory
    let path: PathBuf = match config_path.and_then(Path::parent) {
        Some(dir) if rel.is_relative() => dir.join(&rel),
        _ => rel,
    };
    let set = io::load_stuff_list(&path)?;
    run.input("stuff_list", &path);
    Ok(set)
}

#[allow(clippy::too_many_arguments)]
pub fn refine(
    run: &mut Run,
    config_path: Option<&Path>,
    input: &Path,
    tasks_path: &Path,
    vocab: &Path,
    output: &Path,
    report: Option<&Path>,
) -> Result<()> {
    let selected: Vec<AnnotationRecord> = io::read_jsonl(run.input("selected", input))?;
    let tasks = tasks(run, "tasks", tasks_path)?;
    let vocabulary = io::load_vocabulary(run.input("vocabulary", vocab))?;
    let stuff = stuff_list(run, config_path)?;

    let mut by_task: HashMap<&str, &AnnotationRecord> = HashMap::new();
    for a in &selected {
        if by_task.insert(a.task_id.as_str(), a).is_some() {
            bail!("task {}: more than one selected annotation", a.task_id);
        }
    }
    let task_ids: HashSet<&str> = tasks.iter().map(|t| t.task_id.as_str()).collect();
    let stray = selected.iter().filter(|a| !task_ids.contains(a.task_id.as_str())).count();
    if stray > 0 {
        run.warn(format!("{stray} selected annotations reference unknown tasks and were skipped"));
    }

    let cfg = run.config();
    let refined: Vec<Option<(PhraseTask, TaskProvenance)>> = tasks
        .par_iter()
        .map(|t| -> Result<_> {
            let Some(a) = by_task.get(t.task_id.as_str()) else {
                return Ok(None);
            };
            let ann = a.into_annotation(t.image_size)?;
            let set = refine_instances(&ann.polygons, t, &t.vg_boxes, &cfg.refine)?;
            let prov = TaskProvenance {
                task_id: t.task_id.clone(),
                worker_id: a.worker_id.clone(),
                instances: set.instances.len(),
                events: set.provenance,
            };
            if set.instances.is_empty() {
                return Ok(Some((t.clone(), prov)));
            }
            let mut task = t.clone();
            task.instances = set.instances;
            Ok(Some((assign_subsets(&task, &vocabulary, &stuff, &cfg.subsets)?, prov)))
        })
        .collect::<Result<_>>()?;

    let mut out = Vec::new();
    let mut provenance = Vec::new();
    let (mut unannotated, mut empty) = (0, 0);
    for r in refined {
        match r {
            None => unannotated += 1,
            Some((t, p)) => {
                if t.instances.is_empty() {
                    empty += 1;
                } else {
                    out.push(t);
                }
                provenance.push(p);
            }
        }
    }
    io::write_tasks(run.output("tasks", output), &out)?;
    if let Some(r) = report {
        let summary = RefineSummary {
            tasks_in: tasks.len(),
            tasks_refined: out.len(),
            tasks_unannotated: unannotated,
            tasks_empty: empty,
            provenance,
        };
        io::write_json(run.output("report", r), &summary)?;
    }
    Ok(())
}

pub fn eval(run: &mut Run, tasks_path: &Path, preds: &Path, report: &Path) -> Result<()> {
    let (tasks, unknown) = io::load_tasks(run.input("tasks", tasks_path))?;
    let predictions: Vec<PredictionRecord> = io::read_jsonl(run.input("predictions", preds))?;
    let result = evaluate_by_subset(&tasks, &predictions, &unknown)?;
    io::write_json(run.output("report", report), &result)?;
    Ok(())
}

fn detections(run: &mut Run, path: &Path) -> Result<Vec<ImageDetections>> {
    Ok(load_detections(run.input("detections", path))?)
}

/// Configured channel counts, or one past the largest index seen.
fn channel_counts(run: &Run, dets: &[ImageDetections]) -> (usize, usize) {
    let all = dets.iter().flat_map(|d| &d.detections);
    let max_cat = all.clone().map(|d| d.category_index + 1).max().unwrap_or(0);
    let max_att = all.flat_map(|d| &d.attributes).map(|(a, _)| a + 1).max().unwrap_or(0);
    let m = &run.config().model;
    (m.n_categories.unwrap_or(max_cat.max(1)), m.n_attributes.unwrap_or(max_att.max(1)))
}

#[derive(Debug, Serialize)]
struct ChannelRecord {
    image_id: u64,
    width: u32,
    height: u32,
    /// Non-zero planes only, keyed by channel index, row-major.
    categories: BTreeMap<usize, Vec<f64>>,
    attributes: BTreeMap<usize, Vec<f64>>,
}

pub fn channels(run: &mut Run, input: &Path, output: &Path) -> Result<()> {
    let dets = detections(run, input)?;
    let (n_cat, n_att) = channel_counts(run, &dets);
    let (w, h) = (run.config().model.architecture.channel_width, run.config().model.architecture.channel_height);
    let nonzero = |stack: forge_core::ChannelStack| -> BTreeMap<usize, Vec<f64>> {
        (0..stack.n_channels())
            .filter(|&c| stack.channel(c).iter().any(|&v| v != 0.0))
            .map(|c| (c, stack.channel(c).to_vec()))
            .collect()
    };
    let records: Vec<ChannelRecord> = dets
        .par_iter()
        .map(|d| -> Result<_> {
            let cats = build_channels(&d.detections, n_cat, w, h)
                .with_context(|| format!("image {}", d.image_id))?;
            let atts = build_attribute_channels(&d.detections, n_att, w, h)
                .with_context(|| format!("image {}", d.image_id))?;
            Ok(ChannelRecord {
                image_id: d.image_id,
                width: w,
                height: h,
                categories: nonzero(cats),
                attributes: nonzero(atts),
            })
        })
        .collect::<Result<_>>()?;
    io::write_jsonl(run.output("channels", output), &records)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    n_train: usize,
    n_validation: usize,
    n_categories: usize,
    n_attributes: usize,
    n_words: usize,
    n_params: usize,
    embeddings_loaded: usize,
    threshold: f64,
    threshold_selected_on: &'static str,
    train_metrics: Metrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    validation_metrics: Option<Metrics>,
    #[serde(flatten)]
    losses: forge_core::model::TrainReport,
}

/// Every distinct token of every phrase slot, sorted.
fn word_index(tasks: &[PhraseTask]) -> WordIndex {
    let mut words = BTreeSet::new();
    for t in tasks {
        let s = &t.structure;
        let slots = std::iter::once(s.category.as_str())
            .chain(s.attributes.iter().map(String::as_str))
            .chain(s.relationships.iter().flat_map(|r| [r.predicate.as_str(), r.supporting_category.as_str()]));
        for slot in slots {
            words.extend(slot.split_whitespace().map(str::to_string));
        }
    }
    WordIndex::new(words)
}

fn heat_maps(params: &ModelParams, tasks: &[PhraseTask], dets: &[ImageDetections]) -> Result<Vec<(forge_core::HeatMap, forge_core::geometry::RleMask)>> {
    let channels = forge_core::model::image_channels(tasks, dets, params)?;
    tasks
        .par_iter()
        .map(|t| {
            let words = forge_core::model::PhraseWords::from_structure(&t.structure, &params.words);
            let map = predict_heat_map(params, &channels[&t.image_id], &words)?;
            let size = t.image_size;
            Ok((map.upsample_nearest(size.width, size.height), t.ground_truth()?))
        })
        .collect()
}

fn metrics_at(maps: &[(forge_core::HeatMap, forge_core::geometry::RleMask)], threshold: f64) -> Result<Metrics> {
    let pairs = maps
        .iter()
        .map(|(m, t)| PairCounts::of(&m.threshold(threshold), t))
        .collect::<forge_core::Result<Vec<_>>>()?;
    Ok(Metrics::from_pairs(&pairs))
}

#[allow(clippy::too_many_arguments)]
pub fn train_model(
    run: &mut Run,
    input: &Path,
    dets_path: &Path,
    output: &Path,
    validation: Option<&Path>,
    embeddings: Option<&Path>,
    report: Option<&Path>,
) -> Result<()> {
    let train_tasks = tasks(run, "tasks", input)?;
    let val_tasks = match validation {
        Some(p) => Some(tasks(run, "validation", p)?),
        None => None,
    };
    let dets = detections(run, dets_path)?;
    let (n_cat, n_att) = channel_counts(run, &dets);
    let cfg = run.config().clone();
    let mut params = ModelParams::init(cfg.model.architecture.clone(), n_cat, n_att, word_index(&train_tasks), cfg.seed)?;
    let mut loaded = 0;
    if let Some(e) = embeddings {
        let table = load_embedding_table(run.input("embeddings", e))?;
        loaded = params.load_embeddings(&table)?;
    }
    let samples = prepare_samples(&train_tasks, &dets, &params, cfg.train.positive_weight_cap)?;
    let losses = train(&samples, &mut params, &cfg.train, cfg.seed)?;

    let train_maps = heat_maps(&params, &train_tasks, &dets)?;
    let val_maps = match &val_tasks {
        Some(v) => Some(heat_maps(&params, v, &dets)?),
        None => None,
    };
    let (threshold, selected_on) = match &val_maps {
        Some(v) => (select_threshold(v)?, "validation"),
        None => (select_threshold(&train_maps)?, "train"),
    };
    params.threshold = threshold;
    params.save(run.output("model", output))?;

    if let Some(r) = report {
        let summary = TrainSummary {
            n_train: train_tasks.len(),
            n_validation: val_tasks.as_ref().map_or(0, Vec::len),
            n_categories: n_cat,
            n_attributes: n_att,
            n_words: params.words.words().len(),
            n_params: params.n_params(),
            embeddings_loaded: loaded,
            threshold,
            threshold_selected_on: selected_on,
            train_metrics: metrics_at(&train_maps, threshold)?,
            validation_metrics: val_maps.as_ref().map(|v| metrics_at(v, threshold)).transpose()?,
            losses,
        };
        io::write_json(run.output("report", r), &summary)?;
    }
    Ok(())
}

pub fn predict(
    run: &mut Run,
    input: &Path,
    dets_path: &Path,
    model: &Path,
    substitutions: Option<&Path>,
    output: &Path,
) -> Result<()> {
    let mut tasks = tasks(run, "tasks", input)?;
    let dets = detections(run, dets_path)?;
    let params = ModelParams::load(run.input("model", model))?;
    if let Some(s) = substitutions {
        let map: SubstitutionMap = io::read_json(run.input("substitutions", s))?;
        for t in &mut tasks {
            let s = &mut t.structure;
            s.category = map.substitute(&s.category).to_string();
            for r in &mut s.relationships {
                r.supporting_category = map.substitute(&r.supporting_category).to_string();
            }
        }
    }
    let preds = predict_tasks(&params, &tasks, &dets)?;
    io::write_jsonl(run.output("predictions", output), &preds)?;
    Ok(())
}

pub fn substitute(run: &mut Run, input: &Path, dets_path: &Path, vocab: &Path, output: &Path) -> Result<()> {
    let tasks = tasks(run, "tasks", input)?;
    let dets = detections(run, dets_path)?;
    let vocabulary = io::load_vocabulary(run.input("vocabulary", vocab))?;
    let by_image: HashMap<u64, &ImageDetections> = dets.iter().map(|d| (d.image_id, d)).collect();
    let arch = &run.config().model.architecture;
    let (w, h) = (arch.channel_width, arch.channel_height);
    let threshold = run.config().eval.substitution_threshold;

    let masks: ChannelMasks = tasks
        .par_iter()
        .map(|t| -> Result<_> {
            let d = by_image
                .get(&t.image_id)
                .with_context(|| format!("image {}: no detection record", t.image_id))?;
            let stack = build_channels::<f64>(&d.detections, vocabulary.len(), w, h)
                .with_context(|| format!("image {}: detections must index the vocabulary", t.image_id))?;
            let ImageSize { width, height } = t.image_size;
            let per_category = (0..vocabulary.len())
                .map(|c| stack.channel_map(c).upsample_nearest(width, height).threshold(threshold))
                .collect();
            Ok((t.task_id.clone(), per_category))
        })
        .collect::<Result<_>>()?;
    let map = build_substitution_map(&tasks, &masks, &vocabulary)?;
    io::write_json(run.output("substitutions", output), &map)?;
    Ok(())
}
