//! Visual-Genome-style scene graphs: objects with boxes, category names,
//! attributes and relationships.

use std::collections::{BTreeSet, HashMap};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, ImageSize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relationship {
    pub predicate: String,
    pub object_id: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectNode {
    pub id: u64,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub names: Vec<String>,
    #[serde(default)]
    pub attributes: Vec<String>,
    #[serde(default)]
    pub relationships: Vec<Relationship>,
}

impl ObjectNode {
    pub fn has_name(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    pub fn has_attribute(&self, attribute: &str) -> bool {
        self.attributes.iter().any(|a| a == attribute)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneGraph {
    pub image_id: u64,
    pub image_size: ImageSize,
    pub objects: Vec<ObjectNode>,
}

/// On-disk line layout.
#[derive(Debug, Serialize, Deserialize)]
struct GraphRecord {
    image_id: u64,
    width: u32,
    height: u32,
    objects: Vec<ObjectNode>,
}

impl SceneGraph {
    pub fn object(&self, id: u64) -> Option<&ObjectNode> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// Serializes to one JSON Lines record.
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(&GraphRecord {
            image_id: self.image_id,
            width: self.image_size.width,
            height: self.image_size.height,
            objects: self.objects.clone(),
        })?)
    }
}

/// Lowercases, trims and collapses internal whitespace.
pub fn normalize_label(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Default)]
pub struct LoadedGraphs {
    pub graphs: Vec<SceneGraph>,
    /// Relationships dropped because their target id was not in the graph.
    pub dangling_relationships: usize,
}

pub fn load_scene_graphs(path: &Path) -> Result<LoadedGraphs> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_scene_graphs(std::io::BufReader::new(file))
}

pub fn parse_scene_graphs(reader: impl BufRead) -> Result<LoadedGraphs> {
    let mut out = LoadedGraphs::default();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        let image_id = match value.get("image_id") {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(v) => v.to_string(),
            None => format!("<line {}>", n + 1),
        };
        let record: GraphRecord = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            Error::Record {
                image_id: image_id.clone(),
                field: if path == "." { "<record>".into() } else { path },
                message: e.into_inner().to_string(),
            }
        })?;
        let (graph, dropped) = validate(record)?;
        if dropped > 0 {
            log::warn!(
                "image {}: dropped {dropped} relationship(s) with missing targets",
                graph.image_id
            );
        }
        out.dangling_relationships += dropped;
        out.graphs.push(graph);
    }
    Ok(out)
}

fn validate(record: GraphRecord) -> Result<(SceneGraph, usize)> {
    let image_id = record.image_id.to_string();
    let field_err = |field: String, message: &str| Error::Record {
        image_id: image_id.clone(),
        field,
        message: message.to_string(),
    };
    if record.width == 0 {
        return Err(field_err("width".into(), "must be positive"));
    }
    if record.height == 0 {
        return Err(field_err("height".into(), "must be positive"));
    }
    let image_size = ImageSize::new(record.width, record.height)?;

    let mut seen = BTreeSet::new();
    for (i, obj) in record.objects.iter().enumerate() {
        if !seen.insert(obj.id) {
            return Err(field_err(format!("objects[{i}].id"), "duplicate object id"));
        }
    }

    let mut dropped = 0;
    let mut objects = Vec::with_capacity(record.objects.len());
    for (i, obj) in record.objects.into_iter().enumerate() {
        let names = dedup_labels(&obj.names);
        if names.is_empty() {
            return Err(field_err(format!("objects[{i}].names"), "no category name"));
        }
        let before = obj.relationships.len();
        let relationships: Vec<Relationship> = obj
            .relationships
            .into_iter()
            .filter(|r| seen.contains(&r.object_id))
            .map(|r| Relationship {
                predicate: normalize_label(&r.predicate),
                object_id: r.object_id,
            })
            .collect();
        dropped += before - relationships.len();
        objects.push(ObjectNode {
            id: obj.id,
            bbox: obj.bbox.clamp(image_size),
            names,
            attributes: dedup_labels(&obj.attributes),
            relationships,
        });
    }
    Ok((
        SceneGraph {
            image_id: record.image_id,
            image_size,
            objects,
        },
        dropped,
    ))
}

/// Normalizes labels, dropping empties and repeats while keeping first-seen order.
fn dedup_labels(labels: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(labels.len());
    for l in labels {
        let l = normalize_label(l);
        if !l.is_empty() && !out.contains(&l) {
            out.push(l);
        }
    }
    out
}

/// Box area as a fraction of the image area, clamped to `[0, 1]`.
pub fn relative_size(b: &BoundingBox, img: ImageSize) -> f64 {
    (b.area() as f64 / img.area() as f64).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub name: String,
    pub frequency: u64,
}

/// Categories ranked by descending frequency, ties broken lexicographically.
/// Ranks are 1-based.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CategoryVocabulary {
    entries: Vec<VocabEntry>,
    index: HashMap<String, usize>,
}

impl CategoryVocabulary {
    pub fn from_frequencies(freqs: impl IntoIterator<Item = (String, u64)>) -> Self {
        let mut merged: HashMap<String, u64> = HashMap::new();
        for (name, f) in freqs {
            *merged.entry(name).or_default() += f;
        }
        let mut entries: Vec<VocabEntry> = merged
            .into_iter()
            .map(|(name, frequency)| VocabEntry { name, frequency })
            .collect();
        entries.sort_by(|a, b| b.frequency.cmp(&a.frequency).then_with(|| a.name.cmp(&b.name)));
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.name.clone(), i))
            .collect();
        Self { entries, index }
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// 1-based frequency rank.
    pub fn rank(&self, name: &str) -> Option<usize> {
        self.index.get(name).map(|i| i + 1)
    }

    /// 0-based position, used as the channel index.
    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, position: usize) -> Option<&str> {
        self.entries.get(position).map(|e| e.name.as_str())
    }
}

/// Counts every category-name occurrence and keeps those seen at least
/// `min_frequency` times.
pub fn build_vocabulary(graphs: &[SceneGraph], min_frequency: u64) -> CategoryVocabulary {
    let mut counts: HashMap<String, u64> = HashMap::new();
    for obj in graphs.iter().flat_map(|g| &g.objects) {
        for name in &obj.names {
            *counts.entry(name.clone()).or_default() += 1;
        }
    }
    CategoryVocabulary::from_frequencies(
        counts.into_iter().filter(|(_, f)| *f >= min_frequency.max(1)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<LoadedGraphs> {
        parse_scene_graphs(text.as_bytes())
    }

    #[test]
    fn empty_input() {
        let loaded = parse("").unwrap();
        assert!(loaded.graphs.is_empty());
        assert_eq!(loaded.dangling_relationships, 0);
    }

    #[test]
    fn one_object_graph() {
        let loaded = parse(
            r#"{"image_id":1,"width":100,"height":80,"objects":[{"id":5,"box":[10,10,20,20],"names":["  Tall   Man "]}]}"#,
        )
        .unwrap();
        let g = &loaded.graphs[0];
        assert_eq!(g.objects.len(), 1);
        assert_eq!(g.objects[0].names, vec!["tall man"]);
        assert!(g.objects[0].relationships.is_empty());
    }

    #[test]
    fn dangling_relationship_dropped() {
        let loaded = parse(
            r#"{"image_id":2,"width":10,"height":10,"objects":[
                {"id":1,"box":[0,0,5,5],"names":["cup"],"relationships":[{"predicate":"on","object_id":9},{"predicate":"near","object_id":2}]},
                {"id":2,"box":[5,5,5,5],"names":["table"]}]}"#
                .replace('\n', "")
                .as_str(),
        )
        .unwrap();
        assert_eq!(loaded.dangling_relationships, 1);
        assert_eq!(loaded.graphs[0].objects[0].relationships.len(), 1);
    }

    #[test]
    fn boxes_clamped_on_load() {
        let loaded = parse(
            r#"{"image_id":3,"width":10,"height":10,"objects":[{"id":1,"box":[-2,5,20,20],"names":["sky"]}]}"#,
        )
        .unwrap();
        assert_eq!(
            loaded.graphs[0].objects[0].bbox,
            BoundingBox::new(0, 5, 10, 5).unwrap()
        );
    }

    #[test]
    fn malformed_records_name_image_and_field() {
        let err = parse(r#"{"image_id":7,"height":10,"objects":[]}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("image 7") && msg.contains("width"), "{msg}");

        let err = parse(
            r#"{"image_id":8,"width":10,"height":10,"objects":[{"id":1,"box":[0,0,-1,2],"names":["a"]}]}"#,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("image 8") && msg.contains("objects[0].box"), "{msg}");

        let err = parse(
            r#"{"image_id":9,"width":10,"height":10,"objects":[{"id":1,"box":[0,0,1,2],"names":[" "]}]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("objects[0].names"));

        let err = parse(
            r#"{"image_id":10,"width":10,"height":10,"objects":[{"id":1,"box":[0,0,1,2],"names":["a"]},{"id":1,"box":[0,0,1,2],"names":["b"]}]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("objects[1].id"));
    }

    #[test]
    fn relative_size_examples() {
        let img = ImageSize::new(100, 100).unwrap();
        assert_eq!(relative_size(&BoundingBox::new(0, 0, 20, 10).unwrap(), img), 0.02);
        assert_eq!(relative_size(&BoundingBox::new(0, 0, 100, 100).unwrap(), img), 1.0);
        let img = ImageSize::new(100, 90).unwrap();
        assert_eq!(relative_size(&BoundingBox::new(0, 0, 30, 30).unwrap(), img), 0.1);
    }

    fn graph_with_names(names: &[&str]) -> SceneGraph {
        SceneGraph {
            image_id: 1,
            image_size: ImageSize::new(10, 10).unwrap(),
            objects: names
                .iter()
                .enumerate()
                .map(|(i, n)| ObjectNode {
                    id: i as u64,
                    bbox: BoundingBox::new(0, 0, 1, 1).unwrap(),
                    names: vec![n.to_string()],
                    attributes: vec![],
                    relationships: vec![],
                })
                .collect(),
        }
    }

    #[test]
    fn vocabulary_examples() {
        assert!(build_vocabulary(&[], 1).is_empty());
        let mut names = vec!["a"; 5];
        names.extend(["b"; 3]);
        let vocab = build_vocabulary(&[graph_with_names(&names)], 4);
        assert_eq!(vocab.len(), 1);
        assert_eq!(vocab.rank("a"), Some(1));
        assert_eq!(vocab.rank("b"), None);

        let vocab = build_vocabulary(&[graph_with_names(&["zebra", "apple", "mango", "mango"])], 1);
        let order: Vec<&str> = vocab.entries().iter().map(|e| e.name.as_str()).collect();
        assert_eq!(order, vec!["mango", "apple", "zebra"]);
    }
}
