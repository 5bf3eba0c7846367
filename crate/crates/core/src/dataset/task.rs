use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, ImageSize, RleMask};

/// Subset labels used to break evaluation down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SubsetTag {
    CatPlus,
    AttPlus,
    RelPlus,
    Att,
    Rel,
    Single,
    Multi,
    Many,
    Small,
    Mid,
    Large,
    Stuff,
    Obj,
    Freq1To100,
    Freq101To500,
    Freq500Plus,
}

impl SubsetTag {
    pub const ALL: [SubsetTag; 16] = [
        SubsetTag::CatPlus,
        SubsetTag::AttPlus,
        SubsetTag::RelPlus,
        SubsetTag::Att,
        SubsetTag::Rel,
        SubsetTag::Single,
        SubsetTag::Multi,
        SubsetTag::Many,
        SubsetTag::Small,
        SubsetTag::Mid,
        SubsetTag::Large,
        SubsetTag::Stuff,
        SubsetTag::Obj,
        SubsetTag::Freq1To100,
        SubsetTag::Freq101To500,
        SubsetTag::Freq500Plus,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SubsetTag::CatPlus => "cat+",
            SubsetTag::AttPlus => "att+",
            SubsetTag::RelPlus => "rel+",
            SubsetTag::Att => "att",
            SubsetTag::Rel => "rel",
            SubsetTag::Single => "single",
            SubsetTag::Multi => "multi",
            SubsetTag::Many => "many",
            SubsetTag::Small => "small",
            SubsetTag::Mid => "mid",
            SubsetTag::Large => "large",
            SubsetTag::Stuff => "stuff",
            SubsetTag::Obj => "obj",
            SubsetTag::Freq1To100 => "freq_1_100",
            SubsetTag::Freq101To500 => "freq_101_500",
            SubsetTag::Freq500Plus => "freq_500+",
        }
    }

    pub fn is_discriminative(&self) -> bool {
        matches!(self, SubsetTag::CatPlus | SubsetTag::AttPlus | SubsetTag::RelPlus)
    }

    pub fn is_size(&self) -> bool {
        matches!(self, SubsetTag::Small | SubsetTag::Mid | SubsetTag::Large)
    }

    pub fn is_count(&self) -> bool {
        matches!(self, SubsetTag::Single | SubsetTag::Multi | SubsetTag::Many)
    }

    pub fn is_frequency(&self) -> bool {
        matches!(
            self,
            SubsetTag::Freq1To100 | SubsetTag::Freq101To500 | SubsetTag::Freq500Plus
        )
    }
}

impl fmt::Display for SubsetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SubsetTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        SubsetTag::ALL
            .iter()
            .find(|t| t.as_str() == s)
            .copied()
            .ok_or_else(|| s.to_string())
    }
}

/// A relationship as it appears in a phrase: predicate plus the supporting
/// object's category.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationDescription {
    pub predicate: String,
    pub supporting_category: String,
}

/// Parsed phrase: what the category, attribute and relationship slots hold.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(from = "StructureJson", into = "StructureJson")]
pub struct PhraseStructure {
    pub category: String,
    pub attributes: Vec<String>,
    pub relationships: Vec<RelationDescription>,
    /// Explicit plural marker; the category's own plurality is checked separately.
    pub plural: bool,
}

/// The file layout keeps the first relationship under `relationship` and any
/// further ones (only produced by the exhaustive heuristic) under
/// `extra_relationships`.
#[derive(Serialize, Deserialize)]
struct StructureJson {
    category: String,
    #[serde(default)]
    attributes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    relationship: Option<RelationDescription>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    extra_relationships: Vec<RelationDescription>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    plural: bool,
}

impl From<StructureJson> for PhraseStructure {
    fn from(s: StructureJson) -> Self {
        let relationships = s.relationship.into_iter().chain(s.extra_relationships).collect();
        PhraseStructure {
            category: s.category,
            attributes: s.attributes,
            relationships,
            plural: s.plural,
        }
    }
}

impl From<PhraseStructure> for StructureJson {
    fn from(s: PhraseStructure) -> Self {
        let mut rels = s.relationships.into_iter();
        StructureJson {
            category: s.category,
            attributes: s.attributes,
            relationship: rels.next(),
            extra_relationships: rels.collect(),
            plural: s.plural,
        }
    }
}

impl PhraseStructure {
    /// `<attributes> <category> <predicate> <supporting category> …`, single-spaced, lowercase.
    pub fn render(&self) -> String {
        let mut words: Vec<&str> = self.attributes.iter().map(String::as_str).collect();
        words.push(&self.category);
        for r in &self.relationships {
            words.push(&r.predicate);
            words.push(&r.supporting_category);
        }
        crate::scene_graph::normalize_label(&words.join(" "))
    }

    pub fn has_attributes(&self) -> bool {
        !self.attributes.is_empty()
    }

    pub fn has_relationships(&self) -> bool {
        !self.relationships.is_empty()
    }

    pub fn is_plural(&self) -> bool {
        self.plural || is_plural_category(&self.category)
    }
}

/// Words ending in "s" that are nonetheless singular.
const SINGULAR_EXCEPTIONS: &[&str] = &[
    "bus", "glass", "grass", "dress", "class", "cross", "moss", "mattress", "canvas", "gas",
    "lens", "cactus", "tennis", "compass", "harness", "iris", "octopus", "circus", "walrus",
    "chess", "news", "bass", "boss", "mass", "princess", "address", "press",
    "hippopotamus", "bonus", "status", "virus", "asparagus", "hummus", "abyss", "atlas",
];

/// A category is plural when its last word ends in "s" and is not a known
/// singular exception.
pub fn is_plural_category(category: &str) -> bool {
    let last = category.split_whitespace().last().unwrap_or("");
    if SINGULAR_EXCEPTIONS.contains(&category) || SINGULAR_EXCEPTIONS.contains(&last) {
        return false;
    }
    last.len() > 1 && last.ends_with('s')
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub rle: RleMask,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

/// A referring phrase for one sampled box, plus its ground truth once annotated.
#[derive(Debug, Clone, PartialEq)]
pub struct PhraseTask {
    pub task_id: String,
    pub image_id: u64,
    pub image_size: ImageSize,
    pub phrase: String,
    pub structure: PhraseStructure,
    pub subset_tags: BTreeSet<SubsetTag>,
    pub source_box_id: u64,
    /// Scene-graph boxes matching the phrase; used by annotation QC and refinement.
    pub vg_boxes: Vec<BoundingBox>,
    pub instances: Vec<Instance>,
}

#[derive(Serialize, Deserialize)]
struct TaskJson {
    task_id: String,
    image_id: u64,
    width: u32,
    height: u32,
    phrase: String,
    structure: PhraseStructure,
    #[serde(default)]
    subset_tags: Vec<String>,
    source_box_id: u64,
    #[serde(default)]
    vg_boxes: Vec<BoundingBox>,
    #[serde(default)]
    instances: Vec<Instance>,
}

impl PhraseTask {
    pub fn task_id_for(image_id: u64, object_id: u64) -> String {
        format!("{image_id}_{object_id}")
    }

    pub fn has_tag(&self, tag: SubsetTag) -> bool {
        self.subset_tags.contains(&tag)
    }

    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(&TaskJson {
            task_id: self.task_id.clone(),
            image_id: self.image_id,
            width: self.image_size.width,
            height: self.image_size.height,
            phrase: self.phrase.clone(),
            structure: self.structure.clone(),
            subset_tags: self.subset_tags.iter().map(|t| t.as_str().to_string()).collect(),
            source_box_id: self.source_box_id,
            vg_boxes: self.vg_boxes.clone(),
            instances: self.instances.clone(),
        })?)
    }

    /// Parses one JSON Lines record; unknown subset tags are returned, not rejected.
    pub fn from_json_line(line: &str) -> Result<(PhraseTask, Vec<String>)> {
        let raw: TaskJson = serde_json::from_str(line)?;
        let image_size = ImageSize::new(raw.width, raw.height).map_err(|e| Error::Task {
            task_id: raw.task_id.clone(),
            message: e.to_string(),
        })?;
        let mut tags = BTreeSet::new();
        let mut unknown = Vec::new();
        for t in raw.subset_tags {
            match t.parse::<SubsetTag>() {
                Ok(tag) => {
                    tags.insert(tag);
                }
                Err(s) => unknown.push(s),
            }
        }
        for inst in &raw.instances {
            if inst.rle.size() != image_size {
                return Err(Error::Task {
                    task_id: raw.task_id,
                    message: "instance mask size differs from the image size".into(),
                });
            }
        }
        Ok((
            PhraseTask {
                task_id: raw.task_id,
                image_id: raw.image_id,
                image_size,
                phrase: raw.phrase,
                structure: raw.structure,
                subset_tags: tags,
                source_box_id: raw.source_box_id,
                vg_boxes: raw.vg_boxes,
                instances: raw.instances,
            },
            unknown,
        ))
    }

    /// Union of the target instance masks.
    pub fn ground_truth(&self) -> Result<RleMask> {
        if self.instances.is_empty() {
            return Err(Error::Task {
                task_id: self.task_id.clone(),
                message: "no target instances".into(),
            });
        }
        let masks: Vec<RleMask> = self.instances.iter().map(|i| i.rle.clone()).collect();
        crate::geometry::mask_union(&masks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tag_strings_roundtrip() {
        for t in SubsetTag::ALL {
            assert_eq!(t.as_str().parse::<SubsetTag>().unwrap(), t);
        }
        assert!("huge".parse::<SubsetTag>().is_err());
    }

    #[test]
    fn render_template() {
        let s = PhraseStructure {
            category: "bear".into(),
            attributes: vec!["small".into(), "white".into()],
            relationships: vec![RelationDescription {
                predicate: "on".into(),
                supporting_category: "wall".into(),
            }],
            plural: false,
        };
        assert_eq!(s.render(), "small white bear on wall");
    }

    #[test]
    fn plurality() {
        assert!(is_plural_category("bears"));
        assert!(is_plural_category("tennis shoes"));
        assert!(!is_plural_category("bear"));
        assert!(!is_plural_category("grass"));
        assert!(!is_plural_category("bus"));
        assert!(!is_plural_category("glass"));
        assert!(!is_plural_category("cactus"));
    }

    #[test]
    fn structure_json_layout() {
        let s = PhraseStructure {
            category: "bear".into(),
            attributes: vec![],
            relationships: vec![RelationDescription {
                predicate: "holding".into(),
                supporting_category: "paper".into(),
            }],
            plural: false,
        };
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(
            json,
            r#"{"category":"bear","attributes":[],"relationship":{"predicate":"holding","supporting_category":"paper"}}"#
        );
        assert_eq!(serde_json::from_str::<PhraseStructure>(&json).unwrap(), s);
    }

    #[test]
    fn unknown_tags_reported() {
        let line = r#"{"task_id":"1_1","image_id":1,"width":4,"height":4,"phrase":"cup","structure":{"category":"cup"},"subset_tags":["single","sparkly"],"source_box_id":1}"#;
        let (task, unknown) = PhraseTask::from_json_line(line).unwrap();
        assert!(task.has_tag(SubsetTag::Single));
        assert_eq!(unknown, vec!["sparkly"]);
        assert!(task.ground_truth().is_err());
    }
}
