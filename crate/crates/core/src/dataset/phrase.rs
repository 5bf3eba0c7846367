//! Templated phrase generation.
//!
//! Four heuristics are tried in order for the target box:
//!
//! 1. one of its category names appears on no other box: that name, plus one
//!    random attribute or relationship of the box when it has any (`cat+`);
//! 2. an attribute appears on no other box of the same category: attribute +
//!    name (`att+`);
//! 3. a relationship description (predicate + supporting category) appears on
//!    no other box of the same category: name + relationship (`rel+`);
//! 4. otherwise all attributes, a random name, and all relationships.

use std::collections::BTreeSet;

use rand::Rng;

use super::task::{PhraseStructure, PhraseTask, RelationDescription, SubsetTag};
use crate::error::{Error, Result};
use crate::scene_graph::{ObjectNode, SceneGraph};

/// Which heuristic produced a phrase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Heuristic {
    UniqueCategory,
    UniqueAttribute,
    UniqueRelationship,
    Exhaustive,
}

impl Heuristic {
    pub const ALL: [Heuristic; 4] = [
        Heuristic::UniqueCategory,
        Heuristic::UniqueAttribute,
        Heuristic::UniqueRelationship,
        Heuristic::Exhaustive,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Heuristic::UniqueCategory => "unique_category",
            Heuristic::UniqueAttribute => "unique_attribute",
            Heuristic::UniqueRelationship => "unique_relationship",
            Heuristic::Exhaustive => "exhaustive",
        }
    }

    pub fn tag(&self) -> Option<SubsetTag> {
        match self {
            Heuristic::UniqueCategory => Some(SubsetTag::CatPlus),
            Heuristic::UniqueAttribute => Some(SubsetTag::AttPlus),
            Heuristic::UniqueRelationship => Some(SubsetTag::RelPlus),
            Heuristic::Exhaustive => None,
        }
    }
}

fn others<'a>(graph: &'a SceneGraph, target: &'a ObjectNode) -> impl Iterator<Item = &'a ObjectNode> {
    graph.objects.iter().filter(move |o| o.id != target.id)
}

/// Other boxes carrying `name`.
fn same_category<'a>(
    graph: &'a SceneGraph,
    target: &'a ObjectNode,
    name: &'a str,
) -> impl Iterator<Item = &'a ObjectNode> {
    others(graph, target).filter(move |o| o.has_name(name))
}

/// All `(predicate, supporting name)` descriptions an object's relationships admit.
fn relation_descriptions(graph: &SceneGraph, obj: &ObjectNode) -> Vec<RelationDescription> {
    let mut out = Vec::new();
    for rel in &obj.relationships {
        if let Some(support) = graph.object(rel.object_id) {
            for name in &support.names {
                out.push(RelationDescription {
                    predicate: rel.predicate.clone(),
                    supporting_category: name.clone(),
                });
            }
        }
    }
    out
}

/// One description per relationship, using the supporting object's first name.
fn primary_relations(graph: &SceneGraph, obj: &ObjectNode) -> Vec<RelationDescription> {
    obj.relationships
        .iter()
        .filter_map(|rel| {
            graph.object(rel.object_id).map(|support| RelationDescription {
                predicate: rel.predicate.clone(),
                supporting_category: support.names[0].clone(),
            })
        })
        .collect()
}

pub fn has_relation(graph: &SceneGraph, obj: &ObjectNode, desc: &RelationDescription) -> bool {
    obj.relationships.iter().any(|r| {
        r.predicate == desc.predicate
            && graph
                .object(r.object_id)
                .is_some_and(|s| s.has_name(&desc.supporting_category))
    })
}

/// Condition for heuristic 1: the first name carried by no other box.
pub fn unique_category(graph: &SceneGraph, target: &ObjectNode) -> Option<String> {
    target
        .names
        .iter()
        .find(|n| !others(graph, target).any(|o| o.has_name(n)))
        .cloned()
}

/// Condition for heuristic 2: `(name, attribute)` with the attribute absent
/// from every other box of that name.
pub fn unique_attribute(graph: &SceneGraph, target: &ObjectNode) -> Option<(String, String)> {
    for name in &target.names {
        for attr in &target.attributes {
            if !same_category(graph, target, name).any(|o| o.has_attribute(attr)) {
                return Some((name.clone(), attr.clone()));
            }
        }
    }
    None
}

/// Condition for heuristic 3: `(name, relationship)` with the relationship
/// description absent from every other box of that name.
pub fn unique_relationship(
    graph: &SceneGraph,
    target: &ObjectNode,
) -> Option<(String, RelationDescription)> {
    let descs = relation_descriptions(graph, target);
    for name in &target.names {
        for desc in &descs {
            if !same_category(graph, target, name).any(|o| has_relation(graph, o, desc)) {
                return Some((name.clone(), desc.clone()));
            }
        }
    }
    None
}

/// Builds the phrase for `target_id` and reports which heuristic fired.
pub fn generate_phrase_with_heuristic<R: Rng + ?Sized>(
    graph: &SceneGraph,
    target_id: u64,
    rng: &mut R,
) -> Result<(PhraseTask, Heuristic)> {
    let target = graph.object(target_id).ok_or_else(|| Error::Task {
        task_id: PhraseTask::task_id_for(graph.image_id, target_id),
        message: "target object not in scene graph".into(),
    })?;

    let (structure, heuristic) = if let Some(name) = unique_category(graph, target) {
        let relations = primary_relations(graph, target);
        let n_mod = target.attributes.len() + relations.len();
        let mut s = PhraseStructure {
            category: name,
            ..Default::default()
        };
        if n_mod > 0 {
            let pick = rng.random_range(0..n_mod);
            if pick < target.attributes.len() {
                s.attributes.push(target.attributes[pick].clone());
            } else {
                s.relationships.push(relations[pick - target.attributes.len()].clone());
            }
        }
        (s, Heuristic::UniqueCategory)
    } else if let Some((name, attr)) = unique_attribute(graph, target) {
        (
            PhraseStructure {
                category: name,
                attributes: vec![attr],
                ..Default::default()
            },
            Heuristic::UniqueAttribute,
        )
    } else if let Some((name, rel)) = unique_relationship(graph, target) {
        (
            PhraseStructure {
                category: name,
                relationships: vec![rel],
                ..Default::default()
            },
            Heuristic::UniqueRelationship,
        )
    } else {
        let name = target.names[rng.random_range(0..target.names.len())].clone();
        (
            PhraseStructure {
                category: name,
                attributes: target.attributes.clone(),
                relationships: primary_relations(graph, target),
                plural: false,
            },
            Heuristic::Exhaustive,
        )
    };

    let mut tags = BTreeSet::new();
    if let Some(t) = heuristic.tag() {
        tags.insert(t);
    }
    if structure.has_attributes() {
        tags.insert(SubsetTag::Att);
    }
    if structure.has_relationships() {
        tags.insert(SubsetTag::Rel);
    }

    let vg_boxes = graph
        .objects
        .iter()
        .filter(|o| matches_structure(graph, o, &structure))
        .map(|o| o.bbox)
        .collect();

    let task = PhraseTask {
        task_id: PhraseTask::task_id_for(graph.image_id, target_id),
        image_id: graph.image_id,
        image_size: graph.image_size,
        phrase: structure.render(),
        structure,
        subset_tags: tags,
        source_box_id: target_id,
        vg_boxes,
        instances: Vec::new(),
    };
    Ok((task, heuristic))
}

pub fn generate_phrase<R: Rng + ?Sized>(
    graph: &SceneGraph,
    target_id: u64,
    rng: &mut R,
) -> Result<PhraseTask> {
    generate_phrase_with_heuristic(graph, target_id, rng).map(|(t, _)| t)
}

/// Whether a box satisfies every slot of the phrase.
pub fn matches_structure(graph: &SceneGraph, obj: &ObjectNode, s: &PhraseStructure) -> bool {
    obj.has_name(&s.category)
        && s.attributes.iter().all(|a| obj.has_attribute(a))
        && s.relationships.iter().all(|r| has_relation(graph, obj, r))
}
