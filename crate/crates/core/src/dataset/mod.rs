//! Dataset construction: box sampling, phrase generation, instance
//! refinement and subset tagging.

mod phrase;
mod refine;
mod sampler;
mod subsets;
mod task;

pub use phrase::{
    generate_phrase, generate_phrase_with_heuristic, has_relation, matches_structure,
    unique_attribute, unique_category, unique_relationship, Heuristic,
};
pub use refine::{refine_instances, InstanceSet, RefineEvent, RefineParams};
pub use sampler::{build_pool, sample_boxes, sample_weight, SamplerParams};
pub use subsets::{assign_subsets, SubsetParams};
pub use task::{
    is_plural_category, Instance, PhraseStructure, PhraseTask, RelationDescription, SubsetTag,
};
