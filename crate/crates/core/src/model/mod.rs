//! Modular attention grounding over precomputed detections.
//!
//! A phrase is split into category, attribute and relationship slots, each
//! embedded by mean-pooling word vectors. The category and attribute modules
//! attend over score channels built from detections; the relation module
//! convolves the supporting object's map on a coarse grid; a small network
//! mixes the module maps and their pairwise products into the final map.

mod detections;
mod layers;
mod network;
mod params;
mod tensor;
mod train;

pub use detections::{
    build_attribute_channels, build_channels, load_detections, parse_detections, DetectionRecord,
    ImageDetections, MAX_ATTRIBUTES, MAX_DETECTIONS,
};
pub use layers::{
    attend, attention_weights, bce, channel_norm, combine, combine_with_weights, ensemble_weights,
    features, leaky, loss, mlp_backward, mlp_forward, module_out, positive_weight, present_channels,
    relate, relate_logits, renormalize, sigmoid, standardize, MlpTape, RelationTape, CHANNEL_USES,
    LOSS_EPSILON,
};
pub use network::{
    embed_phrase, embed_words, forward, loss_and_grad, pass_loss, Forward, ImageChannels,
    PhraseEmbedding, PhraseWords, Sample, Stage,
};
pub use params::{
    load_embedding_table, parse_embedding_table, ConvLayout, Layout, MlpLayout, ModelConfig,
    ModelDims, ModelParams, WordIndex, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, ENSEMBLE_CHANNELS,
};
pub use tensor::{ChannelStack, HeatMap};
pub use train::{
    image_channels, predict, predict_heat_map, predict_tasks, prepare_samples, select_threshold, threshold_grid, train,
    TrainConfig, TrainReport,
};
