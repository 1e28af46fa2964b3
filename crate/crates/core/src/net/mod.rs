//! Skill-conditioned policy network: residual convolutional backbone,
//! channel-wise patching, skill-aware attention blocks and a policy head.

mod checkpoint;
mod config;
mod loss;
mod model;

pub use checkpoint::{
    load_policy, model_from_arrays, read_arrays, read_checkpoint_manifest, save_policy, ArrayCheckpoint,
    CheckpointManifest, CheckpointWriter, ParamEntry, PolicyCheckpoint, FORMAT_VERSION, POLICY_KIND,
};
pub use config::ModelConfig;
pub use loss::{loss_and_gradients, mean_loss, EmbeddingRef, EmbeddingSet, GradMode, Gradients};
pub use model::{checksum_tensors, skill_aware_block, Backbone, BackboneCache, ForwardCache, ModelState, ResBlock, SkillBlock};
pub(crate) use model::index_to_label;
