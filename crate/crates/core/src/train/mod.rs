//! Optimization stages: population pre-training, enrichment with prototype
//! embeddings, and embedding-only adaptation for unseen players.

mod optim;
mod stages;

pub use optim::{decays, AdamW, AdamWConfig, ParamSlot};
pub use stages::{
    democratize, democratize_full, enrich, enrichment_objective, pretrain_population, score, Adapted, EvalRecord,
    StageOutput, StageReport, StepRecord, TrainConfig,
};
