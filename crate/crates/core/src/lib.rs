//! Individual chess behavior modeling from small game histories.
//!
//! A skill-conditioned move-prediction network is first enriched with
//! per-player embeddings for a set of data-rich prototype players. Unseen
//! players are then initialized from their rating bin or from a weighted
//! average of matched prototypes, and adapted by fine-tuning only their
//! embedding.

pub mod chess;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod net;
pub mod nn;
pub mod pgn;
pub mod pipeline;
pub mod pmn;
pub mod scalar;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Production-precision policy network.
pub type Model = net::ModelState<f32>;
/// Double-precision policy network for gradient checks.
pub type Model64 = net::ModelState<f64>;
pub type PopulationTable = embeddings::PopulationTable<f32>;
pub type IndividualTable = embeddings::IndividualTable<f32>;
pub type UnseenEmbedding = embeddings::UnseenEmbedding<f32>;
pub type Pmn = pmn::Pmn<f32>;
