//! Dense kernels and layers with hand-written backward passes.

pub mod attention;
pub mod layers;
pub mod tensor;

pub use attention::{AttentionBlock, AttentionCache};
pub use layers::{Conv3x3, GroupNorm, LayerNorm, Linear, Params};
pub use tensor::{argmax, log_softmax_at, softmax, Tensor};
