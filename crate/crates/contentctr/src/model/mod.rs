pub mod checkpoint;
pub mod config;
pub mod layers;
pub mod network;

pub use checkpoint::{load, load_with_state, save, save_with_state, TrainingState, MANIFEST_NAME};
pub use config::{attention_mask, MaskMode, ModelConfig};
pub use layers::{FeedForward, LayerNorm, Linear, MultiHeadAttention};
pub use network::{BatchInput, Block, Model, ModelOutput};
