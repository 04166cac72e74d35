//! The transformer classifier: channel embedding, sinusoidal positional
//! encoding, post-norm encoder blocks, mean pooling over time and a dense head.

mod checkpoint;
mod config;
mod network;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Precision, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use network::{
    attention_weights, embed, encoder_block, multi_head_attention, positional_encoding, AttentionVars, EncoderVars, ForwardPass,
    ModelVars, TransformerClassifier, LN_EPS,
};
