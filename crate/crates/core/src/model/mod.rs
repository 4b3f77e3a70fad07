//! Toy recognizer and the differentiation tape it runs on.

pub mod checkpoint;
pub mod network;
pub mod tape;

pub use checkpoint::{Checkpoint, CheckpointHeader};
pub use network::{
    classify, log_probs, output_steps, sequential_encode, text_encode, visual_encode, ModelConfig,
    ModelParams, MIN_FRAMES,
};
pub use tape::{Gradients, Tape, Var};
