//! Dense reverse-mode differentiation, Adam, and parameter checkpoints.

mod checkpoint;
pub mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, TensorRecord};
pub use optim::{adam_step, kaiming_normal, AdamConfig, AdamState, DEFAULT_LEARNING_RATE, DEFAULT_WEIGHT_DECAY};
pub use tape::{Gradients, Segments, Tape, Var};
pub use tensor::Tensor;
