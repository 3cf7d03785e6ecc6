//! Small dense networks with exact reverse-mode gradients and Adam.

mod adam;
mod mlp;

pub use adam::AdamState;
pub use mlp::{param_count, soft_update, Mlp, OutputActivation, Tape};
