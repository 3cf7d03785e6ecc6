//! Worst-case robust policy optimization over a box of uncertain physical
//! parameters: max-min TD3 and its variants, desk-scale environments, a
//! grid evaluator for worst-case and average return, and a saddle-point
//! demonstration of alternating versus simultaneous updates.

pub mod adversary;
pub mod agents;
pub mod checkpoint;
pub mod config;
pub mod critic;
pub mod env;
pub mod error;
pub mod evaluation;
pub mod nn;
pub mod replay;
pub mod saddle;
pub mod sampler;
pub mod types;

pub use config::{RunConfig, Variant};
pub use error::{Error, Result};
pub use types::{Transition, UncertaintyBox};
