//! Label-free schema mapping that improves at test time.
//!
//! A mapper backend proposes a target field (or `NOT_COVERED`) for every
//! source field several times over with reworded prompts. Disagreement
//! between those answers is the only learning signal: for each disputed
//! field the agent retrieves outside evidence and keeps it only when it
//! makes the answers more consistent. Kept evidence is fed back into every
//! later prompt.
//!
//! The [`sim`] module provides an offline world (noisy oracle mapper,
//! generated schemas, planted corpus) in which the whole loop runs
//! deterministically.

mod error;
pub(crate) mod util;

pub mod agent;
pub mod backend;
pub mod cli;
pub mod confidence;
pub mod evidence;
pub mod providers;
pub mod report;
pub mod schema;
pub mod sim;

pub use error::{Error, Result};
