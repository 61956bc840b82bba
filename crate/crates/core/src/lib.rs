//! Out-of-scope (OOS) detection toolkit for task-oriented dialogue.
//!
//! The pipeline augments a tiny seed set of known OOS dialogues into a large
//! pseudo-labeled training pool: seed utterances are matched against an
//! external source corpus in a shared embedding space, matches are swapped
//! into seed dialogues to form candidates, and a small ensemble of indirect
//! detectors votes on which candidates become pseudo-OOS training data. The
//! aggregated set trains a direct binary detector, which is evaluated with
//! threshold-free metrics against seven indirect baselines.

pub mod corpus;
pub mod detectors;
pub mod election;
pub mod embedding;
pub mod error;
pub mod generator;
pub mod intent_model;
pub mod matcher;
pub mod metrics;
pub mod oos_model;
pub mod persist;
pub mod util;

pub use error::{Error, Result};
