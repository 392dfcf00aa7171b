//! Workbench for studying how a transformer language model learns facts from
//! text: synthetic corpora whose surface statistics either do or do not
//! give away the fact, a from-scratch decoder-only transformer, likelihood
//! ratio probes, few-shot exact-match evaluation, layer-wise ablation of
//! finetuning deltas and active forgetting.

pub mod corpus;
pub mod error;
pub mod interventions;
pub mod io;
pub mod model;
pub mod parallel;
pub mod pipeline;
pub mod probe;
pub mod train;

pub use error::{Error, Result};
