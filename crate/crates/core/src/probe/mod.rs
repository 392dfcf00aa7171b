//! Likelihood-ratio probes and the few-shot evaluation harness.

pub mod eval;
pub mod ratios;

pub use eval::{evaluate, exact_match, summarize, EvalRecord, EvalReport, FewShotConfig, TaskScore};
pub use ratios::{
    build_probe_items, comparison_ratio, log_comparison_ratio, log_negation_ratio, negation_ratio,
    probe_all, probe_prompts, Aggregate, ProbeItem, ProbeReport, ProbeRow,
};

#[cfg(test)]
mod tests;
