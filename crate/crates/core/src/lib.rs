//! Laboratory for ensemble deterministic-policy-gradient agents: a small
//! autodiff core, desk-scale control environments, emphasizing-recent replay,
//! the ensemble agent itself, run metrics and an experiment harness.

pub mod agent;
pub mod envs;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod replay;
