//! Evaluation harness: step-level success and consistency metrics, the
//! redundancy proxy, self-consistency baselines, per-seed arm runners, and
//! deterministic report assembly.
//!
//! The harness evaluates six arms over a shared per-seed workload: a
//! skillless stochastic decoder, k-sample majority voting over the same
//! decoder, the selected text card alone, the card plus a latent trained
//! without conditioning, and the full conditional pair. Skill arms decode
//! greedily from skills realized once per seed; cost accounting charges
//! exactly one call per decoded step plus one encoder call per realized
//! skill.

mod metrics;
mod report;
mod runner;

pub use metrics::{
    ele_acc_analog, majority_action, self_consistency_steps, step_consistency, step_sr,
    Method, RunRecord,
};
pub use report::{
    cost_account, evaluate_method_on_seed, CostRow, MethodSummary, Report, SeedRow,
};
pub use runner::{
    build_arm, build_seed_workload, build_skill_inputs, generate_seed_tasks, redundancy,
    run_method, run_method_once, select_seed_cards, ArmArtifacts, SeedWorkload,
};
