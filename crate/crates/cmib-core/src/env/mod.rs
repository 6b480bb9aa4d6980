//! Synthetic trial-and-error environment.
//!
//! A task is a short episode of `horizon` steps; at step `t` exactly one of
//! `action_count` actions is correct (`y_t`). What makes the environment
//! interesting is *where* the answer is observable: a fraction `alpha` of the
//! steps (rounded) carry an explicit text hint symbol in the prompt stream,
//! while the perceptual feature vector block-encodes the correct action of
//! every step. At `alpha = 1` text alone suffices; at `alpha = 0` only
//! perception identifies the answers.
//!
//! Symbol grammar of the prompt stream:
//! * `g{k}`    task-type marker (first symbol of the stream),
//! * `t{t}`    step marker,
//! * `n{r}`    context filler drawn from a `vocab_size` pool,
//! * `h{t}a{a}` action hint: "at step t the correct action is a",
//!   present only for text-routed steps.
//!
//! Perceptual encoding: the task-level vector `M` (dimension `d_m`) holds a
//! planar unit code of `y_t` in the two components `(2t, 2t+1)`; remaining
//! components are task-specific filler. Per-step views `m_t` are `M` plus
//! i.i.d. observation noise, so pooling over steps recovers `M` closely.

mod bundle;
mod rollout;
mod task;

pub(crate) use bundle::json_parse_error;
pub use bundle::{make_bundle, pool_features, RolloutBundle};
pub use rollout::{rollout, Step, Trajectory};
pub use task::{action_code, element_of, generate_task, parse_hint, EnvParams, TaskInstance};
