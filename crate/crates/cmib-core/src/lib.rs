//! Desk-scale construction and verification of multimodal agent skills built
//! with a conditional information bottleneck.
//!
//! A skill is a pair: a short structured text card distilled from noisy
//! rollouts of a task, and a compact Gaussian latent conditioned on that card
//! which carries only the residual, non-textual part of the task. The crate
//! provides:
//!
//! * [`numeric`] — deterministic RNG, diagonal Gaussians, small feedforward
//!   nets with hand-derived backprop, and finite-difference checks;
//! * [`info`] — exact information quantities over small discrete joints,
//!   used to verify the objective factorization and the variational bound
//!   by enumeration;
//! * [`env`] — a synthetic trial-and-error environment whose tasks route a
//!   controllable fraction of the answer through text versus perception;
//! * [`card`] — evidence extraction, candidate card generation, and
//!   utility-vs-length card selection;
//! * [`model`] — the frozen task model and the trainable conditional latent
//!   (posterior, conditional prior, projection) with its surrogate loss;
//! * [`library`] — a persistent, retrievable store of realized skills;
//! * [`eval`] — step-level metrics, self-consistency baselines, ablation
//!   arms, and cost accounting;
//! * [`config`] / [`pipeline`] — experiment configuration and the staged
//!   artifact pipeline used by the command-line runner;
//! * [`verify`] — batched randomized verification of the factorization, the
//!   bound, and the hand-written gradients.

pub mod card;
pub mod config;
pub mod env;
pub mod error;
pub mod eval;
pub mod info;
pub mod library;
pub mod model;
pub mod numeric;
pub mod pipeline;
pub mod verify;

pub use error::{CmibError, Result};
