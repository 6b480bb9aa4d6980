//! The model layer: an immutable pre-fit action readout (the task model)
//! and the trainable conditional bottleneck around it.
//!
//! The frozen readout maps `[control prefix ; pooled card embedding ;
//! step context]` to action logits. Cards influence it only through hint
//! tokens (everything else embeds to zero), so text can carry answers
//! exactly to the extent the environment routed them into hints. The
//! trainable half (posterior, conditional prior, projection) is optimized
//! against `KL(q || r) + beta_z * nll` with one reparameterized sample per
//! item, and its analytic gradients are hand-composed and checked against
//! finite differences.

mod frozen;
mod latent;
mod loss;

pub use frozen::{prefit, token_embedding, CardOnlyPredictor, FrozenTaskModel, PrefitConfig};
pub use latent::{control_forward, realize_skill, LatentDescriptor, LatentSkillModel};
pub use loss::{
    draw_eps, finite_difference_check, loss_and_grad, surrogate_loss, surrogate_loss_with_eps,
    trace_to_csv, train, GradientCheck, LossParts, TraceRow, TrainConfig, TrainItem,
};
