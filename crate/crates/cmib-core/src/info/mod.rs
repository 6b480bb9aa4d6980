//! Exact information quantities over small discrete joint distributions, and
//! enumeration-based verification of the two decomposition results the latent
//! training objective rests on:
//!
//! 1. the joint bottleneck objective over `(X, M) -> (c, z) -> Y` splits
//!    exactly into a text term plus a conditional multimodal term, and
//! 2. the variational surrogate (expected encoder/prior KL minus a weighted
//!    predictor log-likelihood, shifted by the conditional label entropy)
//!    upper-bounds the conditional bottleneck objective whenever the encoder
//!    is conditionally independent of the text given perception and card.
//!
//! Everything here works on exhaustive probability tables, so the checks are
//! exact up to floating-point accumulation (tolerances around 1e-12 per
//! term). All quantities are in nats, with the convention `0 ln 0 = 0`.

mod channel;
mod joint;
mod lemmas;

pub use channel::DiscreteChannel;
pub use joint::DiscreteJoint;
pub use lemmas::{
    random_lemma2_instance, verify_lemma1, verify_lemma2, Lemma1Report, Lemma2Instance,
    Lemma2Report, TrialRecord,
};

pub(crate) fn xlnx(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}
