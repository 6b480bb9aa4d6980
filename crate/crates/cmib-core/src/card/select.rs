use serde::{Deserialize, Serialize};

use crate::card::format::{CandidateSet, SkillCard};
use crate::env::RolloutBundle;
use crate::error::{CmibError, Result};

/// Anything that can predict a per-step action from a card alone (no latent
/// path). The selection stage scores candidate cards through this interface
/// so it stays independent of the concrete readout model.
pub trait StepPredictor {
    /// Greedy action prediction for `step` given only the card text.
    fn predict_with_card(&self, card: &SkillCard, step: usize) -> Result<usize>;
}

impl<F> StepPredictor for F
where
    F: Fn(&SkillCard, usize) -> Result<usize>,
{
    fn predict_with_card(&self, card: &SkillCard, step: usize) -> Result<usize> {
        self(card, step)
    }
}

/// Held-out utility of a card: per-step prediction accuracy on the last
/// `ceil(K/4)` trajectories of the bundle (leave-one-out when the bundle has
/// fewer than four). The held-out split only sizes the evaluation; the
/// predictor sees the card and the step index, never the held-out rollouts.
pub fn card_utility(
    card: &SkillCard,
    bundle: &RolloutBundle,
    predictor: &dyn StepPredictor,
) -> Result<f64> {
    let k = bundle.trajectories.len();
    if k == 0 {
        return Err(CmibError::EmptyInput("card_utility: bundle has no trajectories"));
    }
    let held_out = if k >= 4 { k.div_ceil(4) } else { 1 };
    let horizon = bundle.y.len();
    let mut correct = 0usize;
    let mut total = 0usize;
    for _ in 0..held_out {
        for (step, &answer) in bundle.y.iter().enumerate().take(horizon) {
            if predictor.predict_with_card(card, step)? == answer {
                correct += 1;
            }
            total += 1;
        }
    }
    Ok(correct as f64 / total as f64)
}

/// Outcome of the length-utility trade-off for the selected card.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    /// Minimized objective `length - beta_c * utility`.
    pub objective: f64,
    pub utility: f64,
    pub length: usize,
    /// Index of the winner within the candidate set.
    pub candidate_index: usize,
}

/// Picks the candidate minimizing `length(c) - beta_c * utility(c)`.
/// Objective ties prefer the shorter card, then the lexicographically
/// smaller rendering, so selection is deterministic.
pub fn select_card(
    candidates: &CandidateSet,
    bundle: &RolloutBundle,
    beta_c: f64,
    predictor: &dyn StepPredictor,
) -> Result<(SkillCard, SelectionReport)> {
    if candidates.cards.is_empty() {
        return Err(CmibError::EmptyInput("select_card: no candidate cards"));
    }
    if !beta_c.is_finite() || beta_c < 0.0 {
        return Err(CmibError::invalid_parameter(
            "beta_c",
            "must be finite and non-negative",
        ));
    }

    let mut best: Option<(usize, f64, f64)> = None;
    for (idx, card) in candidates.cards.iter().enumerate() {
        let utility = card_utility(card, bundle, predictor)?;
        let objective = card.length() as f64 - beta_c * utility;
        let better = match &best {
            None => true,
            Some((best_idx, best_obj, _)) => {
                let current = &candidates.cards[*best_idx];
                objective < *best_obj
                    || (objective == *best_obj
                        && (card.length() < current.length()
                            || (card.length() == current.length()
                                && card.rendered() < current.rendered())))
            }
        };
        if better {
            best = Some((idx, objective, utility));
        }
    }
    let (idx, objective, utility) = best.expect("non-empty candidate set");
    let card = candidates.cards[idx].clone();
    let length = card.length();
    Ok((card, SelectionReport { objective, utility, length, candidate_index: idx }))
}
