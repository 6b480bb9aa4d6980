use serde::{Deserialize, Serialize};

use crate::card::evidence::AggregateSummary;
use crate::error::{CmibError, Result};

/// A structured skill card. The rendered form is a whitespace-joined token
/// sequence; `length()` counts those tokens, which is the quantity the
/// selection objective penalizes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillCard {
    /// Goal symbols describing the task family.
    pub goal: Vec<String>,
    /// Hint symbols the card asserts were available (`h{t}a{a}`).
    pub preconditions: Vec<String>,
    /// Step intervals where rollouts succeeded, rendered as `ok{s}-{e}`.
    pub action_patterns: Vec<String>,
    /// Step intervals where rollouts failed, rendered as `bad{s}-{e}`.
    pub failure_modes: Vec<String>,
}

impl SkillCard {
    /// Token sequence: each field introduced by its label, empty fields
    /// omitted entirely.
    pub fn tokens(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut emit = |label: &str, items: &[String]| {
            if !items.is_empty() {
                out.push(label.to_string());
                out.extend(items.iter().cloned());
            }
        };
        emit("goal", &self.goal);
        emit("need", &self.preconditions);
        emit("did", &self.action_patterns);
        emit("miss", &self.failure_modes);
        out
    }

    pub fn rendered(&self) -> String {
        self.tokens().join(" ")
    }

    /// Card length in whitespace tokens of the rendered form.
    pub fn length(&self) -> usize {
        self.tokens().len()
    }
}

/// Graduated-verbosity candidate cards for one bundle, all within budget,
/// de-duplicated by rendering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub cards: Vec<SkillCard>,
    pub budget: usize,
}

/// Builds up to `n_candidates` cards of increasing verbosity: candidate `i`
/// keeps the `i` most frequent items per field, in ranked order, then trims
/// whole items from the tail until the rendering fits `budget` tokens.
///
/// Fails if even the tersest candidate (goal plus its single best
/// non-goal item) cannot fit the budget.
pub fn format_candidates(
    summary: &AggregateSummary,
    budget: usize,
    n_candidates: usize,
) -> Result<CandidateSet> {
    if n_candidates == 0 {
        return Err(CmibError::invalid_parameter(
            "n_candidates",
            "must be at least 1",
        ));
    }
    if budget == 0 {
        return Err(CmibError::invalid_parameter("card_budget", "must be positive"));
    }

    let mut cards: Vec<SkillCard> = Vec::new();
    for i in 1..=n_candidates {
        let card = build_candidate(summary, i, budget);
        if !cards.iter().any(|c| c.rendered() == card.rendered()) {
            cards.push(card);
        }
    }

    let tersest = &cards[0];
    let non_goal_items = tersest.preconditions.len()
        + tersest.action_patterns.len()
        + tersest.failure_modes.len();
    let has_any_evidence = !summary.hint_symbols.is_empty()
        || !summary.success_runs.is_empty()
        || !summary.failure_runs.is_empty();
    if tersest.goal.is_empty() || (has_any_evidence && non_goal_items == 0) {
        return Err(CmibError::invalid_parameter(
            "card_budget",
            format!(
                "budget {budget} too small for a minimal card (goal header plus one pattern)"
            ),
        ));
    }

    Ok(CandidateSet { cards, budget })
}

/// Assembles the top-`verbosity` items per field in field order, admitting
/// whole items only while the running token count stays within budget.
fn build_candidate(summary: &AggregateSummary, verbosity: usize, budget: usize) -> SkillCard {
    let goal: Vec<String> = summary
        .goal_symbols
        .iter()
        .take(verbosity)
        .map(|r| r.symbol.clone())
        .collect();
    let preconditions: Vec<String> = summary
        .hint_symbols
        .iter()
        .take(verbosity)
        .map(|r| r.symbol.clone())
        .collect();
    let action_patterns: Vec<String> = summary
        .success_runs
        .iter()
        .take(verbosity)
        .map(|r| r.run.render("ok"))
        .collect();
    let failure_modes: Vec<String> = summary
        .failure_runs
        .iter()
        .take(verbosity)
        .map(|r| r.run.render("bad"))
        .collect();

    let mut card = SkillCard {
        goal: vec![],
        preconditions: vec![],
        action_patterns: vec![],
        failure_modes: vec![],
    };
    // Admit items field by field; each field label costs one token the
    // first time an item of that field is admitted.
    for (field, items) in
        [goal, preconditions, action_patterns, failure_modes].into_iter().enumerate()
    {
        for item in items {
            let target_is_empty = match field {
                0 => card.goal.is_empty(),
                1 => card.preconditions.is_empty(),
                2 => card.action_patterns.is_empty(),
                _ => card.failure_modes.is_empty(),
            };
            let label_cost = usize::from(target_is_empty);
            if card.length() + label_cost + 1 > budget {
                return card;
            }
            match field {
                0 => card.goal.push(item),
                1 => card.preconditions.push(item),
                2 => card.action_patterns.push(item),
                _ => card.failure_modes.push(item),
            }
        }
    }
    card
}
