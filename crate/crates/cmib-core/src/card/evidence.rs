use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::env::{parse_hint, Trajectory};
use crate::error::{CmibError, Result};

/// Inclusive range of consecutive step indices sharing a feedback value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StepRun {
    pub start: usize,
    pub end: usize,
}

impl StepRun {
    pub fn render(&self, tag: &str) -> String {
        format!("{}{}-{}", tag, self.start, self.end)
    }
}

/// Structured observations pulled from a single trajectory: which prompt
/// symbols appeared, and where the feedback signal ran hot or cold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvidenceRecord {
    /// Goal symbols (`g...`) in order of first appearance.
    pub goal_symbols: Vec<String>,
    /// Hint symbols (`h{t}a{a}`) in order of first appearance.
    pub hint_symbols: Vec<String>,
    /// Maximal runs of consecutive steps with positive feedback.
    pub success_runs: Vec<StepRun>,
    /// Maximal runs of consecutive steps with zero feedback.
    pub failure_runs: Vec<StepRun>,
}

fn push_unique(list: &mut Vec<String>, sym: &str) {
    if !list.iter().any(|s| s == sym) {
        list.push(sym.to_string());
    }
}

/// Splits a feedback sequence into maximal constant runs and returns the
/// runs with value `target`.
fn runs_with_value(feedback: &[u8], target: u8) -> Vec<StepRun> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < feedback.len() {
        let mut j = i;
        while j + 1 < feedback.len() && feedback[j + 1] == feedback[i] {
            j += 1;
        }
        if feedback[i] == target {
            out.push(StepRun { start: i, end: j });
        }
        i = j + 1;
    }
    out
}

/// Extracts the card-relevant evidence from one trajectory.
///
/// Symbols are classified structurally: anything parseable as a hint counts
/// as a hint, anything starting with `g` followed by digits counts as a goal
/// tag, and the rest (step tags, noise) is dropped as non-evidence.
pub fn extract_evidence(trajectory: &Trajectory) -> Result<EvidenceRecord> {
    if trajectory.steps.is_empty() {
        return Err(CmibError::EmptyInput("extract_evidence: trajectory has no steps"));
    }
    let mut goal_symbols = Vec::new();
    let mut hint_symbols = Vec::new();
    for step in &trajectory.steps {
        for sym in &step.x {
            if parse_hint(sym).is_some() {
                push_unique(&mut hint_symbols, sym);
            } else if sym.len() > 1
                && sym.starts_with('g')
                && sym[1..].chars().all(|ch| ch.is_ascii_digit())
            {
                push_unique(&mut goal_symbols, sym);
            }
        }
    }
    let feedback = trajectory.feedback();
    Ok(EvidenceRecord {
        goal_symbols,
        hint_symbols,
        success_runs: runs_with_value(&feedback, 1),
        failure_runs: runs_with_value(&feedback, 0),
    })
}

/// A symbol together with how many records it appeared in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedSymbol {
    pub symbol: String,
    pub count: usize,
}

/// A step run together with how many records it appeared in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedRun {
    pub run: StepRun,
    pub count: usize,
}

/// Bundle-level evidence: every observed item ranked by occurrence count
/// (descending), ties broken by order of first appearance across records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregateSummary {
    pub goal_symbols: Vec<RankedSymbol>,
    pub hint_symbols: Vec<RankedSymbol>,
    pub success_runs: Vec<RankedRun>,
    pub failure_runs: Vec<RankedRun>,
    pub record_count: usize,
}

struct Counter<T> {
    counts: HashMap<T, usize>,
    first_seen: HashMap<T, usize>,
    next_rank: usize,
}

impl<T: Clone + Eq + std::hash::Hash> Counter<T> {
    fn new() -> Self {
        Counter { counts: HashMap::new(), first_seen: HashMap::new(), next_rank: 0 }
    }

    fn observe(&mut self, item: &T) {
        *self.counts.entry(item.clone()).or_insert(0) += 1;
        let rank = self.next_rank;
        self.first_seen.entry(item.clone()).or_insert_with(|| {
            rank
        });
        self.next_rank += 1;
    }

    /// Items sorted by count descending, then first appearance ascending.
    fn ranked(self) -> Vec<(T, usize)> {
        let mut items: Vec<(T, usize, usize)> = self
            .counts
            .into_iter()
            .map(|(item, count)| {
                let seen = self.first_seen[&item];
                (item, count, seen)
            })
            .collect();
        items.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        items.into_iter().map(|(item, count, _)| (item, count)).collect()
    }
}

/// Merges per-trajectory evidence into ranked occurrence lists.
pub fn aggregate_evidence(records: &[EvidenceRecord]) -> Result<AggregateSummary> {
    if records.is_empty() {
        return Err(CmibError::EmptyInput("aggregate_evidence: no evidence records"));
    }
    let mut goals = Counter::new();
    let mut hints = Counter::new();
    let mut oks = Counter::new();
    let mut bads = Counter::new();
    for record in records {
        for sym in &record.goal_symbols {
            goals.observe(sym);
        }
        for sym in &record.hint_symbols {
            hints.observe(sym);
        }
        for run in &record.success_runs {
            oks.observe(run);
        }
        for run in &record.failure_runs {
            bads.observe(run);
        }
    }
    Ok(AggregateSummary {
        goal_symbols: goals
            .ranked()
            .into_iter()
            .map(|(symbol, count)| RankedSymbol { symbol, count })
            .collect(),
        hint_symbols: hints
            .ranked()
            .into_iter()
            .map(|(symbol, count)| RankedSymbol { symbol, count })
            .collect(),
        success_runs: oks
            .ranked()
            .into_iter()
            .map(|(run, count)| RankedRun { run, count })
            .collect(),
        failure_runs: bads
            .ranked()
            .into_iter()
            .map(|(run, count)| RankedRun { run, count })
            .collect(),
        record_count: records.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Step;

    fn traj_with_feedback(flags: &[u8]) -> Trajectory {
        let steps = flags
            .iter()
            .enumerate()
            .map(|(t, &f)| Step {
                x: vec![format!("t{t}")],
                m: vec![0.0],
                a: 0,
                o: 0,
                f,
            })
            .collect();
        Trajectory { steps }
    }

    #[test]
    fn mixed_feedback_splits_into_maximal_runs() {
        let record = extract_evidence(&traj_with_feedback(&[1, 1, 0, 1])).unwrap();
        assert_eq!(
            record.success_runs,
            vec![StepRun { start: 0, end: 1 }, StepRun { start: 3, end: 3 }]
        );
        assert_eq!(record.failure_runs, vec![StepRun { start: 2, end: 2 }]);
    }

    #[test]
    fn uniform_feedback_yields_single_run() {
        let all_ok = extract_evidence(&traj_with_feedback(&[1, 1, 1])).unwrap();
        assert_eq!(all_ok.success_runs, vec![StepRun { start: 0, end: 2 }]);
        assert!(all_ok.failure_runs.is_empty());

        let all_bad = extract_evidence(&traj_with_feedback(&[0, 0])).unwrap();
        assert!(all_bad.success_runs.is_empty());
        assert_eq!(all_bad.failure_runs, vec![StepRun { start: 0, end: 1 }]);
    }

    #[test]
    fn symbols_classified_structurally() {
        let mut traj = traj_with_feedback(&[1, 0]);
        traj.steps[0].x = vec!["g2".into(), "t0".into(), "h0a3".into(), "n7".into()];
        traj.steps[1].x = vec!["t1".into(), "h0a3".into(), "h1a1".into(), "gx".into()];
        let record = extract_evidence(&traj).unwrap();
        assert_eq!(record.goal_symbols, vec!["g2".to_string()]);
        assert_eq!(record.hint_symbols, vec!["h0a3".to_string(), "h1a1".to_string()]);
    }

    #[test]
    fn empty_trajectory_rejected() {
        let err = extract_evidence(&Trajectory { steps: vec![] }).unwrap_err();
        assert!(matches!(err, CmibError::EmptyInput(_)));
    }

    #[test]
    fn aggregate_matches_brute_force_counts() {
        let mut records = Vec::new();
        for (goals, hints, flags) in [
            (vec!["g1"], vec!["h0a1", "h2a0"], vec![1u8, 1, 0]),
            (vec!["g1"], vec!["h2a0"], vec![1, 0, 0]),
            (vec!["g1"], vec!["h0a1", "h2a0"], vec![1, 1, 0]),
        ] {
            let mut traj = traj_with_feedback(&flags);
            traj.steps[0].x =
                goals.iter().chain(hints.iter()).map(|s| s.to_string()).collect();
            records.push(extract_evidence(&traj).unwrap());
        }
        let summary = aggregate_evidence(&records).unwrap();

        // Brute-force occurrence counting over the raw records.
        let count_hint = |sym: &str| {
            records.iter().filter(|r| r.hint_symbols.iter().any(|s| s == sym)).count()
        };
        assert_eq!(summary.record_count, 3);
        assert_eq!(summary.goal_symbols.len(), 1);
        assert_eq!(summary.goal_symbols[0].count, 3);
        for ranked in &summary.hint_symbols {
            assert_eq!(ranked.count, count_hint(&ranked.symbol));
        }
        // h2a0 appears in all three records, h0a1 in two.
        assert_eq!(summary.hint_symbols[0].symbol, "h2a0");
        assert_eq!(summary.hint_symbols[0].count, 3);
        assert_eq!(summary.hint_symbols[1].symbol, "h0a1");
        assert_eq!(summary.hint_symbols[1].count, 2);
        // Run [0,1] appears twice, [0,0] once.
        assert_eq!(summary.success_runs[0].run, StepRun { start: 0, end: 1 });
        assert_eq!(summary.success_runs[0].count, 2);
    }

    #[test]
    fn count_ties_break_by_first_appearance() {
        let mut a = traj_with_feedback(&[1]);
        a.steps[0].x = vec!["h0a1".into(), "h1a2".into()];
        let mut b = traj_with_feedback(&[1]);
        b.steps[0].x = vec!["h1a2".into(), "h0a1".into()];
        let records =
            vec![extract_evidence(&a).unwrap(), extract_evidence(&b).unwrap()];
        let summary = aggregate_evidence(&records).unwrap();
        // Both count 2; h0a1 was seen first (record order, then stream order).
        assert_eq!(summary.hint_symbols[0].symbol, "h0a1");
        assert_eq!(summary.hint_symbols[1].symbol, "h1a2");
    }

    #[test]
    fn aggregate_rejects_empty_input() {
        assert!(matches!(
            aggregate_evidence(&[]).unwrap_err(),
            CmibError::EmptyInput(_)
        ));
    }
}
