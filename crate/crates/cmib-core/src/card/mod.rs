//! Text bottleneck: distill a rollout bundle into a short structured skill
//! card, trading rendered length against held-out predictive utility.
//!
//! The stage is a deterministic, templated progressive summarization:
//! per-trajectory evidence extraction, aggregation across the bundle with
//! occurrence counts, rendering of a graduated-verbosity candidate set, and
//! selection of the candidate minimizing `|c| - beta_c * utility(c)`.

mod evidence;
mod format;
mod select;

pub use evidence::{aggregate_evidence, extract_evidence, AggregateSummary, EvidenceRecord, RankedRun, RankedSymbol, StepRun};
pub use format::{format_candidates, CandidateSet, SkillCard};
pub use select::{card_utility, select_card, SelectionReport, StepPredictor};
