use serde::{Deserialize, Serialize};

use crate::error::{CmibError, Result};
use crate::numeric::{sample_index, Rng};

/// Evaluation arm. `Vanilla` is the skillless stochastic decoder;
/// `SelfConsistency(k)` is the same decoder with k-sample majority voting;
/// the remaining arms consume a constructed skill (card only, card plus a
/// latent trained without conditioning, or the full conditional pair).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Vanilla,
    TextOnly,
    IndependentCz,
    Cmib,
    SelfConsistency(usize),
}

impl Method {
    /// Stable identifier used in configs, report rows, and file contents.
    pub fn tag(&self) -> String {
        match self {
            Method::Vanilla => "vanilla".into(),
            Method::TextOnly => "text_only".into(),
            Method::IndependentCz => "independent_cz".into(),
            Method::Cmib => "cmib".into(),
            Method::SelfConsistency(k) => format!("sc_k{k}"),
        }
    }

    pub fn parse(tag: &str) -> Result<Method> {
        match tag {
            "vanilla" => Ok(Method::Vanilla),
            "text_only" => Ok(Method::TextOnly),
            "independent_cz" => Ok(Method::IndependentCz),
            "cmib" => Ok(Method::Cmib),
            _ => {
                if let Some(rest) = tag.strip_prefix("sc_k") {
                    let k: usize = rest.parse().map_err(|_| {
                        CmibError::invalid_parameter("arm", format!("bad sample count in {tag}"))
                    })?;
                    if k == 0 {
                        return Err(CmibError::invalid_parameter(
                            "arm",
                            "sample count must be at least 1",
                        ));
                    }
                    return Ok(Method::SelfConsistency(k));
                }
                Err(CmibError::invalid_parameter("arm", format!("unknown arm {tag}")))
            }
        }
    }

    /// Whether the arm evaluates a trained latent model (and therefore has
    /// a redundancy reading).
    pub fn has_latent(&self) -> bool {
        matches!(self, Method::IndependentCz | Method::Cmib)
    }
}

/// One evaluation pass of one method over a fixed task set: the predicted
/// action ids, the correct ones, per-step correctness, and the number of
/// model calls spent producing the pass. Wall time is informational only
/// and never enters deterministic artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub seed: u64,
    /// Predicted action ids, one inner vector per task.
    pub actions: Vec<Vec<usize>>,
    /// Correct action ids, aligned with `actions`.
    pub truths: Vec<Vec<usize>>,
    /// Per-step full correctness, aligned with `actions`.
    pub correct: Vec<Vec<bool>>,
    /// Decoder calls plus any encoder calls charged to this pass.
    pub call_count: u64,
    pub wall_time_ms: f64,
}

impl RunRecord {
    pub fn new(
        method: Method,
        seed: u64,
        actions: Vec<Vec<usize>>,
        truths: Vec<Vec<usize>>,
        call_count: u64,
        wall_time_ms: f64,
    ) -> Result<Self> {
        if actions.is_empty() {
            return Err(CmibError::EmptyInput("run record: no tasks"));
        }
        if actions.len() != truths.len() {
            return Err(CmibError::DimMismatch {
                context: "run record task count",
                expected: truths.len(),
                got: actions.len(),
            });
        }
        for (a, t) in actions.iter().zip(&truths) {
            if a.len() != t.len() {
                return Err(CmibError::DimMismatch {
                    context: "run record step count",
                    expected: t.len(),
                    got: a.len(),
                });
            }
            if a.is_empty() {
                return Err(CmibError::EmptyInput("run record: task with no steps"));
            }
        }
        let correct = actions
            .iter()
            .zip(&truths)
            .map(|(a, t)| a.iter().zip(t).map(|(x, y)| x == y).collect())
            .collect();
        Ok(RunRecord { method, seed, actions, truths, correct, call_count, wall_time_ms })
    }

    pub fn total_steps(&self) -> usize {
        self.actions.iter().map(Vec::len).sum()
    }
}

/// Fraction of steps whose predicted action is fully correct.
pub fn step_sr(run: &RunRecord) -> f64 {
    let total = run.total_steps();
    let hits: usize = run.correct.iter().flatten().filter(|&&c| c).count();
    hits as f64 / total as f64
}

/// Fraction of steps whose element argument (`action % element_count`) is
/// correct, even when the operation half of the action differs.
pub fn ele_acc_analog(run: &RunRecord, element_count: usize) -> Result<f64> {
    if element_count == 0 {
        return Err(CmibError::invalid_parameter("element_count", "must be positive"));
    }
    let total = run.total_steps();
    let mut hits = 0usize;
    for (a, t) in run.actions.iter().zip(&run.truths) {
        for (x, y) in a.iter().zip(t) {
            if x % element_count == y % element_count {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / total as f64)
}

/// Mean pairwise per-step agreement across independent repeats of the same
/// task set. For each pair of runs, steps are aligned by index within each
/// task and truncated to the shorter run; the pair's agreement is the
/// fraction of shared steps with identical predicted actions; the result
/// averages over all pairs.
pub fn step_consistency(runs: &[RunRecord]) -> Result<f64> {
    if runs.len() < 2 {
        return Err(CmibError::invalid_parameter(
            "step_consistency",
            "needs at least 2 runs",
        ));
    }
    let tasks = runs[0].actions.len();
    if runs.iter().any(|r| r.actions.len() != tasks) {
        return Err(CmibError::DimMismatch {
            context: "step_consistency task count",
            expected: tasks,
            got: runs.iter().map(|r| r.actions.len()).find(|&n| n != tasks).unwrap_or(tasks),
        });
    }
    let mut pair_sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..runs.len() {
        for j in (i + 1)..runs.len() {
            let mut agree = 0usize;
            let mut shared = 0usize;
            for (a, b) in runs[i].actions.iter().zip(&runs[j].actions) {
                let n = a.len().min(b.len());
                shared += n;
                agree += a[..n].iter().zip(&b[..n]).filter(|(x, y)| x == y).count();
            }
            if shared == 0 {
                return Err(CmibError::EmptyInput("step_consistency: no shared steps"));
            }
            pair_sum += agree as f64 / shared as f64;
            pairs += 1;
        }
    }
    Ok(pair_sum / pairs as f64)
}

/// Modal value with ties broken by the smallest action id. `None` on an
/// empty sample set.
pub fn majority_action(samples: &[usize]) -> Option<usize> {
    let max = *samples.iter().max()?;
    let mut counts = vec![0usize; max + 1];
    for &s in samples {
        counts[s] += 1;
    }
    let best = *counts.iter().max().expect("nonempty counts");
    counts.iter().position(|&c| c == best)
}

/// Decodes one task with k-sample majority voting: at each step, k actions
/// are sampled from the provided per-step distribution and the modal one is
/// kept (ties to the smallest id). Returns the chosen actions and the exact
/// number of model calls (k per step). With k = 1 the procedure consumes
/// the rng identically to a single stochastic decode.
pub fn self_consistency_steps(
    dist: &mut dyn FnMut(usize) -> Result<Vec<f64>>,
    horizon: usize,
    k: usize,
    rng: &mut Rng,
) -> Result<(Vec<usize>, u64)> {
    if k == 0 {
        return Err(CmibError::invalid_parameter("k", "must be at least 1"));
    }
    if horizon == 0 {
        return Err(CmibError::EmptyInput("self_consistency: zero-step task"));
    }
    let mut chosen = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let p = dist(t)?;
        let samples: Vec<usize> = (0..k).map(|_| sample_index(&p, rng)).collect();
        chosen.push(majority_action(&samples).expect("k >= 1 samples"));
    }
    Ok((chosen, (k * horizon) as u64))
}
