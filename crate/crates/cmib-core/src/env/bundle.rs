use serde::{Deserialize, Serialize};

use super::rollout::{rollout, Trajectory};
use super::task::{EnvParams, TaskInstance};
use crate::error::{CmibError, Result};
use crate::numeric::Rng;

/// K noisy rollouts of one task plus the aggregated views used downstream:
/// the de-duplicated prompt stream `x` and the pooled perceptual features
/// `m` (elementwise mean followed by elementwise max over every step of
/// every trajectory, so `m.len() == 2 * d_m`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutBundle {
    pub task_id: u64,
    pub alpha: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub trajectories: Vec<Trajectory>,
    #[serde(rename = "X")]
    pub x: Vec<String>,
    #[serde(rename = "M")]
    pub m: Vec<f64>,
    #[serde(rename = "Y")]
    pub y: Vec<usize>,
}

impl RolloutBundle {
    pub fn bundle_id(&self) -> String {
        format!("b{:05}", self.task_id)
    }

    pub fn horizon(&self) -> usize {
        self.y.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| json_parse_error(text, e))
    }
}

pub(crate) fn json_parse_error(text: &str, e: serde_json::Error) -> CmibError {
    CmibError::Parse {
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    }
}

/// Convert serde_json's 1-based line/column into a byte offset.
pub(crate) fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut offset = 0usize;
    for (i, l) in text.split('\n').enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1).min(l.len());
        }
        offset += l.len() + 1;
    }
    text.len()
}

/// Pool per-step features: elementwise mean concatenated with elementwise
/// max over all rows.
pub fn pool_features(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = rows.first().ok_or(CmibError::EmptyInput("pool_features rows"))?;
    let d = first.len();
    let mut mean = vec![0.0; d];
    let mut max = vec![f64::NEG_INFINITY; d];
    for row in rows {
        if row.len() != d {
            return Err(CmibError::DimMismatch {
                context: "pool_features",
                expected: d,
                got: row.len(),
            });
        }
        for (i, &v) in row.iter().enumerate() {
            mean[i] += v;
            max[i] = max[i].max(v);
        }
    }
    for v in &mut mean {
        *v /= rows.len() as f64;
    }
    mean.extend(max);
    Ok(mean)
}

/// Roll `K` trajectories and aggregate. Each trajectory consumes its own
/// derived stream, so bundles are stable regardless of evaluation order.
pub fn make_bundle(task: &TaskInstance, params: &EnvParams, rng: &Rng) -> Result<RolloutBundle> {
    let k = params.rollouts_per_bundle;
    let mut trajectories = Vec::with_capacity(k);
    for i in 0..k {
        let mut traj_rng = rng.substream("rollout", task.task_id ^ (i as u64) << 40);
        trajectories.push(rollout(task, params, params.behavior_noise, &mut traj_rng)?);
    }

    // Order-preserving de-duplication of the concatenated prompt symbols.
    let mut x: Vec<String> = Vec::new();
    for traj in &trajectories {
        for step in &traj.steps {
            for sym in &step.x {
                if !x.contains(sym) {
                    x.push(sym.clone());
                }
            }
        }
    }

    let rows: Vec<Vec<f64>> = trajectories
        .iter()
        .flat_map(|t| t.steps.iter().map(|s| s.m.clone()))
        .collect();
    let m = pool_features(&rows)?;

    Ok(RolloutBundle {
        task_id: task.task_id,
        alpha: task.alpha,
        k,
        trajectories,
        x,
        m,
        y: task.answers.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::generate_task;

    fn sample_bundle(seed: u64) -> (EnvParams, RolloutBundle) {
        let params = EnvParams::default();
        let root = Rng::new(seed);
        let task = generate_task(&params, 21, &root).unwrap();
        let bundle = make_bundle(&task, &params, &root).unwrap();
        (params, bundle)
    }

    #[test]
    fn pooled_features_have_twice_the_dim() {
        let (params, bundle) = sample_bundle(40);
        assert_eq!(bundle.m.len(), 2 * params.d_m);
        assert_eq!(bundle.trajectories.len(), params.rollouts_per_bundle);
    }

    #[test]
    fn identical_trajectories_pool_to_single_trajectory_features() {
        let params = EnvParams::default();
        let task = generate_task(&params, 22, &Rng::new(41)).unwrap();
        // Five rollouts from identical rng states are identical.
        let trajs: Vec<Trajectory> = (0..5)
            .map(|_| rollout(&task, &params, 0.3, &mut Rng::new(99)).unwrap())
            .collect();
        let all_rows: Vec<Vec<f64>> = trajs
            .iter()
            .flat_map(|t| t.steps.iter().map(|s| s.m.clone()))
            .collect();
        let single_rows: Vec<Vec<f64>> =
            trajs[0].steps.iter().map(|s| s.m.clone()).collect();
        let pooled_all = pool_features(&all_rows).unwrap();
        let pooled_single = pool_features(&single_rows).unwrap();
        for (a, b) in pooled_all.iter().zip(&pooled_single) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregated_text_is_deduplicated_in_order() {
        let (_, bundle) = sample_bundle(42);
        for (i, sym) in bundle.x.iter().enumerate() {
            assert!(!bundle.x[..i].contains(sym), "duplicate {sym}");
        }
        // All trajectories share the task's prompt stream, so the dedup
        // equals the task stream.
        let task = generate_task(&EnvParams::default(), 21, &Rng::new(42)).unwrap();
        assert_eq!(bundle.x, task.text);
    }

    #[test]
    fn bundle_json_round_trips_bit_exactly() {
        let (_, bundle) = sample_bundle(43);
        let json = bundle.to_json();
        let back = RolloutBundle::from_json(&json).unwrap();
        assert_eq!(bundle, back);
        // Float fields must round-trip to identical bits.
        for (a, b) in bundle.m.iter().zip(&back.m) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_bundle_json_fails_with_offset() {
        let (_, bundle) = sample_bundle(44);
        let json = bundle.to_json();
        let truncated = &json[..json.len() / 2];
        match RolloutBundle::from_json(truncated) {
            Err(CmibError::Parse { offset, .. }) => {
                assert!(offset > 0 && offset <= truncated.len() + 1);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bundles_are_deterministic() {
        let (_, a) = sample_bundle(45);
        let (_, b) = sample_bundle(45);
        assert_eq!(a, b);
    }
}
