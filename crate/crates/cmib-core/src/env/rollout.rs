use serde::{Deserialize, Serialize};

use super::task::{EnvParams, TaskInstance};
use crate::error::{CmibError, Result};
use crate::numeric::Rng;

/// One environment step of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    /// Prompt symbols observed at this step.
    pub x: Vec<String>,
    /// Perceptual view at this step.
    pub m: Vec<f64>,
    /// Action taken.
    pub a: usize,
    /// Observation id returned by the environment (echo of the action).
    pub o: usize,
    /// Per-step feedback: 1 if the action was correct.
    pub f: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn feedback(&self) -> Vec<u8> {
        self.steps.iter().map(|s| s.f).collect()
    }
}

/// Roll one noisy trajectory: each step takes the correct action with
/// probability `1 - behavior_noise` and otherwise a uniformly random one
/// (which may coincide with the correct action).
pub fn rollout(
    task: &TaskInstance,
    params: &EnvParams,
    behavior_noise: f64,
    rng: &mut Rng,
) -> Result<Trajectory> {
    if !(0.0..=1.0).contains(&behavior_noise) {
        return Err(CmibError::invalid_parameter(
            "behavior_noise",
            format!("must be in [0, 1], got {behavior_noise}"),
        ));
    }
    let mut steps = Vec::with_capacity(task.answers.len());
    for (t, &y) in task.answers.iter().enumerate() {
        let a = if rng.uniform() < 1.0 - behavior_noise {
            y
        } else {
            rng.below(params.action_count)
        };
        let m: Vec<f64> = task
            .percept
            .iter()
            .map(|&v| v + params.percept_noise * rng.normal())
            .collect();
        steps.push(Step {
            x: task.step_prompts[t].clone(),
            m,
            a,
            o: a,
            f: u8::from(a == y),
        });
    }
    Ok(Trajectory { steps })
}
