use serde::{Deserialize, Serialize};

use crate::error::{CmibError, Result};
use crate::numeric::Rng;

/// Environment parameters. `alpha` is the fraction of steps whose correct
/// action is exposed in the text stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvParams {
    pub alpha: f64,
    pub d_m: usize,
    pub vocab_size: usize,
    pub action_count: usize,
    pub element_count: usize,
    pub horizon: usize,
    /// Rollouts per bundle (K).
    pub rollouts_per_bundle: usize,
    /// Probability that a rollout step takes a uniformly random action
    /// instead of the correct one.
    pub behavior_noise: f64,
    /// Std of i.i.d. noise added to each per-step perceptual view.
    pub percept_noise: f64,
}

impl Default for EnvParams {
    fn default() -> Self {
        EnvParams {
            alpha: 0.5,
            d_m: 16,
            vocab_size: 12,
            action_count: 4,
            element_count: 2,
            horizon: 6,
            rollouts_per_bundle: 8,
            behavior_noise: 0.3,
            percept_noise: 0.05,
        }
    }
}

impl EnvParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(CmibError::invalid_parameter(
                "alpha",
                format!("must be in [0, 1], got {}", self.alpha),
            ));
        }
        if self.horizon == 0 || self.horizon > 16 {
            return Err(CmibError::invalid_parameter(
                "horizon",
                format!("must be in 1..=16, got {}", self.horizon),
            ));
        }
        if self.action_count < 2 || self.action_count > 8 {
            return Err(CmibError::invalid_parameter(
                "action_count",
                format!("must be in 2..=8, got {}", self.action_count),
            ));
        }
        if self.element_count == 0 || self.action_count % self.element_count != 0 {
            return Err(CmibError::invalid_parameter(
                "element_count",
                format!(
                    "must divide action_count {}, got {}",
                    self.action_count, self.element_count
                ),
            ));
        }
        if self.d_m < 2 * self.horizon {
            return Err(CmibError::invalid_parameter(
                "d_m",
                format!(
                    "perceptual encoding needs d_m >= 2 * horizon = {}, got {}",
                    2 * self.horizon,
                    self.d_m
                ),
            ));
        }
        if self.vocab_size == 0 {
            return Err(CmibError::invalid_parameter("vocab_size", "must be positive"));
        }
        if self.rollouts_per_bundle == 0 {
            return Err(CmibError::invalid_parameter(
                "rollouts_per_bundle",
                "must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&self.behavior_noise) {
            return Err(CmibError::invalid_parameter(
                "behavior_noise",
                format!("must be in [0, 1], got {}", self.behavior_noise),
            ));
        }
        if !(0.0..=1.0).contains(&self.percept_noise) || !self.percept_noise.is_finite() {
            return Err(CmibError::invalid_parameter(
                "percept_noise",
                format!("must be in [0, 1], got {}", self.percept_noise),
            ));
        }
        Ok(())
    }
}

/// One concrete task: latent parameters, the text and perceptual
/// observations they generate, and the correct action sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub task_id: u64,
    pub alpha: f64,
    /// Latent task parameters; the correct actions are its leading entries,
    /// the tail holds the perceptual filler features.
    pub psi: Vec<f64>,
    /// Full prompt symbol stream (concatenation of per-step slices).
    pub text: Vec<String>,
    /// Task-level perceptual vector, dimension `d_m`.
    pub percept: Vec<f64>,
    /// Correct action per step.
    pub answers: Vec<usize>,
    /// Steps whose answer is exposed as a text hint, sorted ascending.
    pub text_routed: Vec<usize>,
    /// Per-step prompt slices; `text` is their concatenation.
    pub step_prompts: Vec<Vec<String>>,
}

/// Planar unit code of an action id: distinct directions on the circle.
pub fn action_code(action: usize, action_count: usize) -> [f64; 2] {
    let angle = 2.0 * std::f64::consts::PI * action as f64 / action_count as f64;
    [angle.cos(), angle.sin()]
}

/// The element argument of a composite action id.
pub fn element_of(action: usize, element_count: usize) -> usize {
    action % element_count
}

/// Parse an `h{t}a{a}` hint symbol into `(step, action)`.
pub fn parse_hint(symbol: &str) -> Option<(usize, usize)> {
    let rest = symbol.strip_prefix('h')?;
    let a_pos = rest.find('a')?;
    let step = rest[..a_pos].parse().ok()?;
    let action = rest[a_pos + 1..].parse().ok()?;
    Some((step, action))
}

/// Deterministically generate a task: draws depend only on
/// `(root seed, task_id)`, not on draws made for other tasks.
pub fn generate_task(params: &EnvParams, task_id: u64, root: &Rng) -> Result<TaskInstance> {
    params.validate()?;
    let mut rng = root.substream("task", task_id);
    let t = params.horizon;
    let a = params.action_count;

    let answers: Vec<usize> = (0..t).map(|_| rng.below(a)).collect();

    // Route round(alpha * horizon) steps through text, uniformly at random.
    let n_text = (params.alpha * t as f64).round() as usize;
    let mut order: Vec<usize> = (0..t).collect();
    rng.shuffle(&mut order);
    let mut text_routed: Vec<usize> = order.into_iter().take(n_text).collect();
    text_routed.sort_unstable();

    // Perceptual vector: block code of every step's answer plus filler.
    let mut percept = vec![0.0; params.d_m];
    for (step, &y) in answers.iter().enumerate() {
        let code = action_code(y, a);
        percept[2 * step] = code[0];
        percept[2 * step + 1] = code[1];
    }
    for v in percept.iter_mut().skip(2 * t) {
        *v = 0.5 * rng.normal();
    }

    // Latent parameters: answers first, filler after.
    let mut psi: Vec<f64> = answers.iter().map(|&y| y as f64).collect();
    psi.extend_from_slice(&percept[2 * t..]);

    // Prompt stream.
    let task_type = (task_id % 4) as usize;
    let mut step_prompts = Vec::with_capacity(t);
    for step in 0..t {
        let mut slice = Vec::new();
        if step == 0 {
            slice.push(format!("g{task_type}"));
        }
        slice.push(format!("t{step}"));
        slice.push(format!("n{}", rng.below(params.vocab_size)));
        if text_routed.contains(&step) {
            slice.push(format!("h{step}a{}", answers[step]));
        }
        step_prompts.push(slice);
    }
    let text = step_prompts.concat();

    Ok(TaskInstance {
        task_id,
        alpha: params.alpha,
        psi,
        text,
        percept,
        answers,
        text_routed,
        step_prompts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let params = EnvParams::default();
        let root = Rng::new(3);
        let a = generate_task(&params, 17, &root).unwrap();
        let b = generate_task(&params, 17, &root).unwrap();
        assert_eq!(a, b);
        let c = generate_task(&params, 18, &root).unwrap();
        assert_ne!(a.answers, c.answers);
    }

    #[test]
    fn alpha_one_hints_every_step() {
        let params = EnvParams {
            alpha: 1.0,
            ..EnvParams::default()
        };
        let task = generate_task(&params, 5, &Rng::new(1)).unwrap();
        assert_eq!(task.text_routed, (0..params.horizon).collect::<Vec<_>>());
        let hints: Vec<(usize, usize)> =
            task.text.iter().filter_map(|s| parse_hint(s)).collect();
        assert_eq!(hints.len(), params.horizon);
        for (step, action) in hints {
            assert_eq!(action, task.answers[step]);
        }
    }

    #[test]
    fn alpha_zero_has_no_hints() {
        let params = EnvParams {
            alpha: 0.0,
            ..EnvParams::default()
        };
        let task = generate_task(&params, 5, &Rng::new(1)).unwrap();
        assert!(task.text_routed.is_empty());
        assert!(task.text.iter().all(|s| parse_hint(s).is_none()));
    }

    #[test]
    fn half_alpha_routes_half_the_steps() {
        let params = EnvParams::default();
        let task = generate_task(&params, 9, &Rng::new(2)).unwrap();
        assert_eq!(task.text_routed.len(), 3);
    }

    #[test]
    fn percept_blocks_encode_answers() {
        let params = EnvParams::default();
        let task = generate_task(&params, 4, &Rng::new(7)).unwrap();
        for (step, &y) in task.answers.iter().enumerate() {
            let code = action_code(y, params.action_count);
            assert_eq!(task.percept[2 * step], code[0]);
            assert_eq!(task.percept[2 * step + 1], code[1]);
        }
    }

    #[test]
    fn answers_are_a_function_of_psi() {
        let params = EnvParams::default();
        let task = generate_task(&params, 11, &Rng::new(5)).unwrap();
        let decoded: Vec<usize> = task.psi[..params.horizon]
            .iter()
            .map(|&v| v as usize)
            .collect();
        assert_eq!(decoded, task.answers);
    }

    #[test]
    fn hint_parser_round_trips() {
        assert_eq!(parse_hint("h3a1"), Some((3, 1)));
        assert_eq!(parse_hint("h12a7"), Some((12, 7)));
        assert_eq!(parse_hint("t3"), None);
        assert_eq!(parse_hint("n4"), None);
        assert_eq!(parse_hint("ha"), None);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let mut p = EnvParams::default();
        p.alpha = 1.5;
        assert!(p.validate().is_err());
        p = EnvParams::default();
        p.d_m = 4;
        assert!(p.validate().is_err());
        p = EnvParams::default();
        p.element_count = 3;
        assert!(p.validate().is_err());
        p = EnvParams::default();
        p.behavior_noise = -0.1;
        assert!(p.validate().is_err());
    }
}
