use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::card::{SkillCard, StepPredictor};
use crate::env::{action_code, generate_task, parse_hint, EnvParams};
use crate::error::{CmibError, Result};
use crate::numeric::{
    argmax, log_softmax, softmax, Activation, Adam, FeedforwardNet, ForwardTrace, Rng,
};

/// Scale of a hint token's planar code inside the card embedding, before
/// mean pooling over the card's tokens.
const HINT_SCALE: f64 = 8.0;
/// Scale of a goal token's indicator inside the card embedding.
const GOAL_SCALE: f64 = 2.0;
/// Std of the perturbation applied to prefix rows during pre-fit, so the
/// readout tolerates imperfect projected prefixes.
const PREFIT_PREFIX_NOISE: f64 = 0.1;
/// Task-id base for the pre-fit pool, disjoint from experiment task ids.
const PREFIT_TASK_BASE: u64 = 1 << 32;

/// Embedding-table entry for one card token. Hints carry their step's
/// planar action code in a dedicated block, goal tags an indicator in the
/// trailing block, and every other token maps to zero so no answer
/// information can enter the card channel except through hints.
pub fn token_embedding(token: &str, card_dim: usize, horizon: usize, action_count: usize) -> Vec<f64> {
    let mut v = vec![0.0; card_dim];
    if let Some((step, action)) = parse_hint(token) {
        if step < horizon && action < action_count {
            let code = action_code(action, action_count);
            v[2 * step] = HINT_SCALE * code[0];
            v[2 * step + 1] = HINT_SCALE * code[1];
        }
    } else if token.len() > 1
        && token.starts_with('g')
        && token[1..].chars().all(|c| c.is_ascii_digit())
    {
        let tail = card_dim - 2 * horizon;
        if tail > 0 {
            let k: usize = token[1..].parse().unwrap_or(0);
            v[2 * horizon + k % tail] = GOAL_SCALE;
        }
    }
    v
}

/// The immutable action predictor. It consumes a control prefix, a
/// mean-pooled card embedding, and a step-position context, and produces
/// action logits. Parameters are fixed at construction and guarded by a
/// checksum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenTaskModel {
    pub horizon: usize,
    pub action_count: usize,
    /// Control-prefix width d_u.
    pub prefix_dim: usize,
    /// Card-embedding width.
    pub card_dim: usize,
    net: FeedforwardNet,
    checksum: String,
}

impl FrozenTaskModel {
    pub fn new(
        horizon: usize,
        action_count: usize,
        prefix_dim: usize,
        card_dim: usize,
        net: FeedforwardNet,
    ) -> Result<Self> {
        if card_dim < 2 * horizon {
            return Err(CmibError::invalid_parameter(
                "card_dim",
                format!("needs at least 2 * horizon = {}", 2 * horizon),
            ));
        }
        if prefix_dim < 2 * horizon {
            return Err(CmibError::invalid_parameter(
                "prefix_dim",
                format!("needs at least 2 * horizon = {}", 2 * horizon),
            ));
        }
        let expected_in = prefix_dim + card_dim + horizon;
        if net.in_dim() != expected_in {
            return Err(CmibError::DimMismatch {
                context: "FrozenTaskModel readout input",
                expected: expected_in,
                got: net.in_dim(),
            });
        }
        if net.out_dim() != action_count {
            return Err(CmibError::DimMismatch {
                context: "FrozenTaskModel readout output",
                expected: action_count,
                got: net.out_dim(),
            });
        }
        let mut model = FrozenTaskModel {
            horizon,
            action_count,
            prefix_dim,
            card_dim,
            net,
            checksum: String::new(),
        };
        model.checksum = model.parameter_checksum();
        Ok(model)
    }

    pub fn input_dim(&self) -> usize {
        self.prefix_dim + self.card_dim + self.horizon
    }

    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    /// Recomputes the parameter digest and compares it with the stored one.
    pub fn verify_checksum(&self) -> Result<()> {
        let now = self.parameter_checksum();
        if now != self.checksum {
            return Err(CmibError::ChecksumMismatch {
                expected: self.checksum.clone(),
                got: now,
            });
        }
        Ok(())
    }

    /// Hex SHA-256 over the shape fields, the architecture descriptor, and
    /// the exact parameter bits, so any mutation is detected.
    fn parameter_checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for field in [self.horizon, self.action_count, self.prefix_dim, self.card_dim] {
            hasher.update(field.to_le_bytes());
        }
        let (dims, acts) = self.net.descriptor();
        for d in dims {
            hasher.update(d.to_le_bytes());
        }
        for a in acts {
            hasher.update([a as u8]);
        }
        for p in self.net.flatten_params() {
            hasher.update(p.to_bits().to_le_bytes());
        }
        format!("{:x}", hasher.finalize())
    }

    /// Mean-pooled embedding of a card's rendered token sequence.
    pub fn embed_card(&self, card: &SkillCard) -> Vec<f64> {
        self.embed_tokens(&card.tokens())
    }

    /// Mean-pooled embedding of an arbitrary token sequence, e.g. a task's
    /// raw prompt stream read without any skill.
    pub fn embed_tokens(&self, tokens: &[String]) -> Vec<f64> {
        let mut pooled = vec![0.0; self.card_dim];
        if tokens.is_empty() {
            return pooled;
        }
        for token in tokens {
            let e = token_embedding(token, self.card_dim, self.horizon, self.action_count);
            for (p, v) in pooled.iter_mut().zip(&e) {
                *p += v;
            }
        }
        let n = tokens.len() as f64;
        for p in &mut pooled {
            *p /= n;
        }
        pooled
    }

    /// Ground-truth control prefix: the planar code of each covered step's
    /// answer written into that step's block, zero elsewhere.
    pub fn prefix_code(&self, answers: &[usize], covered: &[bool]) -> Result<Vec<f64>> {
        if answers.len() != self.horizon || covered.len() != self.horizon {
            return Err(CmibError::DimMismatch {
                context: "prefix_code step count",
                expected: self.horizon,
                got: answers.len().max(covered.len()),
            });
        }
        let mut u = vec![0.0; self.prefix_dim];
        for (t, (&y, &on)) in answers.iter().zip(covered).enumerate() {
            if on {
                let code = action_code(y, self.action_count);
                u[2 * t] = code[0];
                u[2 * t + 1] = code[1];
            }
        }
        Ok(u)
    }

    fn assemble_input(&self, prefix: &[f64], card_embedding: &[f64], step: usize) -> Result<Vec<f64>> {
        if prefix.len() != self.prefix_dim {
            return Err(CmibError::DimMismatch {
                context: "FrozenTaskModel prefix",
                expected: self.prefix_dim,
                got: prefix.len(),
            });
        }
        if card_embedding.len() != self.card_dim {
            return Err(CmibError::DimMismatch {
                context: "FrozenTaskModel card embedding",
                expected: self.card_dim,
                got: card_embedding.len(),
            });
        }
        if step >= self.horizon {
            return Err(CmibError::invalid_parameter(
                "step",
                format!("must be < horizon {}, got {step}", self.horizon),
            ));
        }
        let mut input = Vec::with_capacity(self.input_dim());
        input.extend_from_slice(prefix);
        input.extend_from_slice(card_embedding);
        let mut ctx = vec![0.0; self.horizon];
        ctx[step] = 1.0;
        input.extend_from_slice(&ctx);
        Ok(input)
    }

    pub fn logits(&self, prefix: &[f64], card_embedding: &[f64], step: usize) -> Result<Vec<f64>> {
        let input = self.assemble_input(prefix, card_embedding, step)?;
        self.net.forward(&input)
    }

    pub fn action_distribution(
        &self,
        prefix: &[f64],
        card_embedding: &[f64],
        step: usize,
    ) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(prefix, card_embedding, step)?))
    }

    pub fn greedy_action(&self, prefix: &[f64], card_embedding: &[f64], step: usize) -> Result<usize> {
        Ok(argmax(&self.logits(prefix, card_embedding, step)?))
    }

    /// Log-probability of `action` at `step` under the readout.
    pub fn log_prob(
        &self,
        prefix: &[f64],
        card_embedding: &[f64],
        step: usize,
        action: usize,
    ) -> Result<f64> {
        if action >= self.action_count {
            return Err(CmibError::invalid_parameter(
                "action",
                format!("must be < {}, got {action}", self.action_count),
            ));
        }
        Ok(log_softmax(&self.logits(prefix, card_embedding, step)?)[action])
    }

    /// Forward pass retaining the trace, for callers that differentiate a
    /// loss through the (fixed) readout back to its prefix input.
    pub(crate) fn trace(
        &self,
        prefix: &[f64],
        card_embedding: &[f64],
        step: usize,
    ) -> Result<ForwardTrace> {
        let input = self.assemble_input(prefix, card_embedding, step)?;
        self.net.forward_trace(&input)
    }

    /// Input cotangent of the readout; parameter gradients are discarded,
    /// keeping the model frozen by construction.
    pub(crate) fn backward_to_input(&self, trace: &ForwardTrace, cotangent: &[f64]) -> Vec<f64> {
        let mut scratch = vec![0.0; self.net.param_count()];
        self.net.backward(trace, cotangent, &mut scratch)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("frozen model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: FrozenTaskModel =
            serde_json::from_str(text).map_err(|e| crate::env::json_parse_error(text, e))?;
        model.verify_checksum()?;
        Ok(model)
    }
}

/// Scores cards through the frozen model with a zero prefix: prediction
/// uses the card text alone.
pub struct CardOnlyPredictor<'a> {
    pub model: &'a FrozenTaskModel,
}

impl StepPredictor for CardOnlyPredictor<'_> {
    fn predict_with_card(&self, card: &SkillCard, step: usize) -> Result<usize> {
        let zero_prefix = vec![0.0; self.model.prefix_dim];
        let e = self.model.embed_card(card);
        self.model.greedy_action(&zero_prefix, &e, step)
    }
}

/// Pre-fit hyperparameters. The pool of pre-fit tasks is disjoint from
/// experiment tasks by id construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrefitConfig {
    pub tasks: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for PrefitConfig {
    fn default() -> Self {
        PrefitConfig { tasks: 4096, steps: 12_000, batch: 64, lr: 1e-3, hidden: 96, seed: 9001 }
    }
}

struct PrefitTask {
    answers: Vec<usize>,
    /// Hint symbols in stream (= step) order, with their step indices.
    hints: Vec<(usize, String)>,
    goal: String,
    card_embeddings: Vec<(Vec<bool>, Vec<f64>)>,
    /// Pooled embedding of the raw prompt stream, with its hint mask; used
    /// so the readout also learns to decode hints diluted by prompt filler.
    stream_embedding: (Vec<bool>, Vec<f64>),
}

/// Fits the readout once on a synthetic pool spanning the text-sufficiency
/// range, then freezes it. Rows teach the three regimes the readout must
/// handle: read the card block when the step is hinted, read the prefix
/// block when the step is covered by the prefix, and fall back to the
/// empirical action marginal otherwise.
pub fn prefit(env: &EnvParams, cfg: &PrefitConfig) -> Result<FrozenTaskModel> {
    env.validate()?;
    if cfg.tasks == 0 || cfg.batch == 0 || cfg.hidden == 0 {
        return Err(CmibError::invalid_parameter(
            "prefit",
            "tasks, batch, and hidden must be positive",
        ));
    }
    let card_dim = 2 * env.horizon + 4;
    let prefix_dim = 2 * env.horizon + 4;
    let input_dim = prefix_dim + card_dim + env.horizon;
    let root = Rng::new(cfg.seed);

    let mut init_rng = root.substream("prefit-init", 0);
    let net = FeedforwardNet::random(
        &[input_dim, cfg.hidden, env.action_count],
        &[Activation::Tanh, Activation::Identity],
        &mut init_rng,
    )?;
    let mut model =
        FrozenTaskModel::new(env.horizon, env.action_count, prefix_dim, card_dim, net)?;

    let alphas = [0.0, 0.25, 0.5, 0.75, 1.0];
    let mut pool = Vec::with_capacity(cfg.tasks);
    for i in 0..cfg.tasks {
        let mut params = env.clone();
        params.alpha = alphas[i % alphas.len()];
        let task_rng = root.substream("prefit-task", i as u64);
        let task = generate_task(&params, PREFIT_TASK_BASE + i as u64, &task_rng)?;
        let hints: Vec<(usize, String)> = task
            .text_routed
            .iter()
            .map(|&t| (t, format!("h{t}a{}", task.answers[t])))
            .collect();
        let mut stream_mask = vec![false; env.horizon];
        for &t in &task.text_routed {
            stream_mask[t] = true;
        }
        let stream_embedding = (stream_mask, model.embed_tokens(&task.text));
        pool.push(PrefitTask {
            answers: task.answers.clone(),
            hints,
            goal: format!("g{}", task.task_id % 4),
            card_embeddings: Vec::new(),
            stream_embedding,
        });
    }

    // Precompute card variants per task: the first v hints for each
    // verbosity v, padded with filler pattern tokens so pooled magnitudes
    // match deployment-time card lengths.
    let mut variant_rng = root.substream("prefit-cards", 0);
    for task in &mut pool {
        for v in 0..=task.hints.len() {
            let mut covered = vec![false; env.horizon];
            for (t, _) in task.hints.iter().take(v) {
                covered[*t] = true;
            }
            let filler = variant_rng.below(4);
            let card = SkillCard {
                goal: vec![task.goal.clone()],
                preconditions: task.hints.iter().take(v).map(|(_, h)| h.clone()).collect(),
                action_patterns: (0..filler).map(|r| format!("ok{r}-{r}")).collect(),
                failure_modes: if filler > 1 { vec!["bad0-0".into()] } else { vec![] },
            };
            let e = model.embed_card(&card);
            task.card_embeddings.push((covered, e));
        }
    }

    let mut params = model.net.flatten_params();
    let mut adam = Adam::new(params.len(), cfg.lr);
    let mut grad = vec![0.0; params.len()];
    let mut train_rng = root.substream("prefit-train", 0);
    for _step in 0..cfg.steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for _ in 0..cfg.batch {
            let task = &pool[train_rng.below(pool.len())];
            // Row mix: a quarter read the raw prompt stream, half read the
            // fullest card so block-reading rows are not drowned out by
            // near-empty cards, the rest draw a card variant uniformly.
            let entry = match train_rng.below(4) {
                0 => &task.stream_embedding,
                1 | 2 => task
                    .card_embeddings
                    .last()
                    .expect("card variants are never empty"),
                _ => &task.card_embeddings[train_rng.below(task.card_embeddings.len())],
            };
            let (hinted, e_card) = entry;
            // Prefix coverage regimes: complement of the card's hints,
            // everything, nothing, or an arbitrary subset.
            let covered: Vec<bool> = match train_rng.below(4) {
                0 => hinted.iter().map(|&h| !h).collect(),
                1 => vec![true; env.horizon],
                2 => vec![false; env.horizon],
                _ => (0..env.horizon).map(|_| train_rng.uniform() < 0.5).collect(),
            };
            let zero_card = train_rng.below(4) == 0;
            let e_used = if zero_card { vec![0.0; card_dim] } else { e_card.clone() };
            let mut u = model.prefix_code(&task.answers, &covered)?;
            for x in &mut u {
                *x += PREFIT_PREFIX_NOISE * train_rng.normal();
            }
            let t = train_rng.below(env.horizon);
            let target = task.answers[t];

            let trace = model.trace(&u, &e_used, t)?;
            let probs = softmax(trace.output());
            let mut cotangent = probs;
            cotangent[target] -= 1.0;
            for c in &mut cotangent {
                *c /= cfg.batch as f64;
            }
            model.net.backward(&trace, &cotangent, &mut grad);
        }
        adam.step(&mut params, &grad);
        model.net.set_params(&params)?;
    }

    model.checksum = model.parameter_checksum();
    Ok(model)
}
