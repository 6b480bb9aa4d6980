use serde::{Deserialize, Serialize};

use crate::card::SkillCard;
use crate::env::RolloutBundle;
use crate::error::{CmibError, Result};
use crate::library::{LOG_SIGMA_MAX, LOG_SIGMA_MIN};
use crate::model::frozen::FrozenTaskModel;
use crate::model::latent::{LatentSkillModel, split_gaussian_head};
use crate::numeric::{softmax, Adam, Rng};

/// One training example: pooled bundle perception, the selected card's
/// embedding, and the per-step answers the frozen model must assign high
/// probability to.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub m: Vec<f64>,
    pub card: SkillCard,
    pub card_embedding: Vec<f64>,
    pub y: Vec<usize>,
}

impl TrainItem {
    pub fn new(task_model: &FrozenTaskModel, bundle: &RolloutBundle, card: &SkillCard) -> Self {
        TrainItem {
            m: bundle.m.clone(),
            card: card.clone(),
            card_embedding: task_model.embed_card(card),
            y: bundle.y.clone(),
        }
    }
}

/// Decomposed surrogate objective: `total = kl + beta_z * nll`, where `nll`
/// is the mean per-step negative log-likelihood under the frozen model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub kl: f64,
    pub nll: f64,
}

/// Loss-trace row, recorded every optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub kl_term: f64,
    pub nll_term: f64,
    pub total: f64,
}

/// Training hyperparameters for the latent stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta_z: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { steps: 6000, batch: 32, lr: 1e-3, beta_z: 4.0, seed: 1 }
    }
}

/// Evaluates the surrogate objective with one fresh reparameterized sample
/// per item.
pub fn surrogate_loss(
    model: &LatentSkillModel,
    task_model: &FrozenTaskModel,
    items: &[&TrainItem],
    beta_z: f64,
    rng: &mut Rng,
) -> Result<LossParts> {
    let eps = draw_eps(model.latent_dim(), items.len(), rng);
    surrogate_loss_with_eps(model, task_model, items, beta_z, &eps)
}

/// Standard-normal noise for the reparameterized samples: one vector per
/// batch item.
pub fn draw_eps(latent_dim: usize, n_items: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..n_items).map(|_| rng.normal_vec(latent_dim)).collect()
}

/// Deterministic loss given externally drawn noise; this is the function
/// the finite-difference checks probe.
pub fn surrogate_loss_with_eps(
    model: &LatentSkillModel,
    task_model: &FrozenTaskModel,
    items: &[&TrainItem],
    beta_z: f64,
    eps: &[Vec<f64>],
) -> Result<LossParts> {
    evaluate(model, task_model, items, beta_z, eps, None)
}

/// Loss plus analytic gradient w.r.t. the latent model's flat parameters
/// (accumulated into `grad`, which must be zeroed by the caller).
pub fn loss_and_grad(
    model: &LatentSkillModel,
    task_model: &FrozenTaskModel,
    items: &[&TrainItem],
    beta_z: f64,
    eps: &[Vec<f64>],
    grad: &mut [f64],
) -> Result<LossParts> {
    evaluate(model, task_model, items, beta_z, eps, Some(grad))
}

fn evaluate(
    model: &LatentSkillModel,
    task_model: &FrozenTaskModel,
    items: &[&TrainItem],
    beta_z: f64,
    eps: &[Vec<f64>],
    mut grad: Option<&mut [f64]>,
) -> Result<LossParts> {
    if items.is_empty() {
        return Err(CmibError::EmptyInput("surrogate loss batch"));
    }
    if eps.len() != items.len() {
        return Err(CmibError::DimMismatch {
            context: "reparameterization noise count",
            expected: items.len(),
            got: eps.len(),
        });
    }
    if !(beta_z.is_finite() && beta_z >= 0.0) {
        return Err(CmibError::invalid_parameter("beta_z", "must be finite and >= 0"));
    }
    if let Some(g) = grad.as_ref() {
        if g.len() != model.param_count() {
            return Err(CmibError::DimMismatch {
                context: "gradient buffer",
                expected: model.param_count(),
                got: g.len(),
            });
        }
    }

    let d = model.latent_dim();
    let post_n = model.posterior.param_count();
    let prior_n = model.prior.param_count();
    let weight = 1.0 / items.len() as f64;
    let mut kl_sum = 0.0;
    let mut nll_sum = 0.0;

    for (item, noise) in items.iter().zip(eps) {
        if noise.len() != d {
            return Err(CmibError::DimMismatch {
                context: "reparameterization noise dim",
                expected: d,
                got: noise.len(),
            });
        }
        let horizon = item.y.len();
        if horizon == 0 {
            return Err(CmibError::EmptyInput("train item answers"));
        }

        let post_in = model.posterior_input(&item.m, &item.card_embedding)?;
        let prior_in = model.prior_input(&item.card_embedding)?;
        let post_trace = model.posterior.forward_trace(&post_in)?;
        let prior_trace = model.prior.forward_trace(&prior_in)?;
        let post_out = post_trace.output();
        let prior_out = prior_trace.output();
        let (mu_q, ls_q) = split_gaussian_head(post_out);
        let (mu_r, ls_r) = split_gaussian_head(prior_out);

        // Closed-form diagonal-Gaussian KL(q || r) in log-std form.
        let mut kl = 0.0;
        for j in 0..d {
            let vq = (2.0 * ls_q[j]).exp();
            let vr = (2.0 * ls_r[j]).exp();
            let diff = mu_q[j] - mu_r[j];
            kl += ls_r[j] - ls_q[j] + (vq + diff * diff) / (2.0 * vr) - 0.5;
        }
        kl_sum += kl;

        // Reparameterized sample and its control prefix.
        let sigma_q: Vec<f64> = ls_q.iter().map(|s| s.exp()).collect();
        let z: Vec<f64> =
            (0..d).map(|j| mu_q[j] + sigma_q[j] * noise[j]).collect();
        let proj_trace = model.projection.forward_trace(&z)?;
        let u = proj_trace.output().to_vec();

        // Frozen-model log-likelihood of every step's answer, averaged.
        let mut item_nll = 0.0;
        let mut du = vec![0.0; u.len()];
        for (t, &y_t) in item.y.iter().enumerate() {
            let frozen_trace = task_model.trace(&u, &item.card_embedding, t)?;
            let probs = softmax(frozen_trace.output());
            item_nll -= probs[y_t].max(f64::MIN_POSITIVE).ln();
            if grad.is_some() {
                let mut cotangent = probs;
                cotangent[y_t] -= 1.0;
                let dinput = task_model.backward_to_input(&frozen_trace, &cotangent);
                for (a, b) in du.iter_mut().zip(&dinput) {
                    *a += b / horizon as f64;
                }
            }
        }
        item_nll /= horizon as f64;
        nll_sum += item_nll;

        let Some(g) = grad.as_deref_mut() else { continue };

        // Backprop: the nll path runs through the projection into z, then
        // into the posterior head; the KL path hits both heads directly.
        for x in &mut du {
            *x *= beta_z * weight;
        }
        let (g_post, rest) = g.split_at_mut(post_n);
        let (g_prior, g_proj) = rest.split_at_mut(prior_n);
        let dz = model.projection.backward(&proj_trace, &du, g_proj);

        let mut post_cot = vec![0.0; 2 * d];
        let mut prior_cot = vec![0.0; 2 * d];
        for j in 0..d {
            let vq = (2.0 * ls_q[j]).exp();
            let vr = (2.0 * ls_r[j]).exp();
            let diff = mu_q[j] - mu_r[j];
            // KL partials w.r.t. means and (clamped) log-stds.
            let dkl_dmu_q = diff / vr;
            let dkl_dls_q = vq / vr - 1.0;
            let dkl_dls_r = 1.0 - (vq + diff * diff) / vr;

            // Gates: the clamp kills the gradient outside the open range.
            let gate_q = f64::from(post_out[d + j] > LOG_SIGMA_MIN && post_out[d + j] < LOG_SIGMA_MAX);
            let gate_r =
                f64::from(prior_out[d + j] > LOG_SIGMA_MIN && prior_out[d + j] < LOG_SIGMA_MAX);

            // dz/dmu_q = 1, dz/dls_q = sigma * eps (through the clamp).
            post_cot[j] = weight * dkl_dmu_q + dz[j];
            post_cot[d + j] =
                (weight * dkl_dls_q + dz[j] * sigma_q[j] * noise[j]) * gate_q;
            prior_cot[j] = -weight * dkl_dmu_q;
            prior_cot[d + j] = weight * dkl_dls_r * gate_r;
        }
        model.posterior.backward(&post_trace, &post_cot, g_post);
        model.prior.backward(&prior_trace, &prior_cot, g_prior);
    }

    let kl = kl_sum * weight;
    let nll = nll_sum * weight;
    Ok(LossParts { total: kl + beta_z * nll, kl, nll })
}

/// Optimizes the latent model in place against the surrogate objective and
/// returns the per-step loss trace. The frozen model's checksum is verified
/// before and after, and a non-finite loss aborts with the offending step
/// and batch item.
pub fn train(
    model: &mut LatentSkillModel,
    task_model: &FrozenTaskModel,
    dataset: &[TrainItem],
    cfg: &TrainConfig,
) -> Result<Vec<TraceRow>> {
    if dataset.is_empty() {
        return Err(CmibError::EmptyInput("training dataset"));
    }
    if cfg.batch == 0 {
        return Err(CmibError::invalid_parameter("batch", "must be positive"));
    }
    task_model.verify_checksum()?;

    let root = Rng::new(cfg.seed);
    let mut params = model.flatten_params();
    let mut adam = Adam::new(params.len(), cfg.lr);
    let mut grad = vec![0.0; params.len()];
    let mut trace = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let mut step_rng = root.substream("train-step", step as u64);
        let batch: Vec<&TrainItem> = (0..cfg.batch)
            .map(|_| &dataset[step_rng.below(dataset.len())])
            .collect();
        let eps = draw_eps(model.latent_dim(), batch.len(), &mut step_rng);
        grad.iter_mut().for_each(|x| *x = 0.0);
        let parts = loss_and_grad(model, task_model, &batch, cfg.beta_z, &eps, &mut grad)?;
        if !parts.total.is_finite() {
            let item = batch
                .iter()
                .position(|it| {
                    surrogate_loss_with_eps(model, task_model, &[it], cfg.beta_z, &eps[..1])
                        .map(|p| !p.total.is_finite())
                        .unwrap_or(true)
                })
                .unwrap_or(0);
            return Err(CmibError::NonFiniteLoss { step, item });
        }
        trace.push(TraceRow {
            step,
            kl_term: parts.kl,
            nll_term: parts.nll,
            total: parts.total,
        });
        adam.step(&mut params, &grad);
        model.set_params(&params)?;
    }

    task_model.verify_checksum()?;
    Ok(trace)
}

/// Renders a loss trace as CSV (`step,kl_term,nll_term,total`).
/// Result of one randomized finite-difference audit of the analytic
/// gradient.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradientCheck {
    pub seed: u64,
    pub beta_z: f64,
    pub conditioned: bool,
    pub param_count: usize,
    pub loss: f64,
    pub max_rel_err: f64,
}

/// Builds a small random instance (environment, frozen scorer, dataset,
/// latent model, reparameterization noise) from `seed` and compares the
/// analytic gradient of the surrogate objective against central differences
/// over every parameter.
pub fn finite_difference_check(seed: u64, beta_z: f64) -> Result<GradientCheck> {
    use crate::env::{generate_task, make_bundle, EnvParams};
    use crate::model::latent::LatentDescriptor;
    use crate::numeric::{
        central_difference, max_relative_error, Activation, FeedforwardNet,
    };

    let root = Rng::new(seed);
    let mut dims = root.substream("dims", 0);
    let env = EnvParams {
        horizon: 2 + dims.below(2),
        d_m: 6 + 2 * dims.below(2),
        alpha: 0.5,
        ..EnvParams::default()
    };
    let card_dim = 2 * env.horizon + 4;
    let prefix_dim = card_dim;
    let conditioned = dims.below(2) == 0;

    let mut net_rng = root.substream("frozen", 0);
    let net = FeedforwardNet::random(
        &[prefix_dim + card_dim + env.horizon, 10, env.action_count],
        &[Activation::Tanh, Activation::Identity],
        &mut net_rng,
    )?;
    let frozen =
        FrozenTaskModel::new(env.horizon, env.action_count, prefix_dim, card_dim, net)?;

    let data_rng = root.substream("data", 0);
    let items: Vec<TrainItem> = (0..3)
        .map(|i| {
            let task = generate_task(&env, i as u64, &data_rng)?;
            let bundle = make_bundle(&task, &env, &data_rng)?;
            let card = SkillCard {
                goal: vec![format!("g{}", i % 4)],
                preconditions: task
                    .text_routed
                    .iter()
                    .map(|&t| format!("h{t}a{}", task.answers[t]))
                    .collect(),
                action_patterns: vec!["ok0-1".into()],
                failure_modes: vec![],
            };
            Ok(TrainItem::new(&frozen, &bundle, &card))
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&TrainItem> = items.iter().collect();

    let descriptor = LatentDescriptor {
        m_dim: 2 * env.d_m,
        card_dim,
        latent_dim: 3 + dims.below(2),
        prefix_dim,
        posterior_hidden: 8,
        prior_hidden: 6,
        projection_hidden: 6,
        conditioned,
    };
    let mut model_rng = root.substream("model", 0);
    let mut model = LatentSkillModel::new(descriptor, &mut model_rng)?;
    let mut eps_rng = root.substream("eps", 0);
    let eps = draw_eps(model.latent_dim(), refs.len(), &mut eps_rng);

    let params = model.flatten_params();
    let mut grad = vec![0.0; params.len()];
    let parts = loss_and_grad(&model, &frozen, &refs, beta_z, &eps, &mut grad)?;
    let numeric = central_difference(
        &mut |p: &[f64]| {
            model.set_params(p).expect("parameter vector length is fixed");
            surrogate_loss_with_eps(&model, &frozen, &refs, beta_z, &eps)
                .expect("loss is finite near the checked point")
                .total
        },
        &params,
        1e-5,
    );
    Ok(GradientCheck {
        seed,
        beta_z,
        conditioned,
        param_count: params.len(),
        loss: parts.total,
        max_rel_err: max_relative_error(&grad, &numeric),
    })
}

pub fn trace_to_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("step,kl_term,nll_term,total\n");
    for row in trace {
        out.push_str(&format!(
            "{},{:.17e},{:.17e},{:.17e}\n",
            row.step, row.kl_term, row.nll_term, row.total
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_task, make_bundle, EnvParams};
    use crate::model::frozen::{prefit, PrefitConfig};
    use crate::model::latent::LatentDescriptor;
    use crate::numeric::{central_difference, max_relative_error, Activation, FeedforwardNet};
    use approx::assert_relative_eq;

    fn small_env() -> EnvParams {
        EnvParams { horizon: 3, d_m: 6, ..EnvParams::default() }
    }

    fn random_frozen(env: &EnvParams, seed: u64) -> FrozenTaskModel {
        let mut rng = Rng::new(seed);
        let card_dim = 2 * env.horizon + 4;
        let prefix_dim = 2 * env.horizon + 4;
        let net = FeedforwardNet::random(
            &[prefix_dim + card_dim + env.horizon, 12, env.action_count],
            &[Activation::Tanh, Activation::Identity],
            &mut rng,
        )
        .unwrap();
        FrozenTaskModel::new(env.horizon, env.action_count, prefix_dim, card_dim, net).unwrap()
    }

    fn dataset(env: &EnvParams, task_model: &FrozenTaskModel, n: usize, seed: u64) -> Vec<TrainItem> {
        let root = Rng::new(seed);
        (0..n)
            .map(|i| {
                let task = generate_task(env, i as u64, &root).unwrap();
                let bundle = make_bundle(&task, env, &root).unwrap();
                let card = SkillCard {
                    goal: vec![format!("g{}", i % 4)],
                    preconditions: task
                        .text_routed
                        .iter()
                        .map(|&t| format!("h{t}a{}", task.answers[t]))
                        .collect(),
                    action_patterns: vec!["ok0-1".into()],
                    failure_modes: vec![],
                };
                TrainItem::new(task_model, &bundle, &card)
            })
            .collect()
    }

    fn small_model(env: &EnvParams, conditioned: bool, seed: u64) -> LatentSkillModel {
        let mut rng = Rng::new(seed);
        let descriptor = LatentDescriptor {
            m_dim: 2 * env.d_m,
            card_dim: 2 * env.horizon + 4,
            latent_dim: 4,
            prefix_dim: 2 * env.horizon + 4,
            posterior_hidden: 10,
            prior_hidden: 8,
            projection_hidden: 8,
            conditioned,
        };
        LatentSkillModel::new(descriptor, &mut rng).unwrap()
    }

    #[test]
    fn posterior_equal_to_prior_leaves_only_likelihood() {
        let env = small_env();
        let frozen = random_frozen(&env, 1);
        let mut model = small_model(&env, true, 2);
        // Make posterior and prior produce identical constant outputs:
        // zero all weights, set equal head biases.
        let mut params = vec![0.0; model.param_count()];
        let post_n = model.posterior.param_count();
        let prior_n = model.prior.param_count();
        let d = model.latent_dim();
        for j in 0..d {
            params[post_n - 2 * d + j] = 0.3;
            params[post_n - d + j] = -0.2;
            params[post_n + prior_n - 2 * d + j] = 0.3;
            params[post_n + prior_n - d + j] = -0.2;
        }
        model.set_params(&params).unwrap();
        let items = dataset(&env, &frozen, 3, 3);
        let refs: Vec<&TrainItem> = items.iter().collect();
        let mut rng = Rng::new(4);
        let parts = surrogate_loss(&model, &frozen, &refs, 2.5, &mut rng).unwrap();
        assert_relative_eq!(parts.kl, 0.0, epsilon = 1e-12);
        assert_relative_eq!(parts.total, 2.5 * parts.nll, epsilon = 1e-12);
        assert!(parts.nll > 0.0);
    }

    #[test]
    fn zero_beta_reduces_to_mean_kl() {
        let env = small_env();
        let frozen = random_frozen(&env, 5);
        let model = small_model(&env, true, 6);
        let items = dataset(&env, &frozen, 4, 7);
        let refs: Vec<&TrainItem> = items.iter().collect();
        let mut rng = Rng::new(8);
        let parts = surrogate_loss(&model, &frozen, &refs, 0.0, &mut rng).unwrap();
        assert!(parts.kl >= 0.0);
        assert_relative_eq!(parts.total, parts.kl, epsilon = 1e-12);
    }

    #[test]
    fn closed_form_kl_matches_sampled_log_ratio() {
        // The loss uses the analytic KL; an independent estimator samples z
        // from the posterior and averages log q - log r.
        let env = small_env();
        let frozen = random_frozen(&env, 9);
        let model = small_model(&env, true, 10);
        let items = dataset(&env, &frozen, 1, 11);
        let item = &items[0];
        let q = model.posterior_dist(&item.m, &item.card_embedding).unwrap();
        let r = model
            .prior_dist(&item.card_embedding)
            .unwrap();
        let exact = q.kl(&r).unwrap();

        let mut rng = Rng::new(12);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let z = q.sample(&mut rng);
            let ratio = q.logpdf(&z).unwrap() - r.logpdf(&z).unwrap();
            sum += ratio;
            sumsq += ratio * ratio;
        }
        let mean = sum / n as f64;
        let var = (sumsq / n as f64 - mean * mean).max(0.0);
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - exact).abs() <= 3.0 * se.max(1e-12),
            "sampled {mean} vs exact {exact} (se {se})"
        );
    }

    #[test]
    fn loss_is_deterministic_given_noise() {
        let env = small_env();
        let frozen = random_frozen(&env, 13);
        let model = small_model(&env, true, 14);
        let items = dataset(&env, &frozen, 3, 15);
        let refs: Vec<&TrainItem> = items.iter().collect();
        let mut rng = Rng::new(16);
        let eps = draw_eps(model.latent_dim(), refs.len(), &mut rng);
        let a = surrogate_loss_with_eps(&model, &frozen, &refs, 1.5, &eps).unwrap();
        let b = surrogate_loss_with_eps(&model, &frozen, &refs, 1.5, &eps).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let env = small_env();
        let frozen = random_frozen(&env, 17);
        let items = dataset(&env, &frozen, 2, 18);
        let refs: Vec<&TrainItem> = items.iter().collect();

        for (seed, conditioned) in [(19u64, true), (20, false), (21, true)] {
            let mut model = small_model(&env, conditioned, seed);
            let mut rng = Rng::new(seed ^ 0xabcd);
            let eps = draw_eps(model.latent_dim(), refs.len(), &mut rng);

            let params = model.flatten_params();
            let mut grad = vec![0.0; params.len()];
            let parts =
                loss_and_grad(&model, &frozen, &refs, 3.0, &eps, &mut grad).unwrap();
            assert!(parts.total.is_finite());

            let numeric = central_difference(
                &mut |p: &[f64]| {
                    model.set_params(p).unwrap();
                    surrogate_loss_with_eps(&model, &frozen, &refs, 3.0, &eps)
                        .unwrap()
                        .total
                },
                &params,
                1e-5,
            );
            let err = max_relative_error(&grad, &numeric);
            assert!(err < 1e-6, "finite-difference mismatch: {err}");
        }
    }

    #[test]
    fn zero_steps_leaves_model_unchanged() {
        let env = small_env();
        let frozen = random_frozen(&env, 22);
        let mut model = small_model(&env, true, 23);
        let before = model.flatten_params();
        let items = dataset(&env, &frozen, 2, 24);
        let cfg = TrainConfig { steps: 0, ..Default::default() };
        let trace = train(&mut model, &frozen, &items, &cfg).unwrap();
        assert!(trace.is_empty());
        assert_eq!(model.flatten_params(), before);
    }

    #[test]
    fn training_reduces_loss_and_keeps_frozen_model_intact() {
        let env = small_env();
        let cfg_prefit = PrefitConfig { tasks: 6, steps: 200, batch: 16, hidden: 16, ..Default::default() };
        let frozen = prefit(&env, &cfg_prefit).unwrap();
        let checksum_before = frozen.checksum().to_string();
        let mut model = small_model(&env, true, 25);
        let items = dataset(&env, &frozen, 6, 26);
        let cfg = TrainConfig { steps: 120, batch: 8, ..Default::default() };
        let trace = train(&mut model, &frozen, &items, &cfg).unwrap();
        assert_eq!(trace.len(), 120);
        let head: f64 = trace[..20].iter().map(|r| r.total).sum::<f64>() / 20.0;
        let tail: f64 =
            trace[trace.len() - 20..].iter().map(|r| r.total).sum::<f64>() / 20.0;
        assert!(tail < head, "loss did not decrease: {head} -> {tail}");
        assert_eq!(frozen.checksum(), checksum_before);
        frozen.verify_checksum().unwrap();
    }

    #[test]
    fn training_is_deterministic() {
        let env = small_env();
        let frozen = random_frozen(&env, 27);
        let items = dataset(&env, &frozen, 3, 28);
        let cfg = TrainConfig { steps: 15, batch: 4, ..Default::default() };
        let mut a = small_model(&env, true, 29);
        let mut b = small_model(&env, true, 29);
        let ta = train(&mut a, &frozen, &items, &cfg).unwrap();
        let tb = train(&mut b, &frozen, &items, &cfg).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(a.flatten_params(), b.flatten_params());
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostics() {
        let env = small_env();
        let frozen = random_frozen(&env, 30);
        let mut model = small_model(&env, true, 31);
        // Poison the perception of one item so the posterior output is NaN.
        let mut items = dataset(&env, &frozen, 2, 32);
        items[1].m[0] = f64::NAN;
        let cfg = TrainConfig { steps: 5, batch: 4, ..Default::default() };
        match train(&mut model, &frozen, &items, &cfg) {
            Err(CmibError::NonFiniteLoss { .. }) => {}
            other => panic!("expected non-finite abort, got {other:?}"),
        }
    }

    #[test]
    fn empty_batch_rejected() {
        let env = small_env();
        let frozen = random_frozen(&env, 33);
        let model = small_model(&env, true, 34);
        let mut rng = Rng::new(35);
        assert!(surrogate_loss(&model, &frozen, &[], 1.0, &mut rng).is_err());
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let rows = vec![
            TraceRow { step: 0, kl_term: 1.0, nll_term: 2.0, total: 9.0 },
            TraceRow { step: 1, kl_term: 0.5, nll_term: 1.5, total: 6.5 },
        ];
        let csv = trace_to_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "step,kl_term,nll_term,total");
        assert!(lines[1].starts_with("0,"));
    }
}
