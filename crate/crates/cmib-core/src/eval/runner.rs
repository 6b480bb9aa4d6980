use std::time::Instant;

use crate::card::{
    aggregate_evidence, extract_evidence, format_candidates, select_card, EvidenceRecord,
    SelectionReport, SkillCard,
};
use crate::config::ExperimentConfig;
use crate::env::{generate_task, make_bundle, RolloutBundle, TaskInstance};
use crate::error::{CmibError, Result};
use crate::eval::metrics::{self_consistency_steps, Method, RunRecord};
use crate::library::{MultimodalSkill, Provenance};
use crate::model::{
    control_forward, realize_skill, train, CardOnlyPredictor, FrozenTaskModel,
    LatentDescriptor, LatentSkillModel, TraceRow, TrainItem,
};
use crate::numeric::{argmax, sample_index, Rng};

/// Offset separating experiment task ids from the pre-fit pool (which lives
/// at `1 << 32` and above) and from other seeds' tasks.
const TASKS_PER_SEED_STRIDE: u64 = 1_000_000;

/// A trained latent arm: the model, the skills it realized (one per
/// bundle, index-aligned with the workload's tasks), and its training
/// trace.
#[derive(Debug, Clone)]
pub struct ArmArtifacts {
    pub model: LatentSkillModel,
    pub skills: Vec<MultimodalSkill>,
    pub trace: Vec<TraceRow>,
}

impl ArmArtifacts {
    /// Encoder calls spent realizing this arm's skills (one per skill).
    pub fn encoder_calls(&self) -> u64 {
        self.skills.len() as u64
    }
}

/// Everything one seed shares across evaluation arms: tasks, their rollout
/// bundles, the selected cards, the training items, and the two trained
/// latent arms (conditional and independent).
#[derive(Debug, Clone)]
pub struct SeedWorkload {
    pub seed: u64,
    pub config_hash: String,
    pub tasks: Vec<TaskInstance>,
    pub bundles: Vec<RolloutBundle>,
    pub cards: Vec<SkillCard>,
    pub selections: Vec<SelectionReport>,
    pub items: Vec<TrainItem>,
    pub cmib: ArmArtifacts,
    pub independent: ArmArtifacts,
}

/// Generates the seed's tasks and their rollout bundles. Task ids are
/// disjoint across seeds and from the frozen model's pre-fit pool.
pub fn generate_seed_tasks(
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(Vec<TaskInstance>, Vec<RolloutBundle>)> {
    let root = Rng::new(seed);
    let mut tasks = Vec::with_capacity(cfg.eval.tasks_per_seed);
    let mut bundles = Vec::with_capacity(cfg.eval.tasks_per_seed);
    for i in 0..cfg.eval.tasks_per_seed {
        let task_id = seed
            .checked_mul(TASKS_PER_SEED_STRIDE)
            .and_then(|b| b.checked_add(i as u64))
            .ok_or_else(|| CmibError::invalid_parameter("seed", "task id overflow"))?;
        let task = generate_task(&cfg.env, task_id, &root)?;
        let bundle = make_bundle(&task, &cfg.env, &root)?;
        tasks.push(task);
        bundles.push(bundle);
    }
    Ok((tasks, bundles))
}

/// Mines evidence from each bundle and selects one card per bundle via the
/// length-utility objective, scored through the frozen readout.
pub fn select_seed_cards(
    cfg: &ExperimentConfig,
    frozen: &FrozenTaskModel,
    bundles: &[RolloutBundle],
) -> Result<(Vec<SkillCard>, Vec<SelectionReport>)> {
    let predictor = CardOnlyPredictor { model: frozen };
    let mut cards = Vec::with_capacity(bundles.len());
    let mut selections = Vec::with_capacity(bundles.len());
    for bundle in bundles {
        let records: Vec<EvidenceRecord> = bundle
            .trajectories
            .iter()
            .map(extract_evidence)
            .collect::<Result<_>>()?;
        let summary = aggregate_evidence(&records)?;
        let candidates =
            format_candidates(&summary, cfg.bottleneck.card_budget, cfg.bottleneck.n_candidates)?;
        let (card, report) = select_card(&candidates, bundle, cfg.bottleneck.beta_c, &predictor)?;
        cards.push(card);
        selections.push(report);
    }
    Ok((cards, selections))
}

/// Generates the seed's tasks and bundles, selects one card per bundle.
pub fn build_skill_inputs(
    cfg: &ExperimentConfig,
    frozen: &FrozenTaskModel,
    seed: u64,
) -> Result<(Vec<TaskInstance>, Vec<RolloutBundle>, Vec<SkillCard>, Vec<SelectionReport>)> {
    let (tasks, bundles) = generate_seed_tasks(cfg, seed)?;
    let (cards, selections) = select_seed_cards(cfg, frozen, &bundles)?;
    Ok((tasks, bundles, cards, selections))
}

/// Trains one latent arm on the seed's items and realizes one skill per
/// bundle. `conditioned` picks between the conditional pair and the
/// independent ablation (posterior and prior blind to the card).
pub fn build_arm(
    cfg: &ExperimentConfig,
    frozen: &FrozenTaskModel,
    bundles: &[RolloutBundle],
    cards: &[SkillCard],
    selections: &[SelectionReport],
    items: &[TrainItem],
    seed: u64,
    conditioned: bool,
) -> Result<ArmArtifacts> {
    if cfg.bottleneck.prefix_dim != frozen.prefix_dim {
        return Err(CmibError::DimMismatch {
            context: "latent prefix width vs frozen prefix slot",
            expected: frozen.prefix_dim,
            got: cfg.bottleneck.prefix_dim,
        });
    }
    let m_dim = bundles[0].m.len();
    let mut descriptor = LatentDescriptor::standard(m_dim, frozen.card_dim, conditioned);
    descriptor.latent_dim = cfg.bottleneck.latent_dim;
    descriptor.prefix_dim = cfg.bottleneck.prefix_dim;

    let label = if conditioned { "arm-cmib" } else { "arm-independent" };
    let root = Rng::new(seed);
    let mut init_rng = root.substream(label, 0);
    let mut model = LatentSkillModel::new(descriptor, &mut init_rng)?;
    let trace = train(&mut model, frozen, items, &cfg.train_config(seed))?;
    let final_loss = trace.last().map(|row| row.total).unwrap_or(f64::NAN);

    let mut realize_rng = root.substream(label, 1);
    let mut skills = Vec::with_capacity(bundles.len());
    for ((bundle, card), selection) in bundles.iter().zip(cards).zip(selections) {
        let provenance = Provenance {
            bundle_id: bundle.bundle_id(),
            config_hash: cfg.hash(),
            j_c: selection.objective,
            j_z: final_loss,
        };
        skills.push(realize_skill(&model, frozen, bundle, card, provenance, &mut realize_rng)?);
    }
    Ok(ArmArtifacts { model, skills, trace })
}

/// Builds the full per-seed workload: inputs, both trained arms, skills.
pub fn build_seed_workload(
    cfg: &ExperimentConfig,
    frozen: &FrozenTaskModel,
    seed: u64,
) -> Result<SeedWorkload> {
    let (tasks, bundles, cards, selections) = build_skill_inputs(cfg, frozen, seed)?;
    let items: Vec<TrainItem> = bundles
        .iter()
        .zip(&cards)
        .map(|(b, c)| TrainItem::new(frozen, b, c))
        .collect();
    let cmib = build_arm(cfg, frozen, &bundles, &cards, &selections, &items, seed, true)?;
    let independent =
        build_arm(cfg, frozen, &bundles, &cards, &selections, &items, seed, false)?;
    Ok(SeedWorkload {
        seed,
        config_hash: cfg.hash(),
        tasks,
        bundles,
        cards,
        selections,
        items,
        cmib,
        independent,
    })
}

/// Mean KL divergence between the posterior and the prior over the given
/// items, in nats: the redundancy proxy for how much of the latent merely
/// restates the card.
pub fn redundancy(model: &LatentSkillModel, items: &[TrainItem]) -> Result<f64> {
    if items.is_empty() {
        return Err(CmibError::EmptyInput("redundancy: no items"));
    }
    let mut total = 0.0;
    for item in items {
        let posterior = model.posterior_dist(&item.m, &item.card_embedding)?;
        let prior = model.prior_dist(&item.card_embedding)?;
        total += posterior.kl(&prior)?;
    }
    Ok(total / items.len() as f64)
}

/// One evaluation pass of `method` over the workload's tasks. Skill arms
/// decode greedily from their stored skills; the skillless baselines sample
/// from the frozen model's hedge distribution at temperature 1. Encoder
/// calls for skill realization are charged to the first repeat (`repeat ==
/// 0`), since skills are realized once per seed and reused.
pub fn run_method_once(
    method: Method,
    workload: &SeedWorkload,
    frozen: &FrozenTaskModel,
    repeat: usize,
    rng: &mut Rng,
) -> Result<RunRecord> {
    let started = Instant::now();
    let horizon = frozen.horizon;
    let zero_u = vec![0.0; frozen.prefix_dim];
    let mut actions = Vec::with_capacity(workload.tasks.len());
    let mut truths = Vec::with_capacity(workload.tasks.len());
    let mut calls: u64 = 0;

    for (i, task) in workload.tasks.iter().enumerate() {
        let mut chosen = Vec::with_capacity(horizon);
        // Skill-less arms still observe the task: they read the raw prompt
        // stream through the frozen embedder, with no control prefix.
        let e_stream = frozen.embed_tokens(&task.text);
        match method {
            Method::Vanilla => {
                for t in 0..horizon {
                    let p = frozen.action_distribution(&zero_u, &e_stream, t)?;
                    chosen.push(sample_index(&p, rng));
                    calls += 1;
                }
            }
            Method::SelfConsistency(k) => {
                let (picked, spent) = self_consistency_steps(
                    &mut |t| frozen.action_distribution(&zero_u, &e_stream, t),
                    horizon,
                    k,
                    rng,
                )?;
                chosen = picked;
                calls += spent;
            }
            Method::TextOnly | Method::IndependentCz | Method::Cmib => {
                let (skill, use_latent) = match method {
                    Method::TextOnly => (&workload.cmib.skills[i], false),
                    Method::IndependentCz => (&workload.independent.skills[i], true),
                    _ => (&workload.cmib.skills[i], true),
                };
                for t in 0..horizon {
                    let p = control_forward(frozen, skill, t, use_latent)?;
                    chosen.push(argmax(&p));
                    calls += 1;
                }
            }
        }
        actions.push(chosen);
        truths.push(task.answers.clone());
    }

    if repeat == 0 {
        calls += match method {
            Method::Cmib | Method::TextOnly => workload.cmib.encoder_calls(),
            Method::IndependentCz => workload.independent.encoder_calls(),
            _ => 0,
        };
    }

    RunRecord::new(
        method,
        workload.seed,
        actions,
        truths,
        calls,
        started.elapsed().as_secs_f64() * 1e3,
    )
}

/// Runs `n_repeats` independent passes of one method over the workload.
pub fn run_method(
    method: Method,
    workload: &SeedWorkload,
    frozen: &FrozenTaskModel,
    n_repeats: usize,
) -> Result<Vec<RunRecord>> {
    if n_repeats == 0 {
        return Err(CmibError::invalid_parameter("n_repeats", "must be positive"));
    }
    let root = Rng::new(workload.seed);
    let tag = method.tag();
    (0..n_repeats)
        .map(|r| {
            let mut rng = root.substream(&tag, r as u64);
            run_method_once(method, workload, frozen, r, &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::metrics::{step_consistency, step_sr};
    use crate::model::{prefit, PrefitConfig};

    fn tiny_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.eval.tasks_per_seed = 2;
        cfg.eval.seeds = vec![1];
        cfg.train.steps = 30;
        cfg.frozen = PrefitConfig { tasks: 12, steps: 40, batch: 8, hidden: 12, ..Default::default() };
        cfg
    }

    fn tiny_frozen(cfg: &ExperimentConfig) -> FrozenTaskModel {
        prefit(&cfg.env, &cfg.frozen).unwrap()
    }

    #[test]
    fn workload_is_deterministic_per_seed() {
        let cfg = tiny_config();
        let frozen = tiny_frozen(&cfg);
        let a = build_seed_workload(&cfg, &frozen, 1).unwrap();
        let b = build_seed_workload(&cfg, &frozen, 1).unwrap();
        assert_eq!(a.cards, b.cards);
        assert_eq!(a.cmib.skills, b.cmib.skills);
        assert_eq!(a.independent.skills, b.independent.skills);
        let c = build_seed_workload(&cfg, &frozen, 2).unwrap();
        assert_ne!(a.bundles[0].y, c.bundles[0].y);
    }

    #[test]
    fn greedy_arms_repeat_identically_and_sampling_arms_do_not() {
        let cfg = tiny_config();
        let frozen = tiny_frozen(&cfg);
        let w = build_seed_workload(&cfg, &frozen, 1).unwrap();

        let cmib_runs = run_method(Method::Cmib, &w, &frozen, 3).unwrap();
        assert_eq!(step_consistency(&cmib_runs).unwrap(), 1.0);

        let vanilla_runs = run_method(Method::Vanilla, &w, &frozen, 3).unwrap();
        assert!(step_consistency(&vanilla_runs).unwrap() < 1.0);
    }

    #[test]
    fn call_counts_follow_the_cost_contract() {
        let cfg = tiny_config();
        let frozen = tiny_frozen(&cfg);
        let w = build_seed_workload(&cfg, &frozen, 1).unwrap();
        let steps = (w.tasks.len() * frozen.horizon) as u64;

        let vanilla = run_method(Method::Vanilla, &w, &frozen, 2).unwrap();
        assert!(vanilla.iter().all(|r| r.call_count == steps));

        for k in [1usize, 5] {
            let sc = run_method(Method::SelfConsistency(k), &w, &frozen, 2).unwrap();
            assert!(sc.iter().all(|r| r.call_count == steps * k as u64));
        }

        let cmib = run_method(Method::Cmib, &w, &frozen, 3).unwrap();
        assert_eq!(cmib[0].call_count, steps + w.tasks.len() as u64);
        assert_eq!(cmib[1].call_count, steps);
        let total: u64 = cmib.iter().map(|r| r.call_count).sum();
        let vanilla_total = 3 * steps;
        assert!((total as f64) <= 1.1 * vanilla_total as f64);
    }

    #[test]
    fn sc_k1_equals_vanilla_under_the_same_stream() {
        let cfg = tiny_config();
        let frozen = tiny_frozen(&cfg);
        let w = build_seed_workload(&cfg, &frozen, 1).unwrap();
        let mut rng_a = Rng::new(99);
        let a = run_method_once(Method::Vanilla, &w, &frozen, 1, &mut rng_a).unwrap();
        let mut rng_b = Rng::new(99);
        let b =
            run_method_once(Method::SelfConsistency(1), &w, &frozen, 1, &mut rng_b).unwrap();
        assert_eq!(a.actions, b.actions);
    }

    #[test]
    fn redundancy_is_zero_when_posterior_equals_prior() {
        let cfg = tiny_config();
        let frozen = tiny_frozen(&cfg);
        let (_, bundles, cards, _) = build_skill_inputs(&cfg, &frozen, 1).unwrap();
        let items: Vec<TrainItem> =
            bundles.iter().zip(&cards).map(|(b, c)| TrainItem::new(&frozen, b, c)).collect();

        let m_dim = bundles[0].m.len();
        let mut descriptor = LatentDescriptor::standard(m_dim, frozen.card_dim, true);
        descriptor.latent_dim = cfg.bottleneck.latent_dim;
        descriptor.prefix_dim = cfg.bottleneck.prefix_dim;
        let mut rng = Rng::new(5);
        let mut model = LatentSkillModel::new(descriptor, &mut rng).unwrap();
        // Zero every parameter: both heads emit the same bias Gaussian.
        let zeros = vec![0.0; model.param_count()];
        model.set_params(&zeros).unwrap();
        let r = redundancy(&model, &items).unwrap();
        assert!(r.abs() < 1e-12, "got {r}");

        // An optimized model keeps redundancy non-negative.
        let w = build_seed_workload(&cfg, &frozen, 1).unwrap();
        assert!(redundancy(&w.cmib.model, &w.items).unwrap() >= 0.0);
    }

    #[test]
    fn text_only_uses_the_card_but_not_the_latent() {
        let cfg = tiny_config();
        let frozen = tiny_frozen(&cfg);
        let w = build_seed_workload(&cfg, &frozen, 1).unwrap();
        let text = run_method(Method::TextOnly, &w, &frozen, 2).unwrap();
        // Greedy and latent-free: identical across repeats.
        assert_eq!(text[0].actions, text[1].actions);
        // Latent-free decoding must equal control_forward with the prefix
        // suppressed.
        let skill = &w.cmib.skills[0];
        for t in 0..frozen.horizon {
            let p = control_forward(&frozen, skill, t, false).unwrap();
            assert_eq!(text[0].actions[0][t], argmax(&p));
        }
    }

    #[test]
    fn skill_arms_beat_vanilla_on_trained_tasks() {
        let mut cfg = tiny_config();
        cfg.eval.tasks_per_seed = 4;
        cfg.train.steps = 250;
        cfg.frozen = PrefitConfig::default();
        let frozen = tiny_frozen(&cfg);
        let w = build_seed_workload(&cfg, &frozen, 1).unwrap();
        let mean_sr = |rs: &[RunRecord]| {
            rs.iter().map(step_sr).sum::<f64>() / rs.len() as f64
        };
        let vanilla = mean_sr(&run_method(Method::Vanilla, &w, &frozen, 3).unwrap());
        let text = mean_sr(&run_method(Method::TextOnly, &w, &frozen, 3).unwrap());
        let cmib = mean_sr(&run_method(Method::Cmib, &w, &frozen, 3).unwrap());
        assert!(vanilla < text, "vanilla {vanilla} vs text {text}");
        assert!(text <= cmib + 1e-12, "text {text} vs cmib {cmib}");
    }
}
