//! Behavioral checks on the synthetic environment: text carries exactly the
//! routed fraction of answers, perception always carries all of them, and a
//! hint-reading oracle degrades to chance as routing is withdrawn.

use cmib_core::env::{action_code, generate_task, parse_hint, EnvParams, TaskInstance};
use cmib_core::numeric::Rng;

/// Decodes one task from its prompt stream alone: hinted steps answer the
/// hint, unhinted steps guess uniformly.
fn text_oracle(task: &TaskInstance, action_count: usize, rng: &mut Rng) -> Vec<usize> {
    let mut hinted = vec![None; task.answers.len()];
    for symbol in &task.text {
        if let Some((t, a)) = parse_hint(symbol) {
            if t < hinted.len() {
                hinted[t] = Some(a);
            }
        }
    }
    hinted
        .into_iter()
        .map(|h| h.unwrap_or_else(|| rng.below(action_count)))
        .collect()
}

fn oracle_accuracy(alpha: f64, n_tasks: u64, seed: u64) -> f64 {
    let params = EnvParams { alpha, ..EnvParams::default() };
    let root = Rng::new(seed);
    let mut guess_rng = root.substream("guess", 0);
    let mut hits = 0usize;
    let mut total = 0usize;
    for i in 0..n_tasks {
        let task = generate_task(&params, i, &root).unwrap();
        let decoded = text_oracle(&task, params.action_count, &mut guess_rng);
        for (a, y) in decoded.iter().zip(&task.answers) {
            total += 1;
            hits += (a == y) as usize;
        }
    }
    hits as f64 / total as f64
}

#[test]
fn fully_routed_tasks_are_solved_from_text_alone() {
    let acc = oracle_accuracy(1.0, 300, 11);
    assert!(acc >= 0.99, "alpha=1 text oracle accuracy {acc}");
}

#[test]
fn unrouted_tasks_leave_text_at_chance_level() {
    let params = EnvParams::default();
    let n_steps = 300.0 * params.horizon as f64;
    let p = 1.0 / params.action_count as f64;
    let sigma = (p * (1.0 - p) / n_steps).sqrt();
    let acc = oracle_accuracy(0.0, 300, 12);
    assert!(
        (acc - p).abs() <= 3.0 * sigma,
        "alpha=0 text oracle accuracy {acc}, chance {p}, sigma {sigma}"
    );
}

#[test]
fn routed_step_count_is_exact_and_oracle_accuracy_is_monotone() {
    let alphas = [0.0, 0.25, 0.5, 0.75, 1.0];
    let horizon = EnvParams::default().horizon;
    for &alpha in &alphas {
        let params = EnvParams { alpha, ..EnvParams::default() };
        let root = Rng::new(21);
        for i in 0..50 {
            let task = generate_task(&params, i, &root).unwrap();
            let expected = (alpha * horizon as f64).round() as usize;
            assert_eq!(task.text_routed.len(), expected, "alpha={alpha}");
            // Hints in the stream match the routed steps and the answers.
            let hints: Vec<(usize, usize)> =
                task.text.iter().filter_map(|s| parse_hint(s)).collect();
            assert_eq!(hints.len(), expected);
            for (t, a) in hints {
                assert!(task.text_routed.contains(&t));
                assert_eq!(task.answers[t], a);
            }
        }
    }
    let accs: Vec<f64> =
        alphas.iter().map(|&a| oracle_accuracy(a, 200, 31)).collect();
    for pair in accs.windows(2) {
        assert!(
            pair[1] > pair[0],
            "oracle accuracy not increasing with routing: {accs:?}"
        );
    }
}

#[test]
fn perception_block_encodes_every_answer_regardless_of_routing() {
    for alpha in [0.0, 0.5, 1.0] {
        let params = EnvParams { alpha, ..EnvParams::default() };
        let root = Rng::new(5);
        for i in 0..50 {
            let task = generate_task(&params, i, &root).unwrap();
            for (t, &y) in task.answers.iter().enumerate() {
                let code = action_code(y, params.action_count);
                assert_eq!(task.percept[2 * t], code[0], "task {i} step {t}");
                assert_eq!(task.percept[2 * t + 1], code[1]);
            }
        }
    }
}

#[test]
fn answers_are_uniform_over_actions() {
    // The environment must not leak the answer through a skewed marginal;
    // a large sample of answers stays within 4 sigma of uniform per action.
    let params = EnvParams::default();
    let root = Rng::new(77);
    let n_tasks = 2000u64;
    let mut counts = vec![0usize; params.action_count];
    for i in 0..n_tasks {
        let task = generate_task(&params, i, &root).unwrap();
        for &y in &task.answers {
            counts[y] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    let p = 1.0 / params.action_count as f64;
    let sigma = (p * (1.0 - p) * total as f64).sqrt();
    for (a, &c) in counts.iter().enumerate() {
        let expected = p * total as f64;
        assert!(
            (c as f64 - expected).abs() <= 4.0 * sigma,
            "action {a}: count {c} vs expected {expected}"
        );
    }
}

#[test]
fn task_generation_is_deterministic_per_id_and_independent_of_order() {
    let params = EnvParams::default();
    let root = Rng::new(123);
    let a = generate_task(&params, 42, &root).unwrap();
    // Generating other tasks in between must not disturb task 42.
    let _ = generate_task(&params, 1, &root).unwrap();
    let _ = generate_task(&params, 99, &root).unwrap();
    let b = generate_task(&params, 42, &root).unwrap();
    assert_eq!(a, b);

    let other_root = Rng::new(124);
    let c = generate_task(&params, 42, &other_root).unwrap();
    assert_ne!(a.answers, c.answers, "different roots should differ");
}
