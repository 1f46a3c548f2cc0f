use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::instance::{generate_taillard, initial_solution_fdd_mwkr};
use crate::nn::{grad_check, log_softmax, Adam, GradCheckOptions, Mode};
use crate::policy::{Action, PolicyConfig, PolicyNet};

#[test]
fn returns_examples() {
    assert_eq!(compute_returns(&[1, 0, 2]), vec![3, 2, 2]);
    assert_eq!(compute_returns(&[0, 0, 0, 0]), vec![0; 4]);
    assert_eq!(compute_returns(&[7]), vec![7]);
    assert!(compute_returns(&[]).is_empty());
}

fn record(seed: u64, reward: i64) -> StepRecord {
    let inst = generate_taillard(3, 3, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = env_reset_from(&inst, initial_solution_fdd_mwkr(&inst), &mut rng);
    while state.moves.len() < 2 {
        let _ = env_step(&inst, &mut state, Action::Move(0), &mut rng);
    }
    StepRecord {
        input: state.policy_input(),
        moves: state.moves.clone(),
        action: Action::Move(1),
        reward,
    }
}

fn find_record(reward: i64) -> StepRecord {
    (0..)
        .find_map(|seed| {
            let inst = generate_taillard(3, 3, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = env_reset(&inst, &mut rng);
            (s.moves.len() >= 2).then(|| record(seed, reward))
        })
        .unwrap()
}

#[test]
fn zero_returns_leave_parameters_unchanged() {
    let mut net = PolicyNet::new(PolicyConfig::small(2, 8), 0);
    let mut opt = Adam::new(net.params.len(), 1e-3);
    let before = net.params.clone();
    let windows = vec![vec![find_record(0), find_record(0)]];
    let norm = reinforce_update(&mut net, &mut opt, &windows, 0).unwrap();
    assert_eq!(norm, 0.0);
    assert_eq!(net.params, before);
    assert_eq!(opt.t, 0);
}

#[test]
fn single_transition_steps_along_log_prob_gradient() {
    let rec = find_record(1);
    let mut net = PolicyNet::new(PolicyConfig::small(2, 8), 1);
    let mut grad = net.params.zeros();
    window_gradient(&net, std::slice::from_ref(&rec), &mut grad);
    let Action::Move(k) = rec.action else {
        unreachable!()
    };
    let f = |p: &[f64]| {
        let fwd = net.forward_with(p, net.buffers.values(), Mode::Train, &rec.input);
        log_softmax(&net.logits(&fwd, &rec.moves.pairs))[k]
    };
    let report = grad_check(
        f,
        net.params.values(),
        &grad,
        None,
        GradCheckOptions::default(),
    );
    assert!(report.passes(1e-4), "{report:?}");

    let lr = 1e-3;
    let mut opt = Adam::new(net.params.len(), lr);
    let before = net.params.values().to_vec();
    reinforce_update(&mut net, &mut opt, &[vec![rec]], 0).unwrap();
    for ((a, b), g) in net.params.values().iter().zip(&before).zip(&grad) {
        if g.abs() > 1e-6 {
            assert!(((a - b) - lr * g.signum()).abs() < 1e-2 * lr, "{a} {b} {g}");
        }
    }
}

#[test]
fn identical_instances_average_to_single_gradient() {
    let rec = find_record(2);
    let run = |windows: Vec<Vec<StepRecord>>| {
        let mut net = PolicyNet::new(PolicyConfig::small(2, 8), 2);
        let mut opt = Adam::new(net.params.len(), 1e-3);
        let norm = reinforce_update(&mut net, &mut opt, &windows, 0).unwrap();
        (norm, net.params)
    };
    let (n1, p1) = run(vec![vec![rec.clone()]]);
    let (n2, p2) = run(vec![vec![rec.clone()], vec![rec]]);
    assert!(n1 > 0.0);
    assert!((n1 - n2).abs() < 1e-12 * n1);
    for (a, b) in p1.values().iter().zip(p2.values()) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn tiny_config(seed: u64) -> TrainConfig {
    TrainConfig {
        num_jobs: 4,
        num_machines: 3,
        batch_size: 3,
        step_limit: 12,
        window: 5,
        learning_rate: 1e-3,
        total_instances: 12,
        validation_size: 4,
        validation_every: 2,
        validation_steps: 8,
        seed,
        policy: PolicyConfig::small(2, 8),
    }
}

fn strip_wall(rows: &[LogRow]) -> Vec<(u64, f64, f64)> {
    rows.iter()
        .map(|r| {
            (
                r.instances_seen,
                r.mean_validation_makespan,
                r.mean_cumulative_reward,
            )
        })
        .collect()
}

#[test]
fn config_validation() {
    let mut cfg = tiny_config(0);
    assert!(cfg.validate().is_ok());
    cfg.window = cfg.step_limit + 1;
    assert!(cfg.validate().unwrap_err().contains("window"));
    let mut cfg = tiny_config(0);
    cfg.batch_size = 0;
    assert!(cfg.validate().is_err());
    let parsed: TrainConfig =
        serde_json::from_value(serde_json::json!({"num_jobs": 6, "window": 4})).unwrap();
    assert_eq!(parsed.num_jobs, 6);
    assert_eq!(parsed.batch_size, 64);
}

#[test]
fn training_is_deterministic_and_resumable() {
    let dir = std::env::temp_dir().join(format!("jssp-train-{}", std::process::id()));
    let (a, b, c) = (dir.join("a"), dir.join("b"), dir.join("c"));
    let cfg = tiny_config(5);
    let ra = train(&cfg, &a, false, |_| {}).unwrap();
    let rb = train(&cfg, &b, false, |_| {}).unwrap();
    assert_eq!(ra.rows.len(), 2);
    assert_eq!(strip_wall(&ra.rows), strip_wall(&rb.rows));
    assert_eq!(
        std::fs::read(ra.best_path).unwrap(),
        std::fs::read(rb.best_path).unwrap()
    );
    let best: Vec<f64> = ra
        .rows
        .iter()
        .scan(f64::INFINITY, |b, r| {
            *b = b.min(r.mean_validation_makespan);
            Some(*b)
        })
        .collect();
    assert!(best.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(ra.best_validation, Some(best[best.len() - 1]));

    // Interrupted run: half the instances, then resume with the full budget.
    let mut half = cfg.clone();
    half.total_instances = 6;
    train(&half, &c, false, |_| {}).unwrap();
    let rc = train(&cfg, &c, true, |_| {}).unwrap();
    assert_eq!(strip_wall(&rc.rows), strip_wall(&ra.rows));
    let log = std::fs::read_to_string(&rc.log_path).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.starts_with(
        "instances_seen,mean_validation_makespan,mean_cumulative_reward,wall_seconds\n"
    ));
    std::fs::remove_dir_all(&dir).unwrap();
}
