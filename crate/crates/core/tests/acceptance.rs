//! Acceptance suite: one pass/fail line per criterion, non-zero exit status
//! when any criterion fails.
//!
//! Run with `cargo test -p jssp-core --test acceptance`. Pass criterion
//! numbers as arguments (`-- 1 3 7`) to run a subset.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use jssp_core::eval::{backward_pass, forward_pass};
use jssp_core::exact::solve_exact;
use jssp_core::harness::{
    generate_instances, instance_files, instance_name, linear_fit, read_best_known, read_instance,
    run_method, scaling, Format, Method,
};
use jssp_core::nn::{grad_check, log_softmax, GradCheckOptions, Mode};
use jssp_core::policy::{Action, PolicyConfig, PolicyInput, PolicyNet};
use jssp_core::rl::{env_reset_from, train, TrainConfig};
use jssp_core::seed::derive_seed;
use jssp_core::{
    apply_move, batch_evaluate, build_graph, cpm_oracle, enumerate_moves, evaluate,
    extract_critical, generate_taillard, is_acyclic, parse_standard, parse_taillard,
    random_dispatch, rollout, serialize_standard, serialize_taillard, Driver, GraphView, Selection,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Desk-scale training configuration for criterion 6.
const DESK_CONFIG: &str = include_str!("../../../configs/desk.toml");

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Largest number of nodes on a SOURCE-to-SINK path.
fn longest_path_nodes(g: &GraphView) -> usize {
    let order = g.topological_order().expect("acyclic");
    let mut count = vec![0usize; g.num_nodes()];
    for v in order {
        count[v] = 1 + g
            .in_neighbors(v)
            .iter()
            .map(|&u| count[u])
            .max()
            .unwrap_or(0);
    }
    count[g.sink()]
}

fn random_pair(
    r: &mut ChaCha8Rng,
    max_jobs: usize,
    max_machines: usize,
) -> (jssp_core::Instance, jssp_core::Solution) {
    let jobs = r.gen_range(1..=max_jobs);
    let machines = r.gen_range(1..=max_machines);
    let inst = generate_taillard(jobs, machines, r.gen());
    let sol = random_dispatch(&inst, r);
    (inst, sol)
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut r = rng(1);
    let cases = 1000;
    let mut worst_ratio: f64 = 0.0;
    for case in 0..cases {
        let (inst, sol) = random_pair(&mut r, 20, 15);
        let g = build_graph(&inst, &sol);
        let oracle = cpm_oracle(&g).expect("random dispatch is acyclic");
        let fwd = forward_pass(&g).expect("acyclic");
        let bwd = backward_pass(&g, fwd.makespan).expect("acyclic");
        if fwd.est != oracle.est || bwd.lst != oracle.lst || fwd.makespan != oracle.makespan {
            return verdict(
                false,
                format!(
                    "case {case} ({}x{}): message passing differs from CPM",
                    inst.num_jobs(),
                    inst.num_machines()
                ),
            );
        }
        let h = longest_path_nodes(&g);
        if fwd.passes > h || bwd.passes > h {
            return verdict(
                false,
                format!(
                    "case {case}: {} forward / {} backward passes exceed H = {h}",
                    fwd.passes, bwd.passes
                ),
            );
        }
        worst_ratio = worst_ratio.max(fwd.passes.max(bwd.passes) as f64 / h as f64);
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        secs < 60.0,
        format!("{cases} pairs up to 20x15 match CPM exactly, max passes/H = {worst_ratio:.3}, {secs:.1}s"),
    )
}

fn criterion_2() -> Verdict {
    let mut r = rng(2);
    for size in [1, 32, 64] {
        for round in 0..3 {
            let graphs: Vec<GraphView> = (0..size)
                .map(|_| {
                    let (inst, sol) = random_pair(&mut r, 15, 10);
                    build_graph(&inst, &sol)
                })
                .collect();
            let batched = batch_evaluate(&graphs).expect("acyclic");
            for (i, g) in graphs.iter().enumerate() {
                if batched[i] != evaluate(g).expect("acyclic") {
                    return verdict(
                        false,
                        format!("batch of {size}, round {round}: element {i} differs"),
                    );
                }
            }
        }
    }
    verdict(
        true,
        "batches of 1/32/64 (3 rounds each) equal sequential evaluation".into(),
    )
}

fn criterion_3() -> Verdict {
    let mut r = rng(3);
    let target = 10_000;
    let (mut states, mut applied, mut single_block) = (0usize, 0usize, 0usize);
    while states < target {
        let (inst, mut sol) = random_pair(&mut r, 8, 6);
        let walk = r.gen_range(0..20);
        for _ in 0..=walk {
            let g = build_graph(&inst, &sol);
            let sched = evaluate(&g).expect("acyclic");
            let cb = extract_critical(&g, &sched, &mut r);
            let ms = enumerate_moves(&cb);
            states += 1;
            let blocks = cb.blocks.len();
            if blocks >= 2 && ms.len() > 2 * blocks - 2 {
                return verdict(false, format!("{} moves for {blocks} blocks", ms.len()));
            }
            if blocks == 1 {
                single_block += 1;
                if !ms.is_empty() {
                    return verdict(false, "single-block state has moves".into());
                }
            }
            for &mv in &ms.moves {
                let next = apply_move(&sol, mv).expect("N5 moves swap adjacent operations");
                if !is_acyclic(&build_graph(&inst, &next)) {
                    return verdict(false, format!("move {mv:?} created a cycle"));
                }
                applied += 1;
            }
            if ms.is_empty() {
                break;
            }
            sol = apply_move(&sol, ms.moves[r.gen_range(0..ms.len())]).expect("valid move");
        }
    }
    verdict(
        single_block > 0,
        format!("{states} states, {applied} applied moves acyclic, {single_block} single-block states absorbing"),
    )
}

fn reward_identity(drivers: &[(&str, Driver)]) -> Verdict {
    let mut r = rng(4);
    let mut checked = 0usize;
    for (name, driver) in drivers {
        for k in 0..12 {
            let (jobs, machines) = [(3, 3), (6, 6), (10, 5), (10, 10)][k % 4];
            let inst = generate_taillard(jobs, machines, r.gen());
            let ro = rollout(&inst, *driver, 200, &mut r);
            let mut total = 0;
            for (t, (&reward, &inc)) in ro.rewards.iter().zip(&ro.incumbents).enumerate() {
                total += reward;
                if total != ro.initial_makespan - inc {
                    return verdict(
                        false,
                        format!(
                            "{name} rollout {k}, step {t}: sum of rewards {total} != {} - {inc}",
                            ro.initial_makespan
                        ),
                    );
                }
                checked += 1;
            }
        }
    }
    let names: Vec<&str> = drivers.iter().map(|d| d.0).collect();
    verdict(
        true,
        format!("{checked} steps exact for drivers [{}]", names.join(", ")),
    )
}

fn criterion_5() -> Verdict {
    let draws = 20;
    let mut worst: f64 = 0.0;
    let mut r = rng(5);
    for draw in 0..draws {
        // A 3x3 state with at least one move, from a random dispatch order.
        let state = (0..)
            .map(|attempt| {
                let inst = generate_taillard(3, 3, derive_seed(5, &[draw, attempt]));
                env_reset_from(&inst, random_dispatch(&inst, &mut r), &mut r)
            })
            .find(|s| !s.moves.is_empty())
            .expect("unbounded search");
        let net = PolicyNet::new(PolicyConfig::small(2, 8), derive_seed(55, &[draw]));
        let input: PolicyInput = state.policy_input();
        let k = r.gen_range(0..state.moves.len());
        let fwd = net.forward(Mode::Train, &input);
        let mut grads = net.params.zeros();
        net.log_prob_grad(
            net.params.values(),
            &input,
            &fwd,
            &state.moves,
            Action::Move(k),
            1.0,
            &mut grads,
        );
        let f = |p: &[f64]| {
            let fwd = net.forward_with(p, net.buffers.values(), Mode::Train, &input);
            log_softmax(&net.logits(&fwd, &state.moves.pairs))[k]
        };
        let report = grad_check(
            f,
            net.params.values(),
            &grads,
            None,
            GradCheckOptions::default(),
        );
        if !report.passes(1e-4) {
            return verdict(
                false,
                format!(
                    "draw {draw}: relative error {:.2e} at parameter {:?}",
                    report.max_rel_error, report.worst_index
                ),
            );
        }
        worst = worst.max(report.max_rel_error);
    }
    verdict(
        true,
        format!(
            "{draws} draws on 3x3 with p=8, K=2, all parameters, max relative error {worst:.2e}"
        ),
    )
}

/// Trains the desk configuration and returns the verdict with the trained
/// policy.
fn criterion_6() -> (Verdict, Option<PolicyNet>) {
    let cfg: TrainConfig = match toml::from_str(DESK_CONFIG) {
        Ok(c) => c,
        Err(e) => return (verdict(false, format!("desk config: {e}")), None),
    };
    let dir = tempfile::tempdir().expect("temp dir");
    let start = Instant::now();
    let outcome = match train(&cfg, dir.path(), false, |row| {
        eprintln!(
            "  [6] instances {:>5}  validation {:>8.2}  {:>7.1}s",
            row.instances_seen, row.mean_validation_makespan, row.wall_seconds
        )
    }) {
        Ok(o) => o,
        Err(e) => return (verdict(false, format!("training failed: {e}")), None),
    };
    let train_secs = start.elapsed().as_secs_f64();
    let net = PolicyNet::load(&outcome.best_path).expect("trained checkpoint loads");

    let held_out: Vec<_> = (0..50)
        .map(|i| generate_taillard(10, 10, derive_seed(0x6e1d0_u64, &[i])))
        .collect();
    let (mut initial, mut learned, mut random) = (0.0, 0.0, 0.0);
    for (i, inst) in held_out.iter().enumerate() {
        let seed = derive_seed(66, &[i as u64]);
        let run = run_method(inst, Method::Policy, 500, seed, Some(&net)).expect("policy given");
        let rnd = run_method(inst, Method::Random, 500, seed, None).expect("no policy needed");
        initial += run.initial_makespan as f64;
        learned += run.incumbent as f64;
        random += rnd.incumbent as f64;
    }
    let n = held_out.len() as f64;
    let (initial, learned, random) = (initial / n, learned / n, random / n);
    let improvement = 1.0 - learned / initial;
    let secs = start.elapsed().as_secs_f64();
    let pass = improvement >= 0.03 && learned < random && secs <= 7200.0;
    let detail = format!(
        "p={}, lr={:e}: mean initial {initial:.2}, learned {learned:.2} ({:.2}% better), random {random:.2}; train {train_secs:.0}s, total {secs:.0}s",
        cfg.policy.embed_dim,
        cfg.learning_rate,
        improvement * 100.0
    );
    (verdict(pass, detail), Some(net))
}

fn criterion_7() -> Verdict {
    let dir = data_dir();
    let inst = read_instance(&dir.join("instances/standard/ft06.txt"), Format::Standard)
        .expect("shipped FT06");
    let table = read_best_known(&dir.join("best_known.csv")).expect("shipped best-known table");
    let best = table["ft06"];
    let proven = solve_exact(&inst, 10_000_000).map(|r| r.makespan);
    if proven != Some(best) {
        return verdict(
            false,
            format!("best-known table says {best}, exact oracle gives {proven:?}"),
        );
    }
    let seeds = 0..10u64;
    let runs = |m: Method| -> Vec<i64> {
        seeds
            .clone()
            .map(|s| {
                run_method(&inst, m, 500, s, None)
                    .expect("no policy needed")
                    .incumbent
            })
            .collect()
    };
    let gap = |v: i64| (v - best) as f64 / best as f64;
    let fi = runs(Method::Fi);
    let bi = runs(Method::Bi);
    let gd = runs(Method::Gd);
    let reached = |v: &[i64]| v.iter().filter(|&&x| x == best).count();
    let gd_mean_gap = gd.iter().map(|&x| gap(x)).sum::<f64>() / gd.len() as f64;
    let pass = reached(&fi) > 0 && reached(&bi) > 0 && gd_mean_gap <= 0.05;
    verdict(
        pass,
        format!(
            "best {best} (proven); FI-500 hits 0.0% in {}/10 seeds {fi:?}; BI-500 in {}/10 {bi:?}; GD-500 mean gap {:.2}% {gd:?}",
            reached(&fi),
            reached(&bi),
            gd_mean_gap * 100.0
        ),
    )
}

fn criterion_8() -> Verdict {
    let mut cfg = PolicyConfig::default();
    if let Ok(desk) = toml::from_str::<TrainConfig>(DESK_CONFIG) {
        cfg = desk.policy;
    }
    let net = PolicyNet::new(cfg, 8);
    let fit = |sizes: &[(usize, usize)], x: fn(&(usize, usize)) -> usize| {
        // One short warm-up so the first timed size does not pay for page faults.
        scaling(&net, &sizes[..1], 1, 20, 0);
        let rows = scaling(&net, sizes, 5, 500, 8);
        let xs: Vec<f64> = sizes.iter().map(|s| x(s) as f64).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.mean_wall_ms).collect();
        (linear_fit(&xs, &ys), ys)
    };
    let jobs: Vec<(usize, usize)> = [10, 20, 30, 40, 50, 60].iter().map(|&j| (j, 10)).collect();
    let machines: Vec<(usize, usize)> = [5, 10, 15, 20, 25, 30].iter().map(|&m| (40, m)).collect();
    let (fj, yj) = fit(&jobs, |s| s.0);
    let (fm, ym) = fit(&machines, |s| s.1);
    let ms = |v: &[f64]| {
        v.iter()
            .map(|y| format!("{:.0}", y))
            .collect::<Vec<_>>()
            .join("/")
    };
    verdict(
        fj.r_squared >= 0.95 && fm.r_squared >= 0.95,
        format!(
            "J sweep (M=10) R^2 = {:.4} [{} ms]; M sweep (J=40) R^2 = {:.4} [{} ms]",
            fj.r_squared,
            ms(&yj),
            fm.r_squared,
            ms(&ym)
        ),
    )
}

fn criterion_9() -> Verdict {
    let inst = generate_taillard(6, 5, 9);
    let net = PolicyNet::new(PolicyConfig::small(2, 8), 9);
    for m in Method::ALL {
        let a = run_method(&inst, m, 60, 21, Some(&net)).expect("policy given");
        let b = run_method(&inst, m, 60, 21, Some(&net)).expect("policy given");
        if (a.initial_makespan, a.incumbent, &a.solution)
            != (b.initial_makespan, b.incumbent, &b.solution)
        {
            return verdict(false, format!("{m}: repeated solve differs"));
        }
    }

    let cfg: TrainConfig = toml::from_str(
        "num_jobs = 4\nnum_machines = 3\nbatch_size = 3\nstep_limit = 8\nwindow = 3\nlearning_rate = 1e-3\n\
         total_instances = 6\nvalidation_size = 3\nvalidation_every = 1\nvalidation_steps = 5\nseed = 9\n\
         [policy]\nlayers = 1\nembed_dim = 6\ntpm_hidden = 6\nhead_hidden = 6\nscore_dim = 6\nhead_hidden_layers = 1\n",
    )
    .expect("inline config");
    let strip_wall = |path: &Path| -> Vec<String> {
        std::fs::read_to_string(path)
            .expect("log written")
            .lines()
            .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
            .collect()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ta = train(&cfg, a.path(), false, |_| {}).expect("tiny training");
    let tb = train(&cfg, b.path(), false, |_| {}).expect("tiny training");
    if strip_wall(&ta.log_path) != strip_wall(&tb.log_path) {
        return verdict(false, "training logs differ".into());
    }
    let (na, nb) = (
        PolicyNet::load(&ta.last_path).unwrap(),
        PolicyNet::load(&tb.last_path).unwrap(),
    );
    if na.params.values() != nb.params.values() || na.buffers.values() != nb.buffers.values() {
        return verdict(false, "trained parameters differ".into());
    }

    let (ga, gb) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let fa = generate_instances(8, 5, 4, 99, ga.path(), Format::Standard).unwrap();
    let fb = generate_instances(8, 5, 4, 99, gb.path(), Format::Standard).unwrap();
    for (x, y) in fa.iter().zip(&fb) {
        if x.file_name() != y.file_name() || std::fs::read(x).unwrap() != std::fs::read(y).unwrap()
        {
            return verdict(false, format!("generated {} differs", x.display()));
        }
    }
    verdict(
        true,
        format!(
            "solve ({} methods), training log and checkpoint, {} generated files identical",
            Method::ALL.len(),
            fa.len()
        ),
    )
}

fn criterion_10() -> Verdict {
    let dir = data_dir().join("instances");
    let std_files = instance_files(&dir.join("standard")).expect("standard dir");
    let tai_files = instance_files(&dir.join("taillard")).expect("taillard dir");
    let names = |files: &[PathBuf]| {
        files
            .iter()
            .map(|p| instance_name(p))
            .collect::<BTreeSet<_>>()
    };
    if std_files.is_empty() || names(&std_files) != names(&tai_files) {
        return verdict(
            false,
            "standard and taillard directories hold different instance sets".into(),
        );
    }
    for (s, t) in std_files.iter().zip(&tai_files) {
        let name = instance_name(s);
        let std_text = std::fs::read_to_string(s).unwrap();
        let tai_text = std::fs::read_to_string(t).unwrap();
        let (a, b) = match (parse_standard(&std_text), parse_taillard(&tai_text)) {
            (Ok(a), Ok(b)) => (a, b),
            (a, b) => {
                return verdict(
                    false,
                    format!("{name}: parse failure {:?} / {:?}", a.err(), b.err()),
                )
            }
        };
        if a != b {
            return verdict(
                false,
                format!("{name}: standard and taillard parses differ"),
            );
        }
        if serialize_standard(&a) != std_text {
            return verdict(false, format!("{name}: serialize(parse(text)) != text"));
        }
        if parse_standard(&serialize_standard(&a)).as_ref() != Ok(&a)
            || parse_taillard(&serialize_taillard(&a)).as_ref() != Ok(&a)
        {
            return verdict(
                false,
                format!("{name}: parse(serialize(instance)) != instance"),
            );
        }
    }
    verdict(
        true,
        format!(
            "{} shipped instances cross-parse equal and round-trip",
            std_files.len()
        ),
    )
}

fn main() {
    let selected: BTreeSet<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let wanted = |k: u32| selected.is_empty() || selected.contains(&k);
    let mut verdicts: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut run = |k: u32, title: &'static str, f: &mut dyn FnMut() -> Verdict| {
        if wanted(k) {
            eprintln!("running criterion {k}: {title}");
            verdicts.push((k, title, f()));
        }
    };
    run(1, "evaluator equals CPM", &mut criterion_1);
    run(2, "batch evaluation equals sequential", &mut criterion_2);
    run(3, "N5 invariants", &mut criterion_3);
    // Timed before training so the measurement runs on a fresh heap.
    run(8, "linear rollout time", &mut criterion_8);
    let mut learned = None;
    run(6, "learning signal at desk scale", &mut || {
        let (v, net) = criterion_6();
        learned = net;
        v
    });
    run(4, "reward identity", &mut || {
        let untrained = PolicyNet::new(PolicyConfig::small(2, 16), 4);
        let mut drivers = vec![
            ("random", Driver::Random),
            (
                "untrained policy",
                Driver::Policy {
                    net: &untrained,
                    selection: Selection::Sample,
                },
            ),
        ];
        if let Some(net) = learned.as_ref() {
            drivers.push((
                "learned policy",
                Driver::Policy {
                    net,
                    selection: Selection::Sample,
                },
            ));
            drivers.push((
                "learned policy, greedy",
                Driver::Policy {
                    net,
                    selection: Selection::Greedy,
                },
            ));
        }
        reward_identity(&drivers)
    });
    run(
        5,
        "policy gradient matches finite differences",
        &mut criterion_5,
    );
    run(7, "baseline anchors on FT06", &mut criterion_7);
    run(9, "determinism", &mut criterion_9);
    run(10, "parser round trips", &mut criterion_10);

    verdicts.sort_by_key(|v| v.0);
    let mut failed = 0;
    for (k, title, v) in &verdicts {
        println!(
            "criterion {k:>2} {}  {title}: {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        failed += usize::from(!v.pass);
    }
    println!(
        "{} of {} criteria passed",
        verdicts.len() - failed,
        verdicts.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
