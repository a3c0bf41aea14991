//! Acceptance suite. Each case checks one numbered criterion and prints a
//! single PASS/FAIL line with the measured quantities and runtime.
//!
//! Runs under its own `main` (harness = false) so those lines always reach
//! the console instead of being captured on success. Supports libtest-style
//! positional substring filters plus `--skip`, e.g.
//! `cargo test -p rbfq-cli --test acceptance -- --skip criterion_6`.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::Rng as _;

use rbfq::agent::{batch_gradient, net_input};
use rbfq::envs::{Env, GripDrawer, LidAttractor, LID_TIP};
use rbfq::her::{is_success, relabel, EpisodeTrajectory, GoalMapping, HERStrategy};
use rbfq::nn::Activation;
use rbfq::rbf::{Norm, RBFQNet};
use rbfq::replay::{PERConfig, Priority, ReplayBuffer, SumTree, Transition};
use rbfq::rng::{stream, Rng, Stream};

use rbfq_cli::config::{EpsilonDecay, RunConfig};
use rbfq_cli::harness::{run_ablation, run_training};

fn report(n: u32, title: &str, ok: bool, detail: &str, elapsed: Duration, budget: Duration) {
    let within = elapsed <= budget;
    println!(
        "ACCEPTANCE {n} {title}: {} ({detail}; {:.1}s of {:.0}s budget)",
        if ok && within { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs_f64()
    );
    assert!(ok, "criterion {n} failed: {detail}");
    assert!(
        within,
        "criterion {n} exceeded its runtime budget: {:.1}s > {:.0}s",
        elapsed.as_secs_f64(),
        budget.as_secs_f64()
    );
}

fn seeded_net(seed: u64, state_dim: usize, action_dim: usize, n: usize, beta: f64, norm: Norm) -> RBFQNet {
    RBFQNet::new(
        state_dim,
        &vec![-1.0; action_dim],
        &vec![1.0; action_dim],
        n,
        beta,
        norm,
        &[6],
        Activation::Tanh,
        &mut stream(seed, Stream::Init),
    )
    .unwrap()
}

fn rand_vec(rng: &mut Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn criterion_1_mixture_oracle_equivalence() {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    for i in 0..1000u64 {
        let norm = if i % 2 == 0 { Norm::L2 } else { Norm::L1 };
        let n = 1 + (i % 8) as usize;
        let beta = 0.5 + (i % 10) as f64 * 0.7;
        let net = seeded_net(i, 3, 2, n, beta, norm);
        let mut rng = stream(i, Stream::Eval);
        let s = rand_vec(&mut rng, 3, -1.0, 1.0);
        let a = rand_vec(&mut rng, 2, -1.0, 1.0);
        let q = net.q_value(&s, &a).unwrap();

        // Direct softmax-weighted evaluation from the head outputs, nothing
        // shared with the library's mixture code.
        let (locs, vals) = net.centroids(&s).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for (loc, v) in locs.iter().zip(&vals) {
            let d = match norm {
                Norm::L2 => loc
                    .iter()
                    .zip(&a)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt(),
                Norm::L1 => loc.iter().zip(&a).map(|(x, y)| (x - y).abs()).sum(),
            };
            let w = (-beta * d).exp();
            num += w * v;
            den += w;
        }
        worst = worst.max((q - num / den).abs());
    }
    report(
        1,
        "mixture oracle equivalence",
        worst <= 1e-10,
        &format!("max |q - oracle| = {worst:.2e} over 1000 triples, bound 1e-10"),
        t0.elapsed(),
        Duration::from_secs(10),
    );
}

fn criterion_2_gradient_fidelity() {
    let t0 = Instant::now();
    let gamma = 0.99;
    let mut worst = 0.0f64;
    for case in 0..100u64 {
        let net = seeded_net(2000 + case, 4, 2, 4, 3.0, Norm::L2);
        let target = seeded_net(3000 + case, 4, 2, 4, 3.0, Norm::L2);
        let mut rng = stream(case, Stream::Explore);
        let t = Transition {
            state: rand_vec(&mut rng, 2, -1.0, 1.0),
            action: rand_vec(&mut rng, 2, -0.9, 0.9),
            reward: rng.gen_range(0.0..1.0),
            next_state: rand_vec(&mut rng, 2, -1.0, 1.0),
            goal: rand_vec(&mut rng, 2, -1.0, 1.0),
            done: case % 5 == 0,
        };
        let batch = [t];
        let w = [1.0];
        let bg = batch_gradient(&net, &target, &batch, &w, gamma).unwrap();
        let step = 1e-6;
        for (grad, loc_head) in [(&bg.loc_grad, true), (&bg.val_grad, false)] {
            for k in 0..grad.len() {
                let mut plus = net.clone();
                let mut minus = net.clone();
                if loc_head {
                    plus.loc_params.values_mut()[k] += step;
                    minus.loc_params.values_mut()[k] -= step;
                } else {
                    plus.val_params.values_mut()[k] += step;
                    minus.val_params.values_mut()[k] -= step;
                }
                let lp = batch_gradient(&plus, &target, &batch, &w, gamma).unwrap().loss;
                let lm = batch_gradient(&minus, &target, &batch, &w, gamma).unwrap().loss;
                let fd = (lp - lm) / (2.0 * step);
                let g = grad.values[k];
                // Components below 1e-4 sit at the central-difference noise
                // floor (eps/h ~ 1e-10), where the quotient measures the
                // oracle, not the gradient; floor the denominator there.
                let scale = g.abs().max(fd.abs()).max(1e-4);
                worst = worst.max((g - fd).abs() / scale);
            }
        }
    }
    report(
        2,
        "end-to-end gradient fidelity",
        worst < 1e-4,
        &format!("max relative error {worst:.2e} over 100 single-transition cases, bound 1e-4"),
        t0.elapsed(),
        Duration::from_secs(60),
    );
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn criterion_3_centroid_search_gap() {
    let t0 = Instant::now();
    let mut gaps_lo = Vec::new();
    let mut gaps_hi = Vec::new();
    let mut normalized_hi = Vec::new();
    for i in 0..100u64 {
        let base = seeded_net(4000 + i, 3, 1, 8, 1.0, Norm::L2);
        let mut rng = stream(4000 + i, Stream::Eval);
        let s = rand_vec(&mut rng, 3, -1.0, 1.0);
        for beta in [1.0, 10.0] {
            let mut net = base.clone();
            net.beta = beta;
            let (_, centroid_max) = net.greedy_action(&s).unwrap();
            let mut grid_max = f64::NEG_INFINITY;
            for gi in 0..=2000 {
                let a = -1.0 + gi as f64 * 1e-3;
                grid_max = grid_max.max(net.q_value(&s, &[a]).unwrap());
            }
            let gap = (grid_max - centroid_max).max(0.0);
            if beta == 1.0 {
                gaps_lo.push(gap);
            } else {
                gaps_hi.push(gap);
                let (_, vals) = net.centroids(&s).unwrap();
                let range = vals.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
                    - vals.iter().fold(f64::INFINITY, |m, &v| m.min(v));
                normalized_hi.push(if range > 0.0 { gap / range } else { 0.0 });
            }
        }
    }
    let med_lo = median(&mut gaps_lo);
    let med_hi = median(&mut gaps_hi);
    let med_norm_hi = median(&mut normalized_hi);
    report(
        3,
        "centroid search tightens with beta",
        med_hi <= med_lo && med_norm_hi <= 0.05,
        &format!(
            "median gap beta=10: {med_hi:.2e} <= beta=1: {med_lo:.2e}; \
             median gap/value-range at beta=10: {med_norm_hi:.4} <= 0.05"
        ),
        t0.elapsed(),
        Duration::from_secs(60),
    );
}

fn criterion_4_per_sampling_and_sum_tree() {
    let t0 = Instant::now();
    let mut worst_tv = 0.0f64;
    for (combo, &len) in [3usize, 37, 128].iter().enumerate() {
        for (ai, &alpha) in [0.0, 0.5, 1.0].iter().enumerate() {
            let cfg = PERConfig {
                alpha,
                ..PERConfig::default()
            };
            let mut buffer = ReplayBuffer::new(len, 1, 1, 1, cfg).unwrap();
            let mut rng = stream((combo * 3 + ai) as u64, Stream::Replay);
            let mut priorities = Vec::with_capacity(len);
            for _ in 0..len {
                let p = rng.gen_range(0.1..2.0);
                priorities.push(p);
                let t = Transition {
                    state: vec![0.0],
                    action: vec![0.0],
                    reward: 0.0,
                    next_state: vec![0.0],
                    goal: vec![0.0],
                    done: false,
                };
                buffer.push(t, Priority::Value(p)).unwrap();
            }
            let total: f64 = priorities.iter().map(|p| p.powf(alpha)).sum();
            let exact: Vec<f64> = priorities.iter().map(|p| p.powf(alpha) / total).collect();

            let draws = 100_000usize;
            let mut counts = vec![0u64; len];
            for _ in 0..draws / 1000 {
                let (_, ids, _) = buffer.sample_prioritized(1000, 0, &mut rng).unwrap();
                for id in ids {
                    counts[id as usize] += 1;
                }
            }
            let tv: f64 = exact
                .iter()
                .zip(&counts)
                .map(|(p, &c)| (p - c as f64 / draws as f64).abs())
                .sum::<f64>()
                / 2.0;
            worst_tv = worst_tv.max(tv);
        }
    }

    let mut tree = SumTree::new(1000);
    let mut rng = stream(77, Stream::Replay);
    for _ in 0..100_000 {
        let i = rng.gen_range(0..1000);
        tree.set(i, rng.gen_range(0.0..10.0));
    }
    let err = tree.consistency_error();
    report(
        4,
        "prioritized sampling fidelity and sum-tree consistency",
        worst_tv <= 0.01 && err <= 1e-9,
        &format!(
            "worst TV {worst_tv:.4} <= 0.01 over lengths {{3,37,128}} x alpha {{0,0.5,1}}; \
             node error {err:.2e} <= 1e-9 after 1e5 ops"
        ),
        t0.elapsed(),
        Duration::from_secs(30),
    );
}

fn fuzz_trajectory(rng: &mut Rng, t_len: usize) -> EpisodeTrajectory {
    let goal = rand_vec(rng, 2, -1.0, 1.0);
    let mut state = rand_vec(rng, 3, -1.0, 1.0);
    let mut ts = Vec::with_capacity(t_len);
    for _ in 0..t_len {
        let mut next = state.clone();
        for v in next.iter_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
        ts.push(Transition {
            state: state.clone(),
            action: rand_vec(rng, 1, -1.0, 1.0),
            reward: 0.0,
            next_state: next.clone(),
            goal: goal.clone(),
            done: false,
        });
        state = next;
    }
    EpisodeTrajectory::new(ts).unwrap()
}

fn criterion_5_her_accounting() {
    let t0 = Instant::now();
    let gm = GoalMapping::slice(0, 2, 1e-2);
    let mut rng = stream(55, Stream::Her);
    let mut checked = 0usize;
    let mut ok = true;
    for _ in 0..200 {
        let t_len = rng.gen_range(1..=40);
        let traj = fuzz_trajectory(&mut rng, t_len);
        for (strat, factor) in [
            (HERStrategy::Final, 1),
            (HERStrategy::Future { k: 4 }, 4),
            (HERStrategy::FinalAndFuture { k: 4 }, 5),
        ] {
            let out = relabel(&traj, strat, &gm, &mut rng).unwrap();
            ok &= out.len() == factor * t_len;
            for rt in &out {
                let hit = is_success(&rt.next_state, &rt.goal, &gm).unwrap();
                ok &= rt.reward == if hit { 1.0 } else { 0.0 };
                ok &= rt.done == hit;
                checked += 1;
            }
        }
    }

    // Boundary inclusivity: a hindsight goal exactly 1e-2 away counts.
    let boundary = EpisodeTrajectory::new(vec![
        Transition {
            state: vec![5.0, 5.0, 0.0],
            action: vec![0.0],
            reward: 0.0,
            next_state: vec![0.0, 0.0, 0.0],
            goal: vec![9.0, 9.0],
            done: false,
        },
        Transition {
            state: vec![0.0, 0.0, 0.0],
            action: vec![0.0],
            reward: 0.0,
            next_state: vec![0.01, 0.0, 0.0],
            goal: vec![9.0, 9.0],
            done: false,
        },
    ])
    .unwrap();
    let out = relabel(&boundary, HERStrategy::Final, &gm, &mut rng).unwrap();
    ok &= out[0].goal == vec![0.01, 0.0] && out[0].reward == 1.0 && out[0].done;
    ok &= out[1].reward == 1.0;

    report(
        5,
        "her count law and reward recomputation",
        ok,
        &format!("count law exact for T/4T/5T on 200 trajectories, {checked} relabels verified, boundary at 1e-2 inclusive"),
        t0.elapsed(),
        Duration::from_secs(10),
    );
}

fn learning_cfg(variant: &str, seed: u64, dir: &std::path::Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.set("variant", variant).unwrap();
    cfg.seed = seed;
    cfg.episodes = 300;
    cfg.gamma = 0.9;
    cfg.epsilon_end = 0.02;
    cfg.epsilon_decay_episodes = EpsilonDecay::Auto;
    cfg.updates_per_episode = 40;
    cfg.target_sync_every = 250;
    cfg.hidden = vec![64, 64];
    cfg.n_centroids = 16;
    cfg.batch_size = 64;
    cfg.checkpoint_every = 0;
    cfg.eval_episodes = 20;
    cfg.output_dir = dir.to_string_lossy().into_owned();
    cfg
}

fn first_episode_at_threshold(records: &[rbfq_cli::harness::RunRecord]) -> Option<usize> {
    records
        .iter()
        .find(|r| r.rolling_success >= 0.9)
        .map(|r| r.episode)
}

fn criterion_6_learning_reproduction() {
    let t0 = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let mut her_hits = Vec::new();
    let mut van_hits = Vec::new();
    for seed in 0..3u64 {
        let cfg = learning_cfg("her", seed, &tmp.path().join(format!("her_s{seed}")));
        let out = run_training(&cfg).unwrap();
        her_hits.push(first_episode_at_threshold(&out.records));
        let cfg = learning_cfg("vanilla", seed, &tmp.path().join(format!("van_s{seed}")));
        let out = run_training(&cfg).unwrap();
        van_hits.push(first_episode_at_threshold(&out.records));
    }
    let her_reached = her_hits.iter().filter(|h| h.is_some()).count();
    let her_best = her_hits.iter().flatten().min().copied().unwrap_or(usize::MAX);
    let van_best = van_hits.iter().flatten().min().copied().unwrap_or(usize::MAX);
    let fmt = |hits: &[Option<usize>]| {
        hits.iter()
            .map(|h| h.map_or("never".to_string(), |e| e.to_string()))
            .collect::<Vec<_>>()
            .join("/")
    };
    report(
        6,
        "learning reproduction on point_reach_2d",
        her_reached >= 2 && van_best > her_best,
        &format!(
            "her rolling>=0.9 at episodes {} ({her_reached}/3 within 300); vanilla at {}",
            fmt(&her_hits),
            fmt(&van_hits)
        ),
        t0.elapsed(),
        Duration::from_secs(1200),
    );
}

fn criterion_7_dynamics_taxonomy() {
    let t0 = Instant::now();

    // (a) zero-action rollouts from inside the attractor basin succeed.
    let mut basin_ok = true;
    for i in 0..10 {
        let theta0 = 0.03 + (LID_TIP - 0.06) * i as f64 / 9.0;
        let mut env = LidAttractor::new();
        env.reset_at(theta0);
        let success;
        loop {
            let out = env.step(&[0.0]).unwrap();
            if out.done {
                success = out.success;
                break;
            }
        }
        basin_ok &= success;
    }

    // (b) extension frozen after grip release in every fuzzed step.
    let mut frozen_ok = true;
    let mut post_release_steps = 0usize;
    let mut rng = stream(7, Stream::Env);
    for _ in 0..100 {
        let mut env = GripDrawer::new();
        env.reset(&mut rng);
        // Pull a little, then force the release. Random pulls can finish
        // the episode outright; those trajectories have nothing to freeze.
        let mut finished = false;
        for _ in 0..rng.gen_range(1..20) {
            let out = env.step(&[rng.gen_range(-1.0..1.0), -1.0]).unwrap();
            if out.done {
                finished = true;
                break;
            }
        }
        if finished {
            continue;
        }
        let out = env.step(&[0.3, 1.0]).unwrap();
        if out.done {
            continue;
        }
        let frozen_ext = out.next_state[0];
        loop {
            let out = env
                .step(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
                .unwrap();
            frozen_ok &= out.next_state[0] == frozen_ext && out.next_state[1] == 0.0;
            post_release_steps += 1;
            if out.done {
                break;
            }
        }
    }

    // Ablation report on both tasks, archived under target/acceptance.
    let archive = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../target/acceptance");
    let mut findings = String::new();
    for task in ["lid_attractor", "grip_drawer"] {
        let mut base = learning_cfg("vanilla", 0, &archive.join(format!("ablation_{task}")));
        base.task_id = task.to_string();
        base.episodes = 80;
        let rep = run_ablation(&base, &[0, 1]).unwrap();
        assert!(rep.out_dir.join("summary.csv").exists());
        assert!(rep.out_dir.join("ranking.txt").exists());
        findings.push_str(&format!("{task}: "));
        for (variant, hit) in &rep.ranking {
            findings.push_str(&format!(
                "{}={} ",
                variant.name(),
                hit.map_or("never".to_string(), |e| format!("ep{e}"))
            ));
        }
    }
    println!("taxonomy ablation (directional, not asserted): {findings}");
    println!("taxonomy ablation archived at {}", archive.display());

    report(
        7,
        "dynamics taxonomy",
        basin_ok && frozen_ok,
        &format!(
            "attractor basin: 10/10 zero-action successes; \
             drawer frozen in {post_release_steps}/{post_release_steps} post-release steps; \
             ablation reports archived"
        ),
        t0.elapsed(),
        Duration::from_secs(1800),
    );
}

fn criterion_8_determinism_and_gradcheck() {
    let t0 = Instant::now();
    let bin = env!("CARGO_BIN_EXE_rbfq");
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    for d in [&d1, &d2] {
        let out = std::process::Command::new(bin)
            .env_remove("RBFQ_SEED")
            .args(["train", "--task", "point_reach_2d", "--variant", "her_per"])
            .args(["--seed", "3", "--episodes", "10"])
            .args(["--hidden", "16", "--n-centroids", "8", "--batch-size", "16"])
            .args(["--updates-per-episode", "2", "--eval-episodes", "2"])
            .args(["--checkpoint-every", "0"])
            .args(["--output-dir", d.path().to_str().unwrap()])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(d1.path().join("run.csv")).unwrap();
    let b = std::fs::read(d2.path().join("run.csv")).unwrap();
    let identical = a == b;

    let grad = std::process::Command::new(bin)
        .arg("gradcheck")
        .output()
        .unwrap();
    let grad_ok = grad.status.code() == Some(0);

    report(
        8,
        "byte-identical reruns and gradcheck",
        identical && grad_ok,
        &format!(
            "run.csv identical across reruns: {identical}; gradcheck exit {:?}",
            grad.status.code()
        ),
        t0.elapsed(),
        Duration::from_secs(300),
    );
}

// The scripted controller oracle should still drive a full training-loop
// episode to success quickly; keeps the acceptance suite honest about the
// env/agent plumbing the learning criterion depends on.
fn scripted_oracle_sanity() {
    let net = rbfq::agent::scripted_reach_net(2, 20.0);
    let mut env = rbfq::envs::make_env("point_reach_2d").unwrap();
    let mut rng = stream(12, Stream::Eval);
    for _ in 0..5 {
        let (mut state, goal) = env.reset(&mut rng);
        let mut steps = 0;
        loop {
            let (a, _) = net.greedy_action(&net_input(&state, &goal)).unwrap();
            let out = env.step(&a).unwrap();
            steps += 1;
            if out.done {
                assert!(out.success && steps <= 60, "steps {steps}");
                break;
            }
            state = out.next_state;
        }
    }
}

const CASES: [(&str, fn()); 9] = [
    ("criterion_1_mixture_oracle_equivalence", criterion_1_mixture_oracle_equivalence),
    ("criterion_2_gradient_fidelity", criterion_2_gradient_fidelity),
    ("criterion_3_centroid_search_gap", criterion_3_centroid_search_gap),
    ("criterion_4_per_sampling_and_sum_tree", criterion_4_per_sampling_and_sum_tree),
    ("criterion_5_her_accounting", criterion_5_her_accounting),
    ("criterion_6_learning_reproduction", criterion_6_learning_reproduction),
    ("criterion_7_dynamics_taxonomy", criterion_7_dynamics_taxonomy),
    ("criterion_8_determinism_and_gradcheck", criterion_8_determinism_and_gradcheck),
    ("scripted_oracle_sanity", scripted_oracle_sanity),
];

// Value-carrying libtest flags we accept and ignore in their two-token form.
const IGNORED_WITH_VALUE: [&str; 4] = ["--test-threads", "--color", "--format", "--logfile"];

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut filters: Vec<String> = Vec::new();
    let mut skips: Vec<String> = Vec::new();
    let mut exact = false;
    let mut i = 0;
    while i < args.len() {
        let a = args[i].as_str();
        if a == "--skip" {
            i += 1;
            skips.push(args.get(i).cloned().unwrap_or_default());
        } else if a == "--exact" {
            exact = true;
        } else if a == "--list" {
            for (name, _) in CASES {
                println!("{name}: test");
            }
            return;
        } else if IGNORED_WITH_VALUE.contains(&a) {
            i += 1;
        } else if a.starts_with('-') {
            // Other harness flags (--nocapture, --test-threads=1, ...) have
            // no effect on a sequential runner.
        } else {
            filters.push(a.to_string());
        }
        i += 1;
    }

    let matches = |name: &str, pat: &str| {
        if exact {
            name == pat
        } else {
            name.contains(pat)
        }
    };
    let selected: Vec<_> = CASES
        .iter()
        .filter(|(name, _)| {
            (filters.is_empty() || filters.iter().any(|f| matches(name, f)))
                && !skips.iter().any(|s| matches(name, s))
        })
        .collect();

    println!("acceptance: running {} of {} cases", selected.len(), CASES.len());
    let t0 = Instant::now();
    for (name, case) in &selected {
        println!("case {name}");
        case();
    }
    println!(
        "acceptance: ok, {} cases in {:.1}s",
        selected.len(),
        t0.elapsed().as_secs_f64()
    );
}
