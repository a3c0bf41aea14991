//! The `rbfq` command line: train, eval, ablate, gradcheck.
//!
//! Exit codes: 0 success, 2 config/format/shape problems, 3 numerical
//! failures, 1 anything else.

use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, ArgMatches, Command};
use rand::Rng as _;

use rbfq::agent::batch_gradient;
use rbfq::nn::{finite_diff_check, init_params, Activation, MlpSpec};
use rbfq::rbf::{Norm, RBFQNet};
use rbfq::replay::Transition;
use rbfq::rng::{stream, Stream};
use rbfq::{Error, Result};

use crate::config::{RunConfig, KEYS};
use crate::harness;

fn key_help(key: &str) -> &'static str {
    match key {
        "task_id" => "task: point_reach_2d, point_reach_3d, planar_arm_reach, lid_attractor, grip_drawer",
        "variant" => "algorithm variant: vanilla, her, per, her_per",
        "seed" => "master seed; every rng stream derives from it",
        "episodes" => "number of training episodes",
        "gamma" => "discount factor in [0,1)",
        "lr" => "adam learning rate",
        "epsilon_start" => "initial exploration rate",
        "epsilon_end" => "final exploration rate",
        "epsilon_decay_episodes" => "episodes to anneal epsilon over, or 'auto' (40% of episodes)",
        "batch_size" => "transitions per gradient step",
        "target_update" => "target network rule: hard or polyak",
        "target_sync_every" => "gradient steps between hard target syncs",
        "polyak_tau" => "polyak blend rate",
        "updates_per_episode" => "gradient steps after each episode",
        "n_centroids" => "number of rbf centroids",
        "beta" => "rbf temperature",
        "norm" => "centroid distance norm: l2 or l1",
        "hidden" => "comma-separated hidden layer widths, e.g. 128,128",
        "hidden_activation" => "hidden activation: relu or tanh",
        "buffer_capacity" => "replay ring capacity",
        "per_alpha" => "priority exponent",
        "per_epsilon_priority" => "priority floor added to |td error|",
        "per_is_beta_start" => "importance-sampling exponent at step 0",
        "per_is_beta_end" => "importance-sampling exponent after annealing",
        "per_anneal_steps" => "gradient steps to anneal the is exponent over",
        "per_max_priority_init" => "priority assigned to never-sampled transitions",
        "her_strategy" => "relabeling strategy: final, future or final_and_future",
        "her_k" => "future goals sampled per step",
        "eval_episodes" => "greedy episodes in the final evaluation",
        "checkpoint_every" => "episodes between checkpoints; 0 disables periodic saves",
        "output_dir" => "artifact directory",
        _ => "",
    }
}

fn config_args(cmd: Command) -> Command {
    let mut cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("flat key = value config file; flags override it"),
    );
    for key in KEYS {
        let long = if *key == "task_id" {
            "task".to_string()
        } else {
            key.replace('_', "-")
        };
        cmd = cmd.arg(
            Arg::new(*key)
                .long(long)
                .value_name("VALUE")
                .help(key_help(key))
                .action(ArgAction::Set),
        );
    }
    cmd
}

pub fn build_cli() -> Command {
    Command::new("rbfq")
        .about("RBF-DQN experiment harness")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(config_args(
            Command::new("train").about("run one seeded training run and write its artifacts"),
        ))
        .subcommand(
            Command::new("eval")
                .about("greedy evaluation of a checkpoint on a task")
                .arg(Arg::new("checkpoint").long("checkpoint").value_name("FILE").required(true))
                .arg(Arg::new("task").long("task").value_name("ID").required(true))
                .arg(Arg::new("episodes").long("episodes").value_name("N").default_value("20"))
                .arg(Arg::new("seed").long("seed").value_name("N").default_value("0"))
                .arg(
                    Arg::new("output_dir")
                        .long("output-dir")
                        .value_name("DIR")
                        .default_value("runs"),
                ),
        )
        .subcommand(
            config_args(
                Command::new("ablate")
                    .about("run the vanilla/her/per/her_per matrix over a seed list")
                    .arg(
                        Arg::new("seeds")
                            .long("seeds")
                            .value_name("LIST")
                            .default_value("0,1,2")
                            .help("comma-separated seeds; variant and seed keys are set per run"),
                    ),
            ),
        )
        .subcommand(
            Command::new("gradcheck")
                .about("finite-difference checks of every gradient path; nonzero exit on failure")
                .arg(Arg::new("cases").long("cases").value_name("N").default_value("20")),
        )
}

fn resolve_config(m: &ArgMatches) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = m.get_one::<String>("config") {
        cfg.apply_file(Path::new(path))?;
    }
    for key in KEYS {
        if let Some(value) = m.get_one::<String>(key) {
            cfg.set(key, value)?;
        }
    }
    cfg.apply_env()?;
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(m: &ArgMatches) -> Result<()> {
    let cfg = resolve_config(m)?;
    let out = harness::run_training(&cfg)?;
    println!("run_dir {}", out.run_dir.display());
    println!("episodes {}", out.records.len());
    println!("final_eval {}", out.final_eval);
    Ok(())
}

fn cmd_eval(m: &ArgMatches) -> Result<()> {
    let checkpoint = PathBuf::from(m.get_one::<String>("checkpoint").unwrap());
    let task = m.get_one::<String>("task").unwrap();
    let episodes: usize = m
        .get_one::<String>("episodes")
        .unwrap()
        .parse()
        .map_err(|_| Error::Config("episodes must be a positive integer".to_string()))?;
    let mut seed: u64 = m
        .get_one::<String>("seed")
        .unwrap()
        .parse()
        .map_err(|_| Error::Config("seed must be an integer".to_string()))?;
    if let Ok(v) = std::env::var("RBFQ_SEED") {
        seed = v
            .parse()
            .map_err(|_| Error::Config(format!("invalid RBFQ_SEED '{v}'")))?;
    }
    let out_dir = PathBuf::from(m.get_one::<String>("output_dir").unwrap());
    if episodes == 0 {
        return Err(Error::Config("episodes must be positive".to_string()));
    }
    let rate = harness::eval_checkpoint(&checkpoint, task, episodes, seed, &out_dir)?;
    println!("success_rate {rate}");
    Ok(())
}

fn cmd_ablate(m: &ArgMatches) -> Result<()> {
    let cfg = resolve_config(m)?;
    let seeds: Vec<u64> = {
        let raw = m.get_one::<String>("seeds").unwrap();
        raw.split(',')
            .map(|p| {
                p.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::Config(format!("invalid seed '{p}' in --seeds")))
            })
            .collect::<Result<_>>()?
    };
    let report = harness::run_ablation(&cfg, &seeds)?;
    for f in &report.failures {
        eprintln!("failed run: {f}");
    }
    print!("{}", std::fs::read_to_string(report.out_dir.join("ranking.txt"))?);
    println!("summary {}", report.out_dir.join("summary.csv").display());
    if !report.variants_all_failed.is_empty() {
        let names: Vec<&str> = report.variants_all_failed.iter().map(|v| v.name()).collect();
        return Err(Error::State(format!(
            "all runs failed for variant(s): {}",
            names.join(", ")
        )));
    }
    Ok(())
}

/// Worst relative error of the mlp backward pass over seeded tanh nets.
fn gradcheck_mlp(cases: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for i in 0..cases {
        let mut rng = stream(9000 + i as u64, Stream::Init);
        let spec = MlpSpec::new(4, &[8, 6], 3, Activation::Tanh, Activation::Identity)?;
        let params = init_params(&spec, &mut rng);
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let upstream: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        worst = worst.max(finite_diff_check(&spec, &params, &x, &upstream, 1e-6)?);
    }
    Ok(worst)
}

fn fd_net_param(
    net: &RBFQNet,
    s: &[f64],
    a: &[f64],
    loc_head: bool,
    k: usize,
    step: f64,
) -> Result<f64> {
    let mut plus = net.clone();
    let mut minus = net.clone();
    if loc_head {
        plus.loc_params.values_mut()[k] += step;
        minus.loc_params.values_mut()[k] -= step;
    } else {
        plus.val_params.values_mut()[k] += step;
        minus.val_params.values_mut()[k] -= step;
    }
    Ok((plus.q_value(s, a)? - minus.q_value(s, a)?) / (2.0 * step))
}

fn gradcheck_net(cases: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for i in 0..cases {
        let mut rng = stream(9100 + i as u64, Stream::Init);
        let net = RBFQNet::new(
            4,
            &[-1.0, -1.0],
            &[1.0, 1.0],
            4,
            3.0,
            Norm::L2,
            &[6],
            Activation::Tanh,
            &mut rng,
        )?;
        let s: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a: Vec<f64> = (0..2).map(|_| rng.gen_range(-0.9..0.9)).collect();
        let (lg, vg) = net.q_gradient(&s, &a, 1.0)?;
        for (grad, loc_head) in [(&lg, true), (&vg, false)] {
            for k in 0..grad.len() {
                let fd = fd_net_param(&net, &s, &a, loc_head, k, 1e-6)?;
                let g = grad.values[k];
                let scale = g.abs().max(fd.abs()).max(1e-8);
                worst = worst.max((g - fd).abs() / scale);
            }
        }
    }
    Ok(worst)
}

fn gradcheck_loss(cases: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for i in 0..cases {
        let mut rng = stream(9200 + i as u64, Stream::Init);
        let mk = |rng: &mut rbfq::rng::Rng| {
            RBFQNet::new(
                4,
                &[-1.0, -1.0],
                &[1.0, 1.0],
                4,
                3.0,
                Norm::L2,
                &[6],
                Activation::Tanh,
                rng,
            )
        };
        let net = mk(&mut rng)?;
        let target = mk(&mut rng)?;
        let t = Transition {
            state: (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            action: (0..2).map(|_| rng.gen_range(-0.9..0.9)).collect(),
            reward: rng.gen_range(0.0..1.0),
            next_state: (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            goal: (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            done: false,
        };
        let batch = [t];
        let w = [1.0];
        let bg = batch_gradient(&net, &target, &batch, &w, 0.99)?;
        let loss_at = |n: &RBFQNet| -> Result<f64> {
            Ok(batch_gradient(n, &target, &batch, &w, 0.99)?.loss)
        };
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
                let fd = (loss_at(&plus)? - loss_at(&minus)?) / (2.0 * step);
                let g = grad.values[k];
                let scale = g.abs().max(fd.abs()).max(1e-8);
                worst = worst.max((g - fd).abs() / scale);
            }
        }
    }
    Ok(worst)
}

fn cmd_gradcheck(m: &ArgMatches) -> Result<()> {
    let cases: usize = m
        .get_one::<String>("cases")
        .unwrap()
        .parse()
        .map_err(|_| Error::Config("cases must be a positive integer".to_string()))?;
    if cases == 0 {
        return Err(Error::Config("cases must be positive".to_string()));
    }
    let threshold = 1e-4;
    let mut failed = false;
    for (name, run) in [
        ("mlp_backward", gradcheck_mlp as fn(usize) -> Result<f64>),
        ("q_gradient", gradcheck_net),
        ("loss_end_to_end", gradcheck_loss),
    ] {
        let worst = run(cases)?;
        let ok = worst < threshold;
        failed |= !ok;
        println!(
            "{name}: max_rel_err {worst:.3e} threshold {threshold:.0e} {}",
            if ok { "ok" } else { "FAIL" }
        );
    }
    if failed {
        return Err(Error::Numerical("gradient check failed".to_string()));
    }
    println!("gradcheck ok ({cases} cases per suite)");
    Ok(())
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Format(_) | Error::Shape(_) | Error::Io(_) => 2,
        Error::Numerical(_) => 3,
        _ => 1,
    }
}

pub fn run() -> i32 {
    let matches = build_cli().get_matches();
    let result = match matches.subcommand() {
        Some(("train", m)) => cmd_train(m),
        Some(("eval", m)) => cmd_eval(m),
        Some(("ablate", m)) => cmd_ablate(m),
        Some(("gradcheck", m)) => cmd_gradcheck(m),
        _ => unreachable!("subcommand is required"),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
