//! Training runs and the ablation matrix: run.csv / summary.csv / ranking.txt
//! artifact plumbing around the rbfq training loop.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rbfq::agent::{evaluate, run_episode, Learner, RunRngs, Variant};
use rbfq::checkpoint::{load_net, save_net};
use rbfq::envs::make_env;
use rbfq::exec;
use rbfq::rbf::RBFQNet;
use rbfq::replay::ReplayBuffer;
use rbfq::rng::{stream, Stream};
use rbfq::{Error, Result};

use crate::config::RunConfig;

pub const RUN_CSV_HEADER: &str =
    "episode,steps,success,return,rolling_success,epsilon,mean_loss,wall_ms";
pub const SUMMARY_CSV_HEADER: &str = "variant,episode,mean_rolling_success,ci95_normal,n";
pub const EVAL_CSV_HEADER: &str = "task_id,seed,episodes,success_rate,source";
pub const ROLLING_WINDOW: usize = 5;
pub const SUCCESS_THRESHOLD: f64 = 0.9;

pub const VARIANTS: [Variant; 4] = [Variant::Vanilla, Variant::Her, Variant::Per, Variant::HerPer];

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub episode: usize,
    pub steps: usize,
    pub success: bool,
    pub ret: f64,
    pub rolling_success: f64,
    pub epsilon: f64,
    pub mean_loss: f64,
    pub wall_ms: u64,
}

impl RunRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.episode,
            self.steps,
            self.success as u8,
            self.ret,
            self.rolling_success,
            self.epsilon,
            self.mean_loss,
            self.wall_ms
        )
    }
}

/// Mean of the last min(ROLLING_WINDOW, len) entries.
pub fn rolling_success(successes: &[bool]) -> f64 {
    let window = successes.len().min(ROLLING_WINDOW);
    if window == 0 {
        return 0.0;
    }
    let tail = &successes[successes.len() - window..];
    tail.iter().filter(|&&s| s).count() as f64 / window as f64
}

pub struct RunOutput {
    pub records: Vec<RunRecord>,
    pub final_eval: f64,
    pub run_dir: PathBuf,
}

pub fn build_net(cfg: &RunConfig) -> Result<RBFQNet> {
    let env = make_env(&cfg.task_id)?;
    let spec = env.spec();
    RBFQNet::new(
        spec.state_dim + spec.goal_dim,
        &spec.action_low,
        &spec.action_high,
        cfg.n_centroids,
        cfg.beta,
        cfg.norm,
        &cfg.hidden,
        cfg.hidden_activation,
        &mut stream(cfg.seed, Stream::Init),
    )
}

pub fn append_eval_row(
    dir: &Path,
    task_id: &str,
    seed: u64,
    episodes: usize,
    rate: f64,
    source: &str,
) -> Result<()> {
    let path = dir.join("eval.csv");
    let fresh = !path.exists();
    let mut f = fs::OpenOptions::new().create(true).append(true).open(&path)?;
    if fresh {
        writeln!(f, "{EVAL_CSV_HEADER}")?;
    }
    writeln!(f, "{task_id},{seed},{episodes},{rate},{source}")?;
    Ok(())
}

/// Full seeded training run: writes config.resolved.txt, run.csv, periodic
/// and final checkpoints, and the final greedy evaluation row in eval.csv.
pub fn run_training(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let dir = PathBuf::from(&cfg.output_dir);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.resolved.txt"), cfg.dump_resolved())?;

    let mut env = make_env(&cfg.task_id)?;
    let spec = env.spec().clone();
    let learner_net = build_net(cfg)?;
    let mut learner = Learner::new(learner_net, cfg.agent_config())?;
    let mut buffer = ReplayBuffer::new(
        cfg.buffer_capacity,
        spec.state_dim,
        spec.action_dim,
        spec.goal_dim,
        cfg.per_config(),
    )?;
    let mut rngs = RunRngs::from_master(cfg.seed);

    let mut run_csv = std::io::BufWriter::new(fs::File::create(dir.join("run.csv"))?);
    writeln!(run_csv, "{RUN_CSV_HEADER}")?;

    let mut records = Vec::with_capacity(cfg.episodes);
    let mut successes = Vec::with_capacity(cfg.episodes);
    for episode in 1..=cfg.episodes {
        let r = run_episode(&mut *env, &mut learner, &mut buffer, episode - 1, &mut rngs)
            .map_err(|e| match e {
                Error::Numerical(msg) => Error::Numerical(format!("episode {episode}: {msg}")),
                other => other,
            })?;
        successes.push(r.success);
        let record = RunRecord {
            episode,
            steps: r.steps,
            success: r.success,
            ret: r.ret,
            rolling_success: rolling_success(&successes),
            epsilon: r.epsilon,
            mean_loss: r.mean_loss,
            // Simulated wall time (steps * dt), so reruns are byte-identical.
            wall_ms: (r.steps as f64 * spec.dt * 1000.0).round() as u64,
        };
        writeln!(run_csv, "{}", record.csv_row())?;
        records.push(record);
        if cfg.checkpoint_every > 0 && episode % cfg.checkpoint_every == 0 {
            save_net(&dir.join(format!("checkpoint_ep{episode}.net")), &learner.net)?;
        }
    }
    run_csv.flush()?;
    save_net(&dir.join("checkpoint.net"), &learner.net)?;

    let final_eval = evaluate(
        &mut *env,
        &learner.net,
        cfg.eval_episodes,
        &mut stream(cfg.seed, Stream::Eval),
    )?;
    append_eval_row(&dir, &cfg.task_id, cfg.seed, cfg.eval_episodes, final_eval, "train")?;

    Ok(RunOutput {
        records,
        final_eval,
        run_dir: dir,
    })
}

/// Greedy evaluation of a stored checkpoint against a task, with the
/// dimension compatibility check that guards exit code 2 at the CLI.
pub fn eval_checkpoint(
    checkpoint: &Path,
    task_id: &str,
    episodes: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<f64> {
    let net = load_net(checkpoint)?;
    let mut env = make_env(task_id)?;
    let spec = env.spec();
    let want_input = spec.state_dim + spec.goal_dim;
    let got_input = net.loc_spec.input_dim;
    let got_actions = net.action_low.len();
    if got_input != want_input || got_actions != spec.action_dim {
        return Err(Error::Shape(format!(
            "checkpoint expects input dim {got_input} and action dim {got_actions}, \
             task {task_id} provides input dim {want_input} (state {} + goal {}) \
             and action dim {}",
            spec.state_dim, spec.goal_dim, spec.action_dim
        )));
    }
    let rate = evaluate(&mut *env, &net, episodes, &mut stream(seed, Stream::Eval))?;
    fs::create_dir_all(out_dir)?;
    append_eval_row(out_dir, task_id, seed, episodes, rate, "eval")?;
    Ok(rate)
}

pub struct AblationReport {
    pub out_dir: PathBuf,
    pub run_dirs: Vec<PathBuf>,
    pub failures: Vec<String>,
    pub variants_all_failed: Vec<Variant>,
    pub ranking: Vec<(Variant, Option<usize>)>,
}

/// Episode at which a rolling-success curve first reaches the threshold.
pub fn episodes_to_threshold(curve: &[(usize, f64)]) -> Option<usize> {
    curve
        .iter()
        .find(|(_, v)| *v >= SUCCESS_THRESHOLD)
        .map(|(e, _)| *e)
}

/// The four-variant ablation matrix over a seed list. Runs are independent
/// and execute in parallel; failures are recorded and surviving runs still
/// aggregate into summary.csv and ranking.txt.
pub fn run_ablation(base: &RunConfig, seeds: &[u64]) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::Config("ablate needs a nonempty seed list".to_string()));
    }
    base.validate()?;
    let out_dir = PathBuf::from(&base.output_dir);
    fs::create_dir_all(&out_dir)?;

    let mut jobs = Vec::new();
    for variant in VARIANTS {
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.variant = variant;
            cfg.seed = seed;
            cfg.output_dir = out_dir
                .join(format!("{}_s{seed}", variant.name()))
                .to_string_lossy()
                .into_owned();
            jobs.push(cfg);
        }
    }
    let results = exec::map_indexed(jobs.len(), |i| run_training(&jobs[i]));

    let mut failures = Vec::new();
    let mut variants_all_failed = Vec::new();
    let mut summary = String::from(SUMMARY_CSV_HEADER);
    summary.push('\n');
    let mut ranking = Vec::new();
    for (vi, variant) in VARIANTS.iter().enumerate() {
        let mut curves: Vec<&[RunRecord]> = Vec::new();
        for (si, seed) in seeds.iter().enumerate() {
            match &results[vi * seeds.len() + si] {
                Ok(out) => curves.push(&out.records),
                Err(e) => failures.push(format!("{} seed {seed}: {e}", variant.name())),
            }
        }
        if curves.is_empty() {
            variants_all_failed.push(*variant);
            ranking.push((*variant, None));
            continue;
        }
        let n = curves.len();
        let mut mean_curve = Vec::with_capacity(base.episodes);
        for e in 0..base.episodes {
            let xs: Vec<f64> = curves.iter().map(|c| c[e].rolling_success).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let sd = if n > 1 {
                (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            let ci = 1.96 * sd / (n as f64).sqrt();
            summary.push_str(&format!("{},{},{},{},{}\n", variant.name(), e + 1, mean, ci, n));
            mean_curve.push((e + 1, mean));
        }
        ranking.push((*variant, episodes_to_threshold(&mean_curve)));
    }
    fs::write(out_dir.join("summary.csv"), &summary)?;

    let mut ranked = ranking.clone();
    ranked.sort_by_key(|(_, e)| e.unwrap_or(usize::MAX));
    let mut text = format!(
        "episodes to mean rolling_success >= {SUCCESS_THRESHOLD} (window {ROLLING_WINDOW}), \
         task {}, seeds {:?}\n",
        base.task_id, seeds
    );
    for (i, (variant, e)) in ranked.iter().enumerate() {
        match e {
            Some(e) => text.push_str(&format!("{}. {}: episode {e}\n", i + 1, variant.name())),
            None => text.push_str(&format!("{}. {}: never\n", i + 1, variant.name())),
        }
    }
    if !failures.is_empty() {
        text.push_str("failed runs:\n");
        for f in &failures {
            text.push_str(&format!("  {f}\n"));
        }
    }
    fs::write(out_dir.join("ranking.txt"), &text)?;

    Ok(AblationReport {
        out_dir,
        run_dirs: jobs.iter().map(|j| PathBuf::from(&j.output_dir)).collect(),
        failures,
        variants_all_failed,
        ranking: ranked,
    })
}
