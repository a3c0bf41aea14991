//! Flat `key = value` run configuration with strict parsing.
//!
//! Every key has a default; unknown keys are a hard error. Resolution order
//! is defaults, then config file, then command-line flags, then the
//! RBFQ_SEED environment variable. `dump_resolved` emits every key in a
//! fixed order, and feeding that dump back in reproduces the run exactly.

use std::fmt::Write as _;
use std::path::Path;

use rbfq::agent::{AgentConfig, TargetUpdate, Variant};
use rbfq::her::HERStrategy;
use rbfq::nn::Activation;
use rbfq::rbf::Norm;
use rbfq::replay::PERConfig;
use rbfq::{Error, Result};

/// Every config key, in dump order. Single source of truth for the parser,
/// the CLI flag set, and the resolved dump.
pub const KEYS: &[&str] = &[
    "task_id",
    "variant",
    "seed",
    "episodes",
    "gamma",
    "lr",
    "epsilon_start",
    "epsilon_end",
    "epsilon_decay_episodes",
    "batch_size",
    "target_update",
    "target_sync_every",
    "polyak_tau",
    "updates_per_episode",
    "n_centroids",
    "beta",
    "norm",
    "hidden",
    "hidden_activation",
    "buffer_capacity",
    "per_alpha",
    "per_epsilon_priority",
    "per_is_beta_start",
    "per_is_beta_end",
    "per_anneal_steps",
    "per_max_priority_init",
    "her_strategy",
    "her_k",
    "eval_episodes",
    "checkpoint_every",
    "output_dir",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpsilonDecay {
    /// 40% of the episode budget, resolved at run time.
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task_id: String,
    pub variant: Variant,
    pub seed: u64,
    pub episodes: usize,
    pub gamma: f64,
    pub lr: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_episodes: EpsilonDecay,
    pub batch_size: usize,
    pub target_update_kind: String,
    pub target_sync_every: usize,
    pub polyak_tau: f64,
    pub updates_per_episode: usize,
    pub n_centroids: usize,
    pub beta: f64,
    pub norm: Norm,
    pub hidden: Vec<usize>,
    pub hidden_activation: Activation,
    pub buffer_capacity: usize,
    pub per_alpha: f64,
    pub per_epsilon_priority: f64,
    pub per_is_beta_start: f64,
    pub per_is_beta_end: f64,
    pub per_anneal_steps: u64,
    pub per_max_priority_init: f64,
    pub her_strategy_kind: String,
    pub her_k: usize,
    pub eval_episodes: usize,
    pub checkpoint_every: usize,
    pub output_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task_id: "point_reach_2d".to_string(),
            variant: Variant::Vanilla,
            seed: 0,
            episodes: 3000,
            gamma: 0.99,
            lr: 1e-3,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_episodes: EpsilonDecay::Auto,
            batch_size: 128,
            target_update_kind: "hard".to_string(),
            target_sync_every: 500,
            polyak_tau: 0.005,
            updates_per_episode: 50,
            n_centroids: 32,
            beta: 5.0,
            norm: Norm::L2,
            hidden: vec![128, 128],
            hidden_activation: Activation::Relu,
            buffer_capacity: 1_000_000,
            per_alpha: 0.6,
            per_epsilon_priority: 0.01,
            per_is_beta_start: 0.4,
            per_is_beta_end: 1.0,
            per_anneal_steps: 100_000,
            per_max_priority_init: 1.0,
            her_strategy_kind: "final_and_future".to_string(),
            her_k: 4,
            eval_episodes: 20,
            checkpoint_every: 1000,
            output_dir: "runs".to_string(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse::<T>().map_err(|_| {
        Error::Config(format!(
            "invalid value '{value}' for key '{key}' (expected {})",
            std::any::type_name::<T>()
        ))
    })
}

fn parse_choice(key: &str, value: &str, choices: &[&str]) -> Result<String> {
    let v = value.trim();
    if choices.contains(&v) {
        Ok(v.to_string())
    } else {
        Err(Error::Config(format!(
            "invalid value '{v}' for key '{key}', expected one of {}",
            choices.join(", ")
        )))
    }
}

impl RunConfig {
    /// Sets a single key from its text form. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "task_id" => self.task_id = value.trim().to_string(),
            "variant" => self.variant = Variant::parse(value.trim())?,
            "seed" => self.seed = parse(key, value)?,
            "episodes" => self.episodes = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "epsilon_start" => self.epsilon_start = parse(key, value)?,
            "epsilon_end" => self.epsilon_end = parse(key, value)?,
            "epsilon_decay_episodes" => {
                self.epsilon_decay_episodes = if value.trim() == "auto" {
                    EpsilonDecay::Auto
                } else {
                    EpsilonDecay::Fixed(parse(key, value)?)
                }
            }
            "batch_size" => self.batch_size = parse(key, value)?,
            "target_update" => {
                self.target_update_kind = parse_choice(key, value, &["hard", "polyak"])?
            }
            "target_sync_every" => self.target_sync_every = parse(key, value)?,
            "polyak_tau" => self.polyak_tau = parse(key, value)?,
            "updates_per_episode" => self.updates_per_episode = parse(key, value)?,
            "n_centroids" => self.n_centroids = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "norm" => {
                self.norm = match parse_choice(key, value, &["l2", "l1"])?.as_str() {
                    "l1" => Norm::L1,
                    _ => Norm::L2,
                }
            }
            "hidden" => {
                let dims: Result<Vec<usize>> = value
                    .split(',')
                    .map(|p| parse::<usize>(key, p))
                    .collect();
                self.hidden = dims?;
            }
            "hidden_activation" => {
                self.hidden_activation =
                    match parse_choice(key, value, &["relu", "tanh"])?.as_str() {
                        "tanh" => Activation::Tanh,
                        _ => Activation::Relu,
                    }
            }
            "buffer_capacity" => self.buffer_capacity = parse(key, value)?,
            "per_alpha" => self.per_alpha = parse(key, value)?,
            "per_epsilon_priority" => self.per_epsilon_priority = parse(key, value)?,
            "per_is_beta_start" => self.per_is_beta_start = parse(key, value)?,
            "per_is_beta_end" => self.per_is_beta_end = parse(key, value)?,
            "per_anneal_steps" => self.per_anneal_steps = parse(key, value)?,
            "per_max_priority_init" => self.per_max_priority_init = parse(key, value)?,
            "her_strategy" => {
                self.her_strategy_kind =
                    parse_choice(key, value, &["final", "future", "final_and_future"])?
            }
            "her_k" => self.her_k = parse(key, value)?,
            "eval_episodes" => self.eval_episodes = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "output_dir" => self.output_dir = value.trim().to_string(),
            other => {
                return Err(Error::Config(format!("unknown config key '{other}'")));
            }
        }
        Ok(())
    }

    /// Applies a flat `key = value` file. Blank lines and `#` comments are
    /// allowed; anything else must be a known key.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected 'key = value', got '{line}'",
                    path.display(),
                    i + 1
                ))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// RBFQ_SEED overrides the seed from both file and flags.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var("RBFQ_SEED") {
            self.seed = parse("RBFQ_SEED", &v)?;
        }
        Ok(())
    }

    pub fn resolved_epsilon_decay(&self) -> usize {
        match self.epsilon_decay_episodes {
            EpsilonDecay::Fixed(n) => n,
            EpsilonDecay::Auto => self.episodes * 2 / 5,
        }
    }

    pub fn her_strategy(&self) -> HERStrategy {
        match self.her_strategy_kind.as_str() {
            "final" => HERStrategy::Final,
            "future" => HERStrategy::Future { k: self.her_k },
            _ => HERStrategy::FinalAndFuture { k: self.her_k },
        }
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            gamma: self.gamma,
            lr: self.lr,
            epsilon_start: self.epsilon_start,
            epsilon_end: self.epsilon_end,
            epsilon_decay_episodes: self.resolved_epsilon_decay(),
            batch_size: self.batch_size,
            target_update: if self.target_update_kind == "polyak" {
                TargetUpdate::Polyak { tau: self.polyak_tau }
            } else {
                TargetUpdate::Hard { every: self.target_sync_every }
            },
            updates_per_episode: self.updates_per_episode,
            variant: self.variant,
            her_strategy: self.her_strategy(),
        }
    }

    pub fn per_config(&self) -> PERConfig {
        PERConfig {
            alpha: self.per_alpha,
            epsilon_priority: self.per_epsilon_priority,
            is_beta_start: self.per_is_beta_start,
            is_beta_end: self.per_is_beta_end,
            anneal_steps: self.per_anneal_steps,
            max_priority_init: self.per_max_priority_init,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Config("episodes must be positive".to_string()));
        }
        if self.n_centroids == 0 {
            return Err(Error::Config("n_centroids must be positive".to_string()));
        }
        if !(self.beta > 0.0) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be positive".to_string()));
        }
        self.agent_config().validate()?;
        self.per_config().validate()?;
        Ok(())
    }

    fn value_string(&self, key: &str) -> String {
        match key {
            "task_id" => self.task_id.clone(),
            "variant" => self.variant.name().to_string(),
            "seed" => self.seed.to_string(),
            "episodes" => self.episodes.to_string(),
            "gamma" => self.gamma.to_string(),
            "lr" => self.lr.to_string(),
            "epsilon_start" => self.epsilon_start.to_string(),
            "epsilon_end" => self.epsilon_end.to_string(),
            "epsilon_decay_episodes" => self.resolved_epsilon_decay().to_string(),
            "batch_size" => self.batch_size.to_string(),
            "target_update" => self.target_update_kind.clone(),
            "target_sync_every" => self.target_sync_every.to_string(),
            "polyak_tau" => self.polyak_tau.to_string(),
            "updates_per_episode" => self.updates_per_episode.to_string(),
            "n_centroids" => self.n_centroids.to_string(),
            "beta" => self.beta.to_string(),
            "norm" => match self.norm {
                Norm::L2 => "l2".to_string(),
                Norm::L1 => "l1".to_string(),
            },
            "hidden" => self
                .hidden
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(","),
            "hidden_activation" => match self.hidden_activation {
                Activation::Tanh => "tanh".to_string(),
                _ => "relu".to_string(),
            },
            "buffer_capacity" => self.buffer_capacity.to_string(),
            "per_alpha" => self.per_alpha.to_string(),
            "per_epsilon_priority" => self.per_epsilon_priority.to_string(),
            "per_is_beta_start" => self.per_is_beta_start.to_string(),
            "per_is_beta_end" => self.per_is_beta_end.to_string(),
            "per_anneal_steps" => self.per_anneal_steps.to_string(),
            "per_max_priority_init" => self.per_max_priority_init.to_string(),
            "her_strategy" => self.her_strategy_kind.clone(),
            "her_k" => self.her_k.to_string(),
            "eval_episodes" => self.eval_episodes.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "output_dir" => self.output_dir.clone(),
            other => unreachable!("unlisted key {other}"),
        }
    }

    /// Every key in fixed order, post-default. Feeding this back through
    /// apply_file reproduces this config (epsilon decay resolved to its
    /// concrete episode count).
    pub fn dump_resolved(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            writeln!(out, "{key} = {}", self.value_string(key)).unwrap();
        }
        out
    }
}
