//! The learner: epsilon-greedy acting, semi-gradient TD updates against a
//! target network, and episode orchestration with hindsight relabeling and
//! priority refresh.
//!
//! Networks are goal-conditioned: the Q input is always concat(state, goal).

use rand::Rng as _;

use crate::envs::Env;
use crate::error::{Error, Result};
use crate::exec;
use crate::her::{relabel, EpisodeTrajectory, HERStrategy};
use crate::nn::{adam_step, AdamState, Gradient};
use crate::rbf::RBFQNet;
use crate::replay::{Priority, ReplayBuffer, Transition};
use crate::rng::{stream, Rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetUpdate {
    /// Bitwise copy every `every` gradient steps.
    Hard { every: usize },
    /// Exponential blend target = (1-tau)*target + tau*online each step.
    Polyak { tau: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Vanilla,
    Her,
    Per,
    HerPer,
}

impl Variant {
    pub fn uses_her(self) -> bool {
        matches!(self, Variant::Her | Variant::HerPer)
    }

    pub fn uses_per(self) -> bool {
        matches!(self, Variant::Per | Variant::HerPer)
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Variant::Vanilla),
            "her" => Ok(Variant::Her),
            "per" => Ok(Variant::Per),
            "her_per" => Ok(Variant::HerPer),
            other => Err(Error::Config(format!(
                "unknown variant '{other}', expected vanilla, her, per or her_per"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Vanilla => "vanilla",
            Variant::Her => "her",
            Variant::Per => "per",
            Variant::HerPer => "her_per",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub gamma: f64,
    pub lr: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_episodes: usize,
    pub batch_size: usize,
    pub target_update: TargetUpdate,
    pub updates_per_episode: usize,
    pub variant: Variant,
    pub her_strategy: HERStrategy,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.99,
            lr: 1e-3,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_episodes: 1200,
            batch_size: 128,
            target_update: TargetUpdate::Hard { every: 500 },
            updates_per_episode: 50,
            variant: Variant::Vanilla,
            her_strategy: HERStrategy::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} outside [0,1)", self.gamma)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0 <= self.epsilon_end
            && self.epsilon_end <= self.epsilon_start
            && self.epsilon_start <= 1.0)
        {
            return Err(Error::Config(format!(
                "epsilon schedule must satisfy 0 <= end <= start <= 1, got {} -> {}",
                self.epsilon_start, self.epsilon_end
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".to_string()));
        }
        match self.target_update {
            TargetUpdate::Hard { every } if every == 0 => {
                return Err(Error::Config("target sync period must be positive".to_string()))
            }
            TargetUpdate::Polyak { tau } if !(tau > 0.0 && tau <= 1.0) => {
                return Err(Error::Config(format!("polyak tau {tau} outside (0,1]")))
            }
            _ => {}
        }
        self.her_strategy.validate()
    }
}

/// Piecewise-linear decay from epsilon_start to epsilon_end over
/// epsilon_decay_episodes, constant afterwards.
pub fn epsilon_for(cfg: &AgentConfig, episode: usize) -> f64 {
    if cfg.epsilon_decay_episodes == 0 || episode >= cfg.epsilon_decay_episodes {
        return cfg.epsilon_end;
    }
    let frac = episode as f64 / cfg.epsilon_decay_episodes as f64;
    cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac
}

pub fn net_input(state: &[f64], goal: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(state.len() + goal.len());
    x.extend_from_slice(state);
    x.extend_from_slice(goal);
    x
}

/// Epsilon-greedy: uniform box action with probability epsilon, else the
/// centroid argmax.
pub fn act(net: &RBFQNet, input: &[f64], epsilon: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    assert!((0.0..=1.0).contains(&epsilon));
    let u: f64 = rng.gen();
    if u < epsilon {
        Ok(net
            .action_low
            .iter()
            .zip(&net.action_high)
            .map(|(lo, hi)| rng.gen_range(*lo..*hi))
            .collect())
    } else {
        Ok(net.greedy_action(input)?.0)
    }
}

/// r if terminal, else r + gamma * centroid-max of the target net at s'.
pub fn td_target(target: &RBFQNet, t: &Transition, gamma: f64) -> Result<f64> {
    if t.done {
        return Ok(t.reward);
    }
    let (_, q) = target.greedy_action(&net_input(&t.next_state, &t.goal))?;
    Ok(t.reward + gamma * q)
}

pub struct BatchGrad {
    pub loss: f64,
    pub deltas: Vec<f64>,
    pub loc_grad: Gradient,
    pub val_grad: Gradient,
}

/// Loss, per-sample TD errors, and the summed semi-gradient for a batch.
///
/// loss = mean(w_i * delta_i^2) / 2 with the target net held fixed.
/// Per-sample terms are computed in parallel and reduced in index order,
/// so the result is identical for any worker count.
pub fn batch_gradient(
    net: &RBFQNet,
    target: &RBFQNet,
    batch: &[Transition],
    is_weights: &[f64],
    gamma: f64,
) -> Result<BatchGrad> {
    if batch.is_empty() {
        return Err(Error::State("empty training batch".to_string()));
    }
    if is_weights.len() != batch.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} transitions",
            is_weights.len(),
            batch.len()
        )));
    }
    let n = batch.len() as f64;
    let per_sample = exec::map_indexed(batch.len(), |i| -> Result<(f64, Gradient, Gradient)> {
        let t = &batch[i];
        let x = net_input(&t.state, &t.goal);
        let q = net.q_value(&x, &t.action)?;
        let delta = td_target(target, t, gamma)? - q;
        let upstream = -is_weights[i] * delta / n;
        let (lg, vg) = net.q_gradient(&x, &t.action, upstream)?;
        Ok((delta, lg, vg))
    });

    let mut loss = 0.0;
    let mut deltas = Vec::with_capacity(batch.len());
    let mut loc_grad = Gradient::zeros_like(&net.loc_params);
    let mut val_grad = Gradient::zeros_like(&net.val_params);
    for (i, r) in per_sample.into_iter().enumerate() {
        let (delta, lg, vg) = r?;
        loss += is_weights[i] * delta * delta;
        deltas.push(delta);
        loc_grad.add_scaled(1.0, &lg);
        val_grad.add_scaled(1.0, &vg);
    }
    loss /= 2.0 * n;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss {loss}")));
    }
    Ok(BatchGrad {
        loss,
        deltas,
        loc_grad,
        val_grad,
    })
}

pub struct Learner {
    pub net: RBFQNet,
    pub target: RBFQNet,
    pub cfg: AgentConfig,
    opt_loc: AdamState,
    opt_val: AdamState,
    train_steps: u64,
    steps_since_sync: usize,
}

impl Learner {
    pub fn new(net: RBFQNet, cfg: AgentConfig) -> Result<Self> {
        cfg.validate()?;
        let opt_loc = AdamState::new(net.loc_params.len());
        let opt_val = AdamState::new(net.val_params.len());
        let target = net.clone();
        Ok(Learner {
            net,
            target,
            cfg,
            opt_loc,
            opt_val,
            train_steps: 0,
            steps_since_sync: 0,
        })
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    fn sync_target(&mut self) {
        match self.cfg.target_update {
            TargetUpdate::Hard { every } => {
                self.steps_since_sync += 1;
                if self.steps_since_sync >= every {
                    self.target.loc_params = self.net.loc_params.clone();
                    self.target.val_params = self.net.val_params.clone();
                    self.steps_since_sync = 0;
                }
            }
            TargetUpdate::Polyak { tau } => {
                for (t, o) in self
                    .target
                    .loc_params
                    .values_mut()
                    .iter_mut()
                    .zip(self.net.loc_params.values())
                {
                    *t = (1.0 - tau) * *t + tau * o;
                }
                for (t, o) in self
                    .target
                    .val_params
                    .values_mut()
                    .iter_mut()
                    .zip(self.net.val_params.values())
                {
                    *t = (1.0 - tau) * *t + tau * o;
                }
            }
        }
    }

    /// One optimizer step on both heads. Returns the loss and per-sample
    /// TD errors (for PER priority refresh).
    pub fn train_step(&mut self, batch: &[Transition], is_weights: &[f64]) -> Result<(f64, Vec<f64>)> {
        let bg = batch_gradient(&self.net, &self.target, batch, is_weights, self.cfg.gamma)?;
        adam_step(&mut self.net.loc_params, &bg.loc_grad, &mut self.opt_loc, self.cfg.lr)?;
        adam_step(&mut self.net.val_params, &bg.val_grad, &mut self.opt_val, self.cfg.lr)?;
        self.train_steps += 1;
        self.sync_target();
        Ok((bg.loss, bg.deltas))
    }
}

/// Named RNG substreams for one run. Keeping them separate means toggling
/// HER or PER never shifts the goal sequence or the exploration noise.
pub struct RunRngs {
    pub env: Rng,
    pub explore: Rng,
    pub her: Rng,
    pub replay: Rng,
}

impl RunRngs {
    pub fn from_master(seed: u64) -> Self {
        RunRngs {
            env: stream(seed, Stream::Env),
            explore: stream(seed, Stream::Explore),
            her: stream(seed, Stream::Her),
            replay: stream(seed, Stream::Replay),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub success: bool,
    pub ret: f64,
    pub steps: usize,
    pub mean_loss: f64,
    pub epsilon: f64,
}

/// One environment episode plus the post-episode update phase.
///
/// Transitions are stored with done set only on real success, so horizon
/// truncation still bootstraps. Updates wait until the buffer can fill a
/// batch.
pub fn run_episode(
    env: &mut dyn Env,
    learner: &mut Learner,
    buffer: &mut ReplayBuffer,
    episode: usize,
    rngs: &mut RunRngs,
) -> Result<EpisodeResult> {
    let epsilon = epsilon_for(&learner.cfg, episode);
    let (mut state, goal) = env.reset(&mut rngs.env);
    let mut episode_transitions = Vec::new();
    let mut ret = 0.0;
    let mut steps = 0;
    let success;
    loop {
        let x = net_input(&state, &goal);
        let action = act(&learner.net, &x, epsilon, &mut rngs.explore)?;
        let out = env.step(&action)?;
        ret += out.reward;
        steps += 1;
        episode_transitions.push(Transition {
            state: state.clone(),
            action,
            reward: out.reward,
            next_state: out.next_state.clone(),
            goal: goal.clone(),
            done: out.success,
        });
        if out.done {
            success = out.success;
            break;
        }
        state = out.next_state;
    }

    for t in &episode_transitions {
        buffer.push(t.clone(), Priority::New)?;
    }
    if learner.cfg.variant.uses_her() {
        let traj = EpisodeTrajectory::new(episode_transitions)?;
        let gm = env.goal_mapping().clone();
        for t in relabel(&traj, learner.cfg.her_strategy, &gm, &mut rngs.her)? {
            buffer.push(t, Priority::New)?;
        }
    }

    let mut loss_sum = 0.0;
    let mut loss_count = 0;
    if buffer.len() >= learner.cfg.batch_size {
        for _ in 0..learner.cfg.updates_per_episode {
            if learner.cfg.variant.uses_per() {
                let (batch, ids, ws) = buffer.sample_prioritized(
                    learner.cfg.batch_size,
                    learner.train_steps(),
                    &mut rngs.replay,
                )?;
                let (loss, deltas) = learner.train_step(&batch, &ws)?;
                buffer.update_priorities(&ids, &deltas)?;
                loss_sum += loss;
            } else {
                let batch = buffer.sample_uniform(learner.cfg.batch_size, &mut rngs.replay)?;
                let ws = vec![1.0; batch.len()];
                let (loss, _) = learner.train_step(&batch, &ws)?;
                loss_sum += loss;
            }
            loss_count += 1;
        }
    }

    Ok(EpisodeResult {
        success,
        ret,
        steps,
        mean_loss: if loss_count > 0 { loss_sum / loss_count as f64 } else { 0.0 },
        epsilon,
    })
}

/// Greedy success rate over fresh episodes; no learning, no buffer writes.
pub fn evaluate(env: &mut dyn Env, net: &RBFQNet, episodes: usize, rng: &mut Rng) -> Result<f64> {
    assert!(episodes >= 1);
    let mut successes = 0;
    for _ in 0..episodes {
        let (mut state, goal) = env.reset(rng);
        loop {
            let (action, _) = net.greedy_action(&net_input(&state, &goal))?;
            let out = env.step(&action)?;
            if out.done {
                if out.success {
                    successes += 1;
                }
                break;
            }
            state = out.next_state;
        }
    }
    Ok(successes as f64 / episodes as f64)
}

/// An N=1 network whose single centroid tracks a proportional controller:
/// the location head is linear with weights gain*(goal - position), so the
/// greedy action is tanh-shaped pursuit of the goal. Solves PointReach
/// without any training; useful as an evaluation oracle.
pub fn scripted_reach_net(dim: usize, gain: f64) -> RBFQNet {
    use crate::nn::Activation;
    use crate::rbf::Norm;
    let mut rng = stream(0, Stream::Init);
    let mut net = RBFQNet::new(
        2 * dim,
        &vec![-1.0; dim],
        &vec![1.0; dim],
        1,
        5.0,
        Norm::L2,
        &[],
        Activation::Tanh,
        &mut rng,
    )
    .expect("valid scripted net");
    for v in net.loc_params.values_mut() {
        *v = 0.0;
    }
    for v in net.val_params.values_mut() {
        *v = 0.0;
    }
    let w = net.loc_params.block_mut("l0.w").unwrap();
    for k in 0..dim {
        w[k * 2 * dim + k] = -gain;
        w[k * 2 * dim + dim + k] = gain;
    }
    net
}
