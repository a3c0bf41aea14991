//! Desk-scale goal-conditioned sparse-reward environments.
//!
//! Four task families covering distinct dynamics regimes: a free point mass
//! (every state stable), a kinematic arm (goal via forward kinematics), a
//! falling lid (attractor at the goal), and a drawer whose grip can be lost
//! for good (durative contact).

use std::io::Write;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::her::{is_success, make_goal_mapping, GoalMapping};
use crate::rng::Rng;

pub const TASK_IDS: [&str; 5] = [
    "point_reach_2d",
    "point_reach_3d",
    "planar_arm_reach",
    "lid_attractor",
    "grip_drawer",
];

pub const DEFAULT_HORIZON: usize = 200;
pub const DT: f64 = 0.05;
pub const ARM_LINKS: [f64; 3] = [0.5, 0.4, 0.3];

/// Lid angle is measured from closed (the goal); fully open is PI.
/// Below the tipping angle gravity dominates and the lid falls shut;
/// above it the lid only creeps, so an agent push is required.
pub const LID_TIP: f64 = std::f64::consts::FRAC_PI_3;
pub const LID_FALL_RATE: f64 = -1.0;
pub const LID_CREEP_RATE: f64 = -0.1;

pub const DRAWER_MAX_EXT: f64 = 0.5;
pub const DRAWER_RELEASE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub id: &'static str,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub goal_dim: usize,
    pub horizon: usize,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOut {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

pub trait Env: Send {
    fn spec(&self) -> &EnvSpec;
    fn goal_mapping(&self) -> &GoalMapping;
    fn reset(&mut self, rng: &mut Rng) -> (Vec<f64>, Vec<f64>);
    fn step(&mut self, action: &[f64]) -> Result<StepOut>;

    fn achieved_goal(&self, state: &[f64]) -> Vec<f64> {
        self.goal_mapping().phi(state)
    }
    fn state(&self) -> &[f64];
    fn goal(&self) -> &[f64];
}

/// Episode bookkeeping shared by every environment.
#[derive(Debug)]
struct Core {
    spec: EnvSpec,
    gm: GoalMapping,
    state: Vec<f64>,
    goal: Vec<f64>,
    steps: usize,
    done: bool,
    live: bool,
}

impl Core {
    fn new(spec: EnvSpec) -> Self {
        let gm = make_goal_mapping(spec.id).expect("registered task");
        Core {
            spec,
            gm,
            state: Vec::new(),
            goal: Vec::new(),
            steps: 0,
            done: false,
            live: false,
        }
    }

    fn begin(&mut self, state: Vec<f64>, goal: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
        assert_eq!(state.len(), self.spec.state_dim);
        assert_eq!(goal.len(), self.spec.goal_dim);
        self.state = state.clone();
        self.goal = goal.clone();
        self.steps = 0;
        self.done = false;
        self.live = true;
        (state, goal)
    }

    fn clamp_action(&self, action: &[f64]) -> Result<Vec<f64>> {
        if action.len() != self.spec.action_dim {
            return Err(Error::Shape(format!(
                "action has {} entries, task {} takes {}",
                action.len(),
                self.spec.id,
                self.spec.action_dim
            )));
        }
        Ok(action
            .iter()
            .zip(self.spec.action_low.iter().zip(&self.spec.action_high))
            .map(|(a, (lo, hi))| a.clamp(*lo, *hi))
            .collect())
    }

    fn advance(&mut self, next_state: Vec<f64>) -> Result<StepOut> {
        if !self.live {
            return Err(Error::State("step before reset".to_string()));
        }
        if self.done {
            return Err(Error::State(format!(
                "step after episode end on {}; reset required",
                self.spec.id
            )));
        }
        self.steps += 1;
        let success = is_success(&next_state, &self.goal, &self.gm)?;
        let done = success || self.steps >= self.spec.horizon;
        self.done = done;
        self.state = next_state.clone();
        Ok(StepOut {
            next_state,
            reward: if success { 1.0 } else { 0.0 },
            done,
            success,
        })
    }
}

macro_rules! env_accessors {
    () => {
        fn spec(&self) -> &EnvSpec {
            &self.core.spec
        }
        fn goal_mapping(&self) -> &GoalMapping {
            &self.core.gm
        }
        fn state(&self) -> &[f64] {
            &self.core.state
        }
        fn goal(&self) -> &[f64] {
            &self.core.goal
        }
    };
}

/// Free point mass under velocity control in the unit box.
pub struct PointReach {
    core: Core,
    dim: usize,
}

impl PointReach {
    pub fn new(dim: usize) -> Self {
        assert!(dim == 2 || dim == 3);
        let id = if dim == 2 { "point_reach_2d" } else { "point_reach_3d" };
        PointReach {
            core: Core::new(EnvSpec {
                id,
                state_dim: dim,
                action_dim: dim,
                action_low: vec![-1.0; dim],
                action_high: vec![1.0; dim],
                goal_dim: dim,
                horizon: DEFAULT_HORIZON,
                dt: DT,
            }),
            dim,
        }
    }
}

impl Env for PointReach {
    env_accessors!();

    fn reset(&mut self, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
        let goal = (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        self.core.begin(vec![0.0; self.dim], goal)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOut> {
        let a = self.core.clamp_action(action)?;
        let next = self
            .core
            .state
            .iter()
            .zip(&a)
            .map(|(x, v)| (x + DT * v).clamp(-1.0, 1.0))
            .collect();
        self.core.advance(next)
    }
}

/// Three-link planar arm under joint-velocity control; the goal lives in
/// effector space. State is joint angles plus the effector position.
pub struct PlanarArmReach {
    core: Core,
}

fn arm_fk(angles: &[f64]) -> (f64, f64) {
    let mut acc = 0.0;
    let (mut x, mut y) = (0.0, 0.0);
    for (l, th) in ARM_LINKS.iter().zip(angles) {
        acc += th;
        x += l * acc.cos();
        y += l * acc.sin();
    }
    (x, y)
}

impl PlanarArmReach {
    pub fn new() -> Self {
        PlanarArmReach {
            core: Core::new(EnvSpec {
                id: "planar_arm_reach",
                state_dim: 5,
                action_dim: 3,
                action_low: vec![-1.0; 3],
                action_high: vec![1.0; 3],
                goal_dim: 2,
                horizon: DEFAULT_HORIZON,
                dt: DT,
            }),
        }
    }

    fn pack(angles: [f64; 3]) -> Vec<f64> {
        let (x, y) = arm_fk(&angles);
        vec![angles[0], angles[1], angles[2], x, y]
    }
}

impl Default for PlanarArmReach {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for PlanarArmReach {
    env_accessors!();

    fn reset(&mut self, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
        use std::f64::consts::PI;
        // Goals are forward kinematics of a random joint pose, so every
        // goal is reachable within the joint limits.
        let pose: Vec<f64> = (0..3).map(|_| rng.gen_range(-PI..PI)).collect();
        let (gx, gy) = arm_fk(&pose);
        self.core.begin(Self::pack([0.0, 0.0, 0.0]), vec![gx, gy])
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOut> {
        use std::f64::consts::PI;
        let a = self.core.clamp_action(action)?;
        let mut angles = [0.0; 3];
        for k in 0..3 {
            angles[k] = (self.core.state[k] + DT * a[k]).clamp(-PI, PI);
        }
        self.core.advance(Self::pack(angles))
    }
}

/// One hinge with a gravity attractor at the closed (goal) position.
pub struct LidAttractor {
    core: Core,
}

impl LidAttractor {
    pub fn new() -> Self {
        LidAttractor {
            core: Core::new(EnvSpec {
                id: "lid_attractor",
                state_dim: 1,
                action_dim: 1,
                action_low: vec![-1.0],
                action_high: vec![1.0],
                goal_dim: 1,
                horizon: DEFAULT_HORIZON,
                dt: DT,
            }),
        }
    }

    pub fn drift(theta: f64) -> f64 {
        if theta < LID_TIP {
            LID_FALL_RATE
        } else {
            LID_CREEP_RATE
        }
    }

    /// Starts an episode at an arbitrary angle (tests and the taxonomy
    /// report probe the attractor basin directly).
    pub fn reset_at(&mut self, theta: f64) -> (Vec<f64>, Vec<f64>) {
        self.core.begin(vec![theta.clamp(0.0, std::f64::consts::PI)], vec![0.0])
    }
}

impl Default for LidAttractor {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for LidAttractor {
    env_accessors!();

    fn reset(&mut self, _rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
        // Fully open, where only the slow creep acts.
        self.core.begin(vec![std::f64::consts::PI], vec![0.0])
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOut> {
        let a = self.core.clamp_action(action)?;
        let theta = self.core.state[0];
        let next = (theta + DT * (a[0] + Self::drift(theta))).clamp(0.0, std::f64::consts::PI);
        self.core.advance(vec![next])
    }
}

/// Prismatic drawer joint that moves only while the grip is engaged.
/// A grip command past the release threshold drops the handle for the
/// rest of the episode.
pub struct GripDrawer {
    core: Core,
}

impl GripDrawer {
    pub fn new() -> Self {
        GripDrawer {
            core: Core::new(EnvSpec {
                id: "grip_drawer",
                state_dim: 2,
                action_dim: 2,
                action_low: vec![-1.0; 2],
                action_high: vec![1.0; 2],
                goal_dim: 1,
                horizon: DEFAULT_HORIZON,
                dt: DT,
            }),
        }
    }
}

impl Default for GripDrawer {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for GripDrawer {
    env_accessors!();

    fn reset(&mut self, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
        // Grip starts engaged; goals keep clear of the closed position so
        // success always requires pulling.
        let goal = rng.gen_range(0.1..DRAWER_MAX_EXT);
        self.core.begin(vec![0.0, 1.0], vec![goal])
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOut> {
        let a = self.core.clamp_action(action)?;
        let ext = self.core.state[0];
        let mut grip = self.core.state[1];
        if grip == 1.0 && a[1] > DRAWER_RELEASE_THRESHOLD {
            grip = 0.0;
        }
        let next_ext = if grip == 1.0 {
            (ext + DT * a[0]).clamp(0.0, DRAWER_MAX_EXT)
        } else {
            ext
        };
        self.core.advance(vec![next_ext, grip])
    }
}

pub fn make_env(task_id: &str) -> Result<Box<dyn Env>> {
    match task_id {
        "point_reach_2d" => Ok(Box::new(PointReach::new(2))),
        "point_reach_3d" => Ok(Box::new(PointReach::new(3))),
        "planar_arm_reach" => Ok(Box::new(PlanarArmReach::new())),
        "lid_attractor" => Ok(Box::new(LidAttractor::new())),
        "grip_drawer" => Ok(Box::new(GripDrawer::new())),
        other => Err(Error::Config(format!(
            "unknown task '{other}', expected one of {}",
            TASK_IDS.join(", ")
        ))),
    }
}

/// Proportional controller that solves any PointReach instance; the
/// solvability oracle for tests and scripted evaluations.
pub fn scripted_point_policy(state: &[f64], goal: &[f64]) -> Vec<f64> {
    state
        .iter()
        .zip(goal)
        .map(|(x, g)| (10.0 * (g - x)).clamp(-1.0, 1.0))
        .collect()
}

/// Runs one episode and writes `step,s*,a*,reward,done` rows.
/// Returns (success, steps).
pub fn record_rollout<W: Write>(
    env: &mut dyn Env,
    mut policy: impl FnMut(&[f64], &[f64]) -> Vec<f64>,
    rng: &mut Rng,
    w: &mut W,
) -> Result<(bool, usize)> {
    let spec = env.spec().clone();
    let mut header = vec!["step".to_string()];
    header.extend((0..spec.state_dim).map(|i| format!("s{i}")));
    header.extend((0..spec.action_dim).map(|i| format!("a{i}")));
    header.push("reward".to_string());
    header.push("done".to_string());
    writeln!(w, "{}", header.join(","))?;

    let (mut state, goal) = env.reset(rng);
    let mut steps = 0;
    let success;
    loop {
        let action = policy(&state, &goal);
        let out = env.step(&action)?;
        let mut row = vec![steps.to_string()];
        row.extend(state.iter().map(|v| v.to_string()));
        row.extend(action.iter().map(|v| v.to_string()));
        row.push(out.reward.to_string());
        row.push((out.done as u8).to_string());
        writeln!(w, "{}", row.join(","))?;
        steps += 1;
        if out.done {
            success = out.success;
            break;
        }
        state = out.next_state;
    }
    Ok((success, steps))
}
