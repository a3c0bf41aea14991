//! Hindsight goal relabeling: trajectories are replayed against goals the
//! agent actually achieved, under the final and future strategies.

use rand::Rng as _;

use crate::envs;
use crate::error::{Error, Result};
use crate::replay::Transition;
use crate::rng::Rng;

pub const DEFAULT_TOLERANCE: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
enum Phi {
    /// Goal is a contiguous slice of the state vector.
    Slice { start: usize, len: usize },
    /// Goal is the planar forward-kinematic tip position of a chain whose
    /// joint angles are the leading state entries.
    PlanarFk { links: Vec<f64> },
}

/// Task goal projection plus the epsilon-ball success tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalMapping {
    phi: Phi,
    pub goal_dim: usize,
    pub tolerance: f64,
}

impl GoalMapping {
    pub fn slice(start: usize, len: usize, tolerance: f64) -> Self {
        assert!(len > 0 && tolerance > 0.0);
        GoalMapping {
            phi: Phi::Slice { start, len },
            goal_dim: len,
            tolerance,
        }
    }

    pub fn planar_fk(links: &[f64], tolerance: f64) -> Self {
        assert!(!links.is_empty() && tolerance > 0.0);
        GoalMapping {
            phi: Phi::PlanarFk {
                links: links.to_vec(),
            },
            goal_dim: 2,
            tolerance,
        }
    }

    pub fn phi(&self, s: &[f64]) -> Vec<f64> {
        match &self.phi {
            Phi::Slice { start, len } => {
                assert!(start + len <= s.len(), "state too short for goal slice");
                s[*start..start + len].to_vec()
            }
            Phi::PlanarFk { links } => {
                assert!(links.len() <= s.len(), "state too short for joint angles");
                let mut acc = 0.0;
                let (mut x, mut y) = (0.0, 0.0);
                for (i, l) in links.iter().enumerate() {
                    acc += s[i];
                    x += l * acc.cos();
                    y += l * acc.sin();
                }
                vec![x, y]
            }
        }
    }
}

/// True iff the achieved goal lies within the epsilon ball of `g`,
/// boundary inclusive. Compared in squared distance so that a distance
/// exactly equal to the tolerance never flips on the sqrt rounding.
pub fn is_success(s: &[f64], g: &[f64], gm: &GoalMapping) -> Result<bool> {
    if g.len() != gm.goal_dim {
        return Err(Error::Shape(format!(
            "goal has {} entries, mapping produces {}",
            g.len(),
            gm.goal_dim
        )));
    }
    let achieved = gm.phi(s);
    let d2: f64 = achieved.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(d2 <= gm.tolerance * gm.tolerance)
}

/// A completed episode's transitions, all sharing one original goal.
#[derive(Debug, Clone)]
pub struct EpisodeTrajectory {
    transitions: Vec<Transition>,
}

impl EpisodeTrajectory {
    /// Validates chaining (each next_state is the following state), a single
    /// shared goal, and that only the final transition may be terminal.
    pub fn new(transitions: Vec<Transition>) -> Result<Self> {
        if transitions.is_empty() {
            return Err(Error::State("empty trajectory".to_string()));
        }
        for (t, pair) in transitions.windows(2).enumerate() {
            if pair[0].next_state != pair[1].state {
                return Err(Error::State(format!(
                    "trajectory broken between steps {t} and {}",
                    t + 1
                )));
            }
            if pair[0].done {
                return Err(Error::State(format!("non-final done flag at step {t}")));
            }
            if pair[0].goal != pair[1].goal {
                return Err(Error::State(format!("goal changes at step {}", t + 1)));
            }
        }
        Ok(EpisodeTrajectory { transitions })
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HERStrategy {
    Final,
    Future { k: usize },
    FinalAndFuture { k: usize },
}

impl Default for HERStrategy {
    fn default() -> Self {
        HERStrategy::FinalAndFuture { k: 4 }
    }
}

impl HERStrategy {
    pub fn validate(&self) -> Result<()> {
        match self {
            HERStrategy::Future { k } | HERStrategy::FinalAndFuture { k } if *k == 0 => Err(
                Error::Config("future strategy needs k >= 1".to_string()),
            ),
            _ => Ok(()),
        }
    }

    /// New transitions produced per original step.
    pub fn copies_per_step(&self) -> usize {
        match self {
            HERStrategy::Final => 1,
            HERStrategy::Future { k } => *k,
            HERStrategy::FinalAndFuture { k } => k + 1,
        }
    }
}

fn relabel_one(t: &Transition, goal: &[f64], gm: &GoalMapping) -> Result<Transition> {
    let success = is_success(&t.next_state, goal, gm)?;
    Ok(Transition {
        state: t.state.clone(),
        action: t.action.clone(),
        reward: if success { 1.0 } else { 0.0 },
        next_state: t.next_state.clone(),
        goal: goal.to_vec(),
        done: success,
    })
}

/// Hindsight copies of a trajectory; the originals are left untouched and
/// are not re-emitted. Future goals are drawn uniformly with replacement
/// from the step's own suffix {t, ..., T-1}.
pub fn relabel(
    traj: &EpisodeTrajectory,
    strat: HERStrategy,
    gm: &GoalMapping,
    rng: &mut Rng,
) -> Result<Vec<Transition>> {
    strat.validate()?;
    let ts = traj.transitions();
    let n = ts.len();
    let mut out = Vec::with_capacity(n * strat.copies_per_step());

    if matches!(strat, HERStrategy::Final | HERStrategy::FinalAndFuture { .. }) {
        let final_goal = gm.phi(&ts[n - 1].next_state);
        for t in ts {
            out.push(relabel_one(t, &final_goal, gm)?);
        }
    }
    if let HERStrategy::Future { k } | HERStrategy::FinalAndFuture { k } = strat {
        for (t_idx, t) in ts.iter().enumerate() {
            for _ in 0..k {
                let j = rng.gen_range(t_idx..n);
                let goal = gm.phi(&ts[j].next_state);
                out.push(relabel_one(t, &goal, gm)?);
            }
        }
    }
    Ok(out)
}

/// The canonical goal projection for a registered task.
pub fn make_goal_mapping(task_id: &str) -> Result<GoalMapping> {
    match task_id {
        "point_reach_2d" => Ok(GoalMapping::slice(0, 2, DEFAULT_TOLERANCE)),
        "point_reach_3d" => Ok(GoalMapping::slice(0, 3, DEFAULT_TOLERANCE)),
        "planar_arm_reach" => Ok(GoalMapping::planar_fk(&envs::ARM_LINKS, DEFAULT_TOLERANCE)),
        "lid_attractor" => Ok(GoalMapping::slice(0, 1, DEFAULT_TOLERANCE)),
        "grip_drawer" => Ok(GoalMapping::slice(0, 1, DEFAULT_TOLERANCE)),
        other => Err(Error::Config(format!(
            "unknown task '{other}', expected one of {}",
            envs::TASK_IDS.join(", ")
        ))),
    }
}
