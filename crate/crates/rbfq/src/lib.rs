//! RBF-DQN for continuous control: a Q-network whose action maximum is
//! read off a set of learned centroids, plus prioritized and hindsight
//! replay, a handful of small goal-reaching environments, and a training
//! harness around them.

pub mod agent;
pub mod checkpoint;
pub mod envs;
pub mod error;
pub mod exec;
pub mod her;
pub mod nn;
pub mod rbf;
pub mod replay;
pub mod rng;

pub use error::{Error, Result};
