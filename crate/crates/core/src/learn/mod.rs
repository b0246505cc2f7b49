//! Learners: tabular Q-learning for the dilemma and PPO for Cleanup.

pub mod gradcheck;
pub mod net;
pub mod ppo;
pub mod qtable;

pub use net::{Features, PolicyValueNet};
pub use ppo::{PpoConfig, PpoLearner};
pub use qtable::{q_select, q_update, EpsilonSchedule, QParams, QTable, Transition};
