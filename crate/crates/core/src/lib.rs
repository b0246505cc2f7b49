//! Team reward structures in multi-agent reinforcement learning: the team
//! partition and reward transform, an iterated prisoner's dilemma population
//! game, the Cleanup gridworld, learners, and the experiment harness.

pub mod cleanup;
pub mod error;
pub mod experiment;
pub mod incentive;
pub mod ipd;
pub mod learn;
pub mod metrics;
pub mod record;
pub mod team;

pub use error::{Error, Result};
pub use team::{parse_structure, PairingMode, RewardVector, TeamPartition};
