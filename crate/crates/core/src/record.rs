//! Per-trial time series collected by the runners.

use serde::{Deserialize, Serialize};

/// Cooperation counts of one IPD episode, split by whether the acting
/// agent's counterpart was a teammate. Each interaction contributes two
/// actions, one from each side.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoopTally {
    pub teammate_coop: u32,
    pub teammate_total: u32,
    pub other_coop: u32,
    pub other_total: u32,
}

impl CoopTally {
    pub fn add(&mut self, teammate: bool, cooperated: bool) {
        if teammate {
            self.teammate_total += 1;
            self.teammate_coop += cooperated as u32;
        } else {
            self.other_total += 1;
            self.other_coop += cooperated as u32;
        }
    }

    pub fn merge(&mut self, other: &CoopTally) {
        self.teammate_coop += other.teammate_coop;
        self.teammate_total += other.teammate_total;
        self.other_coop += other.other_coop;
        self.other_total += other.other_total;
    }

    pub fn total(&self) -> u32 {
        self.teammate_total + self.other_total
    }

    pub fn coop(&self) -> u32 {
        self.teammate_coop + self.other_coop
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct IpdRecord {
    pub structure: String,
    pub b: f64,
    pub c: f64,
    pub seed: u64,
    pub config_hash: String,
    /// Actions taken per episode (two per interaction).
    pub actions_per_episode: usize,
    /// Summed raw reward of the population, per episode.
    pub population_raw: Vec<f64>,
    /// Summed team reward of the population, per episode.
    pub population_team: Vec<f64>,
    pub tallies: Vec<CoopTally>,
    /// Cumulative raw and team reward of each agent over the trial.
    pub agent_raw_total: Vec<f64>,
    pub agent_team_total: Vec<f64>,
    /// Number of interactions each agent took part in.
    pub agent_interactions: Vec<u64>,
}

impl IpdRecord {
    pub fn episodes(&self) -> usize {
        self.tallies.len()
    }

    /// Mean raw payoff per action taken in each episode, on the `[-c, b]`
    /// scale of a single game.
    pub fn mean_payoff_series(&self) -> Vec<f64> {
        let per = self.actions_per_episode.max(1) as f64;
        self.population_raw.iter().map(|r| r / per).collect()
    }
}

/// Per-agent tallies of one Cleanup episode.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CleanupEpisodeStats {
    pub apples: Vec<u32>,
    pub cleans: Vec<u32>,
    pub punishes: Vec<u32>,
    pub raw_reward: Vec<f64>,
    pub team_reward: Vec<f64>,
    /// Environment-side counters, kept independently of the per-agent ones.
    pub apples_consumed: u32,
    pub clean_beams: u32,
    pub apples_spawned: u32,
    pub waste_spawned: u32,
}

impl CleanupEpisodeStats {
    pub fn new(n_agents: usize) -> Self {
        CleanupEpisodeStats {
            apples: vec![0; n_agents],
            cleans: vec![0; n_agents],
            punishes: vec![0; n_agents],
            raw_reward: vec![0.0; n_agents],
            team_reward: vec![0.0; n_agents],
            ..Default::default()
        }
    }

    pub fn population_reward(&self) -> f64 {
        self.raw_reward.iter().sum()
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CleanupRecord {
    pub structure: String,
    pub seed: u64,
    pub config_hash: String,
    pub episode_length: usize,
    pub episodes: Vec<CleanupEpisodeStats>,
}

impl CleanupRecord {
    pub fn population_reward_series(&self) -> Vec<f64> {
        self.episodes
            .iter()
            .map(CleanupEpisodeStats::population_reward)
            .collect()
    }
}
