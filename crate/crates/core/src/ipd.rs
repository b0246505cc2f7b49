//! Iterated prisoner's dilemma played by a population split into teams.
//!
//! One episode is one pairing round. Each paired agent sees only the team of
//! its counterpart, both choose cooperate or defect, and every agent is paid
//! the team reward of its summed raw payoffs.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::team::{AgentId, EqualShare, PairingMode, RewardVector, TeamId, TeamPartition, TeamRewardFn};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Cooperate,
    Defect,
}

impl Action {
    pub const ALL: [Action; 2] = [Action::Cooperate, Action::Defect];

    pub fn index(self) -> usize {
        match self {
            Action::Cooperate => 0,
            Action::Defect => 1,
        }
    }

    pub fn from_index(i: usize) -> Action {
        if i == 0 {
            Action::Cooperate
        } else {
            Action::Defect
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Action::Cooperate => 'C',
            Action::Defect => 'D',
        }
    }
}

/// The counterpart's team id, the only thing an agent observes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TeamSignal(pub TeamId);

#[derive(Clone, Debug)]
pub struct IpdConfig {
    pub n_agents: usize,
    pub cost: f64,
    pub benefit: f64,
    pub partition: TeamPartition,
    pub pairing_mode: PairingMode,
    pub episodes: usize,
}

impl IpdConfig {
    pub fn new(
        partition: TeamPartition,
        benefit: f64,
        cost: f64,
        pairing_mode: PairingMode,
        episodes: usize,
    ) -> Result<Self> {
        check_payoffs(benefit, cost)?;
        if pairing_mode == PairingMode::UniformMatching && partition.num_agents() % 2 == 1 {
            return Err(Error::OddPopulation(partition.num_agents()));
        }
        if partition.num_agents() < 2 {
            return Err(Error::InvalidPartition("need at least two agents".into()));
        }
        Ok(IpdConfig {
            n_agents: partition.num_agents(),
            cost,
            benefit,
            partition,
            pairing_mode,
            episodes,
        })
    }
}

pub(crate) fn check_payoffs(b: f64, c: f64) -> Result<()> {
    if b.is_finite() && c.is_finite() && b > c && c > 0.0 {
        Ok(())
    } else {
        Err(Error::PayoffDomain { b, c })
    }
}

/// One prisoner's dilemma game between a focal agent and its counterpart.
#[derive(Clone, Debug, PartialEq)]
pub struct Interaction {
    pub focal: AgentId,
    pub counterpart: AgentId,
    pub action_focal: Action,
    pub action_counterpart: Action,
    pub payoff_focal: f64,
    pub payoff_counterpart: f64,
}

/// Payoffs of the donation game: cooperating costs `c` and hands the other
/// side `b`.
pub fn stage_payoff(a_i: Action, a_j: Action, b: f64, c: f64) -> (f64, f64) {
    use Action::*;
    match (a_i, a_j) {
        (Cooperate, Cooperate) => (b - c, b - c),
        (Cooperate, Defect) => (-c, b),
        (Defect, Cooperate) => (b, -c),
        (Defect, Defect) => (0.0, 0.0),
    }
}

/// Draws the interactions of one episode as `(focal, counterpart)` pairs.
pub fn sample_pairings<R: Rng + ?Sized>(
    partition: &TeamPartition,
    mode: PairingMode,
    rng: &mut R,
) -> Result<Vec<(AgentId, AgentId)>> {
    let n = partition.num_agents();
    if n < 2 {
        return Err(Error::InvalidPartition("need at least two agents".into()));
    }
    match mode {
        PairingMode::TeamFirst => {
            let k = partition.num_teams();
            let size = partition.team_size();
            let mut pairs = Vec::with_capacity(n);
            for focal in 0..n {
                let own = partition.team_index(focal);
                let team = if size == 1 {
                    // own-team draws are redrawn, i.e. uniform over the others
                    let t = rng.gen_range(0..k - 1);
                    if t >= own {
                        t + 1
                    } else {
                        t
                    }
                } else {
                    rng.gen_range(0..k)
                };
                let members = partition.members(team);
                let counterpart = if team == own {
                    let pos = members.iter().position(|&a| a == focal).expect("member of own team");
                    let j = rng.gen_range(0..size - 1);
                    members[if j >= pos { j + 1 } else { j }]
                } else {
                    members[rng.gen_range(0..size)]
                };
                pairs.push((focal, counterpart));
            }
            Ok(pairs)
        }
        PairingMode::UniformMatching => {
            if n % 2 == 1 {
                return Err(Error::OddPopulation(n));
            }
            let mut order: Vec<AgentId> = (0..n).collect();
            order.shuffle(rng);
            Ok(order.chunks_exact(2).map(|p| (p[0], p[1])).collect())
        }
    }
}

/// What `focal` learns about `counterpart`: its team, nothing else.
pub fn observe(_focal: AgentId, counterpart: AgentId, partition: &TeamPartition) -> TeamSignal {
    TeamSignal(partition.team_index(counterpart))
}

/// Per-agent action rule.
pub trait IpdPolicy {
    fn act(&mut self, agent: AgentId, signal: TeamSignal, rng: &mut dyn RngCore) -> Action;
}

impl<F> IpdPolicy for F
where
    F: FnMut(AgentId, TeamSignal, &mut dyn RngCore) -> Action,
{
    fn act(&mut self, agent: AgentId, signal: TeamSignal, rng: &mut dyn RngCore) -> Action {
        self(agent, signal, rng)
    }
}

/// Every agent plays the same fixed action.
pub struct Always(pub Action);

impl IpdPolicy for Always {
    fn act(&mut self, _: AgentId, _: TeamSignal, _: &mut dyn RngCore) -> Action {
        self.0
    }
}

/// One fixed action per agent.
pub struct FixedPerAgent(pub Vec<Action>);

impl IpdPolicy for FixedPerAgent {
    fn act(&mut self, agent: AgentId, _: TeamSignal, _: &mut dyn RngCore) -> Action {
        self.0[agent]
    }
}

#[derive(Clone, Debug)]
pub struct IpdEpisode {
    pub interactions: Vec<Interaction>,
    pub raw: RewardVector,
    pub team: RewardVector,
}

/// Plays one pairing round and returns the interactions with raw and team
/// rewards. Raw rewards sum each agent's payoffs over every interaction it
/// took part in, as focal or as counterpart.
pub fn run_episode<R: RngCore>(config: &IpdConfig, policy: &mut dyn IpdPolicy, rng: &mut R) -> Result<IpdEpisode> {
    run_episode_with(config, &EqualShare, policy, rng)
}

pub fn run_episode_with<R: RngCore>(
    config: &IpdConfig,
    rule: &dyn TeamRewardFn,
    policy: &mut dyn IpdPolicy,
    rng: &mut R,
) -> Result<IpdEpisode> {
    let partition = &config.partition;
    let pairs = sample_pairings(partition, config.pairing_mode, rng)?;
    let mut raw = vec![0.0; config.n_agents];
    let mut interactions = Vec::with_capacity(pairs.len());
    for (focal, counterpart) in pairs {
        let action_focal = policy.act(focal, observe(focal, counterpart, partition), rng);
        let action_counterpart = policy.act(counterpart, observe(counterpart, focal, partition), rng);
        let (payoff_focal, payoff_counterpart) =
            stage_payoff(action_focal, action_counterpart, config.benefit, config.cost);
        raw[focal] += payoff_focal;
        raw[counterpart] += payoff_counterpart;
        interactions.push(Interaction {
            focal,
            counterpart,
            action_focal,
            action_counterpart,
            payoff_focal,
            payoff_counterpart,
        });
    }
    let mut team = vec![0.0; config.n_agents];
    rule.transform(partition, &raw, &mut team);
    Ok(IpdEpisode {
        interactions,
        raw: RewardVector(raw),
        team: RewardVector(team),
    })
}

pub const INTERACTION_LOG_HEADER: [&str; 8] = [
    "episode",
    "focal",
    "counterpart",
    "signal",
    "action_focal",
    "action_counterpart",
    "raw_payoff",
    "team_reward",
];

/// Writes sampled episodes as CSV rows, one per interaction, from the focal
/// agent's side.
pub struct InteractionLog<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> InteractionLog<W> {
    pub fn new(inner: W) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(inner);
        writer.write_record(INTERACTION_LOG_HEADER)?;
        Ok(InteractionLog { writer })
    }

    pub fn write_episode(&mut self, episode: usize, partition: &TeamPartition, ep: &IpdEpisode) -> Result<()> {
        for it in &ep.interactions {
            self.writer.write_record([
                episode.to_string(),
                it.focal.to_string(),
                it.counterpart.to_string(),
                partition.team_index(it.counterpart).to_string(),
                it.action_focal.as_char().to_string(),
                it.action_counterpart.as_char().to_string(),
                it.payoff_focal.to_string(),
                ep.team[it.focal].to_string(),
            ])?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.writer.flush().map_err(|e| Error::io("interaction log", e))?;
        self.writer
            .into_inner()
            .map_err(|e| Error::io("interaction log", e.into_error()))
    }
}
